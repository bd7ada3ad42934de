//! Config-driven experiment pipeline.
//!
//! `run_experiment` executes estimate-risk, calibrate-sigma, train and
//! evaluate-mia in order, writing one artifact set per run:
//!
//! * `risk_profile.json`, `adversary_metrics.csv`
//! * `calibration.json`
//! * `training_log.csv`, `model.lmdp`
//! * `attack_report.json`, `attack_layers.csv`
//! * `run_manifest.json`
//!
//! A failed run leaves the artifacts written so far plus a `.partial` marker
//! naming the failed stage. Wall-clock timestamps appear only inside the
//! manifest's `metadata` block; everything else is a pure function of the
//! config and seed.

use serde::Serialize;
use std::path::{Path, PathBuf};

use crate::accountant::epsilon_for;
use crate::config::{DatasetConfig, ExperimentConfig};
use crate::data::{accuracy, generate_synthetic, load_idx, shuffled_split, Dataset};
use crate::error::{Error, Result};
use crate::mia::{attack_target, AttackReport, RankedMethod};
use crate::model_io::save_model;
use crate::nn::LayeredModel;
use crate::risk::{estimate_risk_profile, LayerAdversaryMetrics, RiskEstimate, RiskProfile};
use crate::seed;
use crate::trainer::{train, IterationLog, TrainOutcome};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const PARTIAL_MARKER: &str = ".partial";

/// Fixed artifact locations inside a run directory.
#[derive(Debug, Clone)]
pub struct ArtifactPaths {
    pub out_dir: PathBuf,
    pub risk_profile: PathBuf,
    pub adversary_metrics: PathBuf,
    pub calibration: PathBuf,
    pub training_log: PathBuf,
    pub model: PathBuf,
    pub attack_report: PathBuf,
    pub attack_layers: PathBuf,
    pub manifest: PathBuf,
}

impl ArtifactPaths {
    pub fn new(out_dir: &Path) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
            risk_profile: out_dir.join("risk_profile.json"),
            adversary_metrics: out_dir.join("adversary_metrics.csv"),
            calibration: out_dir.join("calibration.json"),
            training_log: out_dir.join("training_log.csv"),
            model: out_dir.join("model.lmdp"),
            attack_report: out_dir.join("attack_report.json"),
            attack_layers: out_dir.join("attack_layers.csv"),
            manifest: out_dir.join("run_manifest.json"),
        }
    }
}

/// The three data pools of one run: private training data (members), a
/// held-out test pool (non-members) and the public shadow pool.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub shadow: Dataset,
}

/// Builds the data pools from the config, all seeded from the master seed.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    match &cfg.dataset {
        DatasetConfig::Synthetic {
            spec,
            test_fraction,
        } => {
            let private =
                generate_synthetic(spec, seed::derive_seed(cfg.seed, "data/private"))?;
            let test_count = ((private.len() as f64) * test_fraction).floor() as usize;
            let train_count = private.len() - test_count;
            let (train, test) = shuffled_split(
                &private,
                train_count,
                seed::derive_seed(cfg.seed, "data/split"),
            )?;
            let shadow_spec = cfg.shadow_dataset.as_ref().unwrap_or(spec);
            let shadow =
                generate_synthetic(shadow_spec, seed::derive_seed(cfg.seed, "data/shadow"))?;
            Ok(PreparedData {
                train,
                test,
                shadow,
            })
        }
        DatasetConfig::Idx {
            images,
            labels,
            test_fraction,
            shadow_fraction,
            subsample,
        } => {
            let full = load_idx(images, labels)?;
            let pool = match subsample {
                Some(k) if *k < full.len() => {
                    shuffled_split(&full, *k, seed::derive_seed(cfg.seed, "data/subsample"))?.0
                }
                _ => full,
            };
            let shadow_count = ((pool.len() as f64) * shadow_fraction).floor() as usize;
            let (shadow, rest) = shuffled_split(
                &pool,
                shadow_count.max(1),
                seed::derive_seed(cfg.seed, "data/shadow-split"),
            )?;
            let test_count = ((pool.len() as f64) * test_fraction).floor() as usize;
            let (test, train) = shuffled_split(
                &rest,
                test_count.max(1).min(rest.len().saturating_sub(1)),
                seed::derive_seed(cfg.seed, "data/test-split"),
            )?;
            Ok(PreparedData {
                train,
                test,
                shadow,
            })
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| {
        Error::format(path.display().to_string(), format!("csv open failed: {}", e))
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path.display().to_string(), format!("csv write failed: {}", e))
}

/// `training_log.csv`, header frozen at format version 1.
pub fn write_training_log(path: &Path, logs: &[IterationLog]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "batch_size", "bias_norm", "grad_norm", "test_acc"])
        .map_err(|e| csv_err(path, e))?;
    for log in logs {
        let test_acc = log.test_acc.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            log.t.to_string(),
            log.batch_size.to_string(),
            log.bias_norm.to_string(),
            log.grad_norm.to_string(),
            test_acc,
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// `adversary_metrics.csv`, header frozen at format version 1.
pub fn write_adversary_metrics(path: &Path, metrics: &[LayerAdversaryMetrics]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["layer", "error_rate", "member_fraction", "rows"])
        .map_err(|e| csv_err(path, e))?;
    for m in metrics {
        w.write_record([
            m.layer.to_string(),
            m.error_rate.to_string(),
            m.member_fraction.to_string(),
            m.rows.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// `attack_layers.csv`: one row per (method, layer), header frozen.
pub fn write_attack_layers(path: &Path, entries: &[(String, &AttackReport)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["method", "layer", "accuracy"])
        .map_err(|e| csv_err(path, e))?;
    for (method, report) in entries {
        for (l, acc) in report.per_layer_accuracy.iter().enumerate() {
            w.write_record([method.clone(), (l + 1).to_string(), acc.to_string()])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// `ranking.csv` for multi-method comparisons, header frozen.
pub fn write_ranking(path: &Path, ranked: &[RankedMethod]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["method", "peak_accuracy", "peak_layer", "best"])
        .map_err(|e| csv_err(path, e))?;
    for r in ranked {
        w.write_record([
            r.method.clone(),
            r.peak_accuracy.to_string(),
            r.peak_layer.to_string(),
            r.best.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Noise calibration record.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub sigma: f64,
    /// Accounted epsilon when training runs at this sigma for the configured
    /// iteration count; `null` when noise is disabled.
    pub epsilon_at_sigma: Option<f64>,
    pub overridden: bool,
}

/// Runs the risk-estimation stage and writes its artifacts.
pub fn stage_estimate_risk(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    paths: &ArtifactPaths,
) -> Result<RiskEstimate> {
    let specs = cfg
        .model
        .build_specs(data.shadow.dims(), data.shadow.classes())?;
    let mut init_rng = seed::derive_rng(cfg.seed, "risk/shadow-init");
    let shadow_model = LayeredModel::init_random(specs, &mut init_rng)?;
    let shadow_cfg = cfg.shadow.to_shadow_config(cfg.seed);
    let estimate = estimate_risk_profile(&shadow_model, &data.shadow, &shadow_cfg)?;
    write_json(&paths.risk_profile, &estimate.profile)?;
    write_adversary_metrics(&paths.adversary_metrics, &estimate.metrics)?;
    Ok(estimate)
}

/// Runs noise calibration and writes `calibration.json`.
pub fn stage_calibrate(cfg: &ExperimentConfig, paths: &ArtifactPaths) -> Result<CalibrationReport> {
    let train_cfg = cfg.train.to_train_config(cfg.seed);
    let report = match train_cfg.sigma_override {
        Some(sigma) => CalibrationReport {
            sigma,
            epsilon_at_sigma: if sigma > 0.0 {
                Some(epsilon_for(
                    train_cfg.privacy.q,
                    sigma,
                    train_cfg.privacy.iterations,
                    train_cfg.privacy.delta,
                )?)
            } else {
                None
            },
            overridden: true,
        },
        None => {
            let sigma = crate::accountant::calibrate_sigma(&train_cfg.privacy)?;
            CalibrationReport {
                sigma,
                epsilon_at_sigma: Some(epsilon_for(
                    train_cfg.privacy.q,
                    sigma,
                    train_cfg.privacy.iterations,
                    train_cfg.privacy.delta,
                )?),
                overridden: false,
            }
        }
    };
    write_json(&paths.calibration, &report)?;
    Ok(report)
}

/// Runs private training and writes `training_log.csv` and `model.lmdp`.
pub fn stage_train(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    risks: &RiskProfile,
    paths: &ArtifactPaths,
) -> Result<TrainOutcome> {
    let specs = cfg
        .model
        .build_specs(data.train.dims(), data.train.classes())?;
    let mut init_rng = seed::derive_rng(cfg.seed, "train/model-init");
    let model = LayeredModel::init_random(specs, &mut init_rng)?;
    let train_cfg = cfg.train.to_train_config(cfg.seed);
    let outcome = train(&model, &data.train, Some(&data.test), &train_cfg, Some(risks))?;
    write_training_log(&paths.training_log, &outcome.logs)?;
    save_model(&outcome.model, &paths.model)?;
    Ok(outcome)
}

/// Attacks the trained model and writes `attack_report.json` and
/// `attack_layers.csv`.
pub fn stage_evaluate(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    model: &LayeredModel,
    paths: &ArtifactPaths,
) -> Result<AttackReport> {
    let report = attack_target(
        model,
        &data.train,
        &data.test,
        &cfg.mia,
        seed::derive_seed(cfg.seed, "mia/attack"),
    )?;
    write_json(&paths.attack_report, &report)?;
    let method = cfg.train.method.name().to_string();
    write_attack_layers(&paths.attack_layers, &[(method, &report)])?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
struct ManifestMetadata {
    created_unix: u64,
    tool_version: &'static str,
}

#[derive(Debug, Clone, Serialize)]
struct ArtifactNames {
    risk_profile: &'static str,
    adversary_metrics: &'static str,
    calibration: &'static str,
    training_log: &'static str,
    model: &'static str,
    attack_report: &'static str,
    attack_layers: &'static str,
}

#[derive(Debug, Clone, Serialize)]
struct RunManifest<'a> {
    format_version: u32,
    metadata: ManifestMetadata,
    config: &'a ExperimentConfig,
    sigma: f64,
    accounted_epsilon: Option<f64>,
    accountant_order: Option<u32>,
    steps_accounted: u64,
    risk_profile: Option<&'a [f64]>,
    peak_attack_accuracy: Option<f64>,
    peak_attack_layer: Option<usize>,
    final_test_accuracy: Option<f64>,
    shadow_train_accuracy: Option<f64>,
    attack_train_fraction: f64,
    artifacts: ArtifactNames,
}

/// Stage results feeding the manifest; fields are absent for stages a
/// standalone subcommand did not run.
#[derive(Debug, Clone, Default)]
pub struct ManifestInputs<'a> {
    pub sigma: f64,
    pub accounted_epsilon: Option<f64>,
    pub accountant_order: Option<u32>,
    pub steps_accounted: u64,
    pub risk_profile: Option<&'a [f64]>,
    pub attack: Option<&'a AttackReport>,
    pub final_test_accuracy: Option<f64>,
    pub shadow_train_accuracy: Option<f64>,
}

/// Writes `run_manifest.json`: config echo, calibrated noise, accounted
/// epsilon and whatever stage results are available.
pub fn write_manifest(
    paths: &ArtifactPaths,
    cfg: &ExperimentConfig,
    inputs: &ManifestInputs<'_>,
) -> Result<()> {
    let manifest = RunManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        metadata: ManifestMetadata {
            created_unix: unix_now(),
            tool_version: env!("CARGO_PKG_VERSION"),
        },
        config: cfg,
        sigma: inputs.sigma,
        accounted_epsilon: inputs.accounted_epsilon,
        accountant_order: inputs.accountant_order,
        steps_accounted: inputs.steps_accounted,
        risk_profile: inputs.risk_profile,
        peak_attack_accuracy: inputs.attack.map(|a| a.peak_accuracy),
        peak_attack_layer: inputs.attack.map(|a| a.peak_layer),
        final_test_accuracy: inputs.final_test_accuracy,
        shadow_train_accuracy: inputs.shadow_train_accuracy,
        attack_train_fraction: cfg.mia.train_fraction,
        artifacts: ArtifactNames {
            risk_profile: "risk_profile.json",
            adversary_metrics: "adversary_metrics.csv",
            calibration: "calibration.json",
            training_log: "training_log.csv",
            model: "model.lmdp",
            attack_report: "attack_report.json",
            attack_layers: "attack_layers.csv",
        },
    };
    write_json(&paths.manifest, &manifest)
}

/// Everything a finished pipeline run reports back to the caller.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub sigma: f64,
    pub accounted_epsilon: f64,
    pub accountant_order: Option<u32>,
    pub risk: RiskProfile,
    pub attack: AttackReport,
    pub final_test_accuracy: f64,
    pub paths: ArtifactPaths,
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Full pipeline: estimate-risk, calibrate-sigma, train, evaluate-mia, then
/// the manifest. On failure the artifacts produced so far stay in place and
/// a `.partial` marker names the failed stage.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let marker = out_dir.join(PARTIAL_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(marker.display().to_string(), e))?;
    }
    match run_stages(cfg, out_dir) {
        Ok(summary) => Ok(summary),
        Err(e) => {
            let stage = e.stage().unwrap_or("unknown");
            // best effort: the marker itself must not mask the real error
            let _ = std::fs::write(&marker, format!("{}\n", stage));
            Err(e)
        }
    }
}

fn run_stages(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    let paths = ArtifactPaths::new(out_dir);
    let data = prepare_data(cfg).map_err(|e| e.in_stage("prepare-data"))?;
    let estimate =
        stage_estimate_risk(cfg, &data, &paths).map_err(|e| e.in_stage("estimate-risk"))?;
    let calibration = stage_calibrate(cfg, &paths).map_err(|e| e.in_stage("calibrate-sigma"))?;
    let outcome =
        stage_train(cfg, &data, &estimate.profile, &paths).map_err(|e| e.in_stage("train"))?;
    let attack =
        stage_evaluate(cfg, &data, &outcome.model, &paths).map_err(|e| e.in_stage("evaluate-mia"))?;
    let final_test_accuracy =
        accuracy(&outcome.model, &data.test).map_err(|e| e.in_stage("evaluate-mia"))?;

    debug_assert_eq!(calibration.sigma, outcome.sigma);
    write_manifest(
        &paths,
        cfg,
        &ManifestInputs {
            sigma: outcome.sigma,
            accounted_epsilon: if outcome.reported_epsilon.is_finite() {
                Some(outcome.reported_epsilon)
            } else {
                None
            },
            accountant_order: outcome.accountant_order,
            steps_accounted: outcome.steps_accounted,
            risk_profile: Some(estimate.profile.rates()),
            attack: Some(&attack),
            final_test_accuracy: Some(final_test_accuracy),
            shadow_train_accuracy: Some(estimate.shadow_train_accuracy),
        },
    )
    .map_err(|e| e.in_stage("manifest"))?;

    Ok(RunSummary {
        sigma: outcome.sigma,
        accounted_epsilon: outcome.reported_epsilon,
        accountant_order: outcome.accountant_order,
        risk: estimate.profile,
        attack,
        final_test_accuracy,
        paths,
    })
}

/// Which hyperparameter an ablation sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblateParam {
    Epsilon,
    Clip,
    Emphasis,
}

impl std::str::FromStr for AblateParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epsilon" | "eps" => Ok(AblateParam::Epsilon),
            "c" | "clip" => Ok(AblateParam::Clip),
            "r" | "emphasis" => Ok(AblateParam::Emphasis),
            other => Err(Error::InvalidConfig(format!(
                "unknown ablation parameter '{}'; use epsilon, clip or r",
                other
            ))),
        }
    }
}

impl AblateParam {
    pub fn name(&self) -> &'static str {
        match self {
            AblateParam::Epsilon => "epsilon",
            AblateParam::Clip => "clip",
            AblateParam::Emphasis => "r",
        }
    }

    fn apply(&self, cfg: &mut ExperimentConfig, value: f64) -> Result<()> {
        use crate::clip::ClipMethod;
        use crate::trainer::WeightScheme;
        match self {
            AblateParam::Epsilon => cfg.train.epsilon = value,
            AblateParam::Clip => match &mut cfg.train.method {
                ClipMethod::Standard { c }
                | ClipMethod::Psac { c, .. }
                | ClipMethod::Layerwise { c } => *c = value,
                ClipMethod::AutoS { .. } => {
                    return Err(Error::InvalidConfig(
                        "auto_s has no clipping threshold to ablate".into(),
                    ))
                }
            },
            AblateParam::Emphasis => match &mut cfg.train.weight_scheme {
                WeightScheme::Heuristic { emphasis } => *emphasis = value,
                _ => {
                    return Err(Error::InvalidConfig(
                        "emphasis ablation needs the heuristic weight scheme".into(),
                    ))
                }
            },
        }
        Ok(())
    }
}

/// One row of the sweep summary.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub param: String,
    pub value: f64,
    pub peak_accuracy: f64,
    pub peak_layer: usize,
    pub final_test_accuracy: f64,
    pub accounted_epsilon: Option<f64>,
    pub sigma: f64,
    pub dir: String,
}

/// Runs the full pipeline once per value, each in its own subdirectory, and
/// writes `ablation_summary.csv` at the sweep root.
pub fn ablate(
    cfg: &ExperimentConfig,
    param: AblateParam,
    values: &[f64],
    out_dir: &Path,
) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one value".into()));
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let mut variant = cfg.clone();
        param.apply(&mut variant, *value)?;
        let sub = out_dir.join(format!("{}-{}", param.name(), value));
        let summary = run_experiment(&variant, &sub)?;
        rows.push(AblationRow {
            param: param.name().to_string(),
            value: *value,
            peak_accuracy: summary.attack.peak_accuracy,
            peak_layer: summary.attack.peak_layer,
            final_test_accuracy: summary.final_test_accuracy,
            accounted_epsilon: if summary.accounted_epsilon.is_finite() {
                Some(summary.accounted_epsilon)
            } else {
                None
            },
            sigma: summary.sigma,
            dir: sub
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        });
    }
    let summary_path = out_dir.join("ablation_summary.csv");
    let mut w = csv_writer(&summary_path)?;
    w.write_record([
        "param",
        "value",
        "peak_accuracy",
        "peak_layer",
        "final_test_accuracy",
        "accounted_epsilon",
        "sigma",
        "dir",
    ])
    .map_err(|e| csv_err(&summary_path, e))?;
    for r in &rows {
        w.write_record([
            r.param.clone(),
            r.value.to_string(),
            r.peak_accuracy.to_string(),
            r.peak_layer.to_string(),
            r.final_test_accuracy.to_string(),
            r.accounted_epsilon.map(|v| v.to_string()).unwrap_or_default(),
            r.sigma.to_string(),
            r.dir.clone(),
        ])
        .map_err(|e| csv_err(&summary_path, e))?;
    }
    w.flush()
        .map_err(|e| Error::io(summary_path.display().to_string(), e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    #[test]
    fn smoke_pipeline_produces_all_artifacts() {
        let cfg = preset("desk-smoke").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(&cfg, dir.path()).unwrap();
        let paths = ArtifactPaths::new(dir.path());
        for p in [
            &paths.risk_profile,
            &paths.adversary_metrics,
            &paths.calibration,
            &paths.training_log,
            &paths.model,
            &paths.attack_report,
            &paths.attack_layers,
            &paths.manifest,
        ] {
            assert!(p.exists(), "missing artifact {}", p.display());
        }
        assert!(!dir.path().join(PARTIAL_MARKER).exists());
        assert!(summary.accounted_epsilon <= cfg.train.epsilon);
        assert!(summary.sigma >= 0.3);
        assert_eq!(summary.risk.len(), cfg.model.layer_count());
        assert_eq!(
            summary.attack.per_layer_accuracy.len(),
            cfg.model.layer_count()
        );
        // frozen headers
        let log = std::fs::read_to_string(&paths.training_log).unwrap();
        assert!(log.starts_with("t,batch_size,bias_norm,grad_norm,test_acc\n"));
        let metrics = std::fs::read_to_string(&paths.adversary_metrics).unwrap();
        assert!(metrics.starts_with("layer,error_rate,member_fraction,rows\n"));
        let layers = std::fs::read_to_string(&paths.attack_layers).unwrap();
        assert!(layers.starts_with("method,layer,accuracy\n"));
    }

    #[test]
    fn failed_stage_leaves_a_partial_marker() {
        let mut cfg = preset("desk-smoke").unwrap();
        // unreachable budget: calibration must fail after risk estimation
        cfg.train.epsilon = 1e-6;
        cfg.train.iterations = 10_000;
        let dir = tempfile::tempdir().unwrap();
        let err = run_experiment(&cfg, dir.path()).unwrap_err();
        assert_eq!(err.stage(), Some("calibrate-sigma"));
        let marker = dir.path().join(PARTIAL_MARKER);
        assert!(marker.exists());
        assert_eq!(
            std::fs::read_to_string(marker).unwrap().trim(),
            "calibrate-sigma"
        );
        // earlier artifacts were retained
        assert!(dir.path().join("risk_profile.json").exists());
        assert!(!dir.path().join("run_manifest.json").exists());
    }

    #[test]
    fn ablation_sweep_writes_one_report_per_value() {
        let mut cfg = preset("desk-smoke").unwrap();
        // keep the sweep fast
        cfg.train.iterations = 20;
        cfg.shadow.epochs = 8;
        let dir = tempfile::tempdir().unwrap();
        let rows = ablate(&cfg, AblateParam::Emphasis, &[1.0, 3.0], dir.path()).unwrap();
        assert_eq!(rows.len(), 2);
        for value in ["1", "3"] {
            let sub = dir.path().join(format!("r-{}", value));
            assert!(sub.join("attack_report.json").exists());
        }
        assert!(dir.path().join("ablation_summary.csv").exists());
        let summary = std::fs::read_to_string(dir.path().join("ablation_summary.csv")).unwrap();
        assert!(summary.starts_with(
            "param,value,peak_accuracy,peak_layer,final_test_accuracy,accounted_epsilon,sigma,dir\n"
        ));
    }
}
