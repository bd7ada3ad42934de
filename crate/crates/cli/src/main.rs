//! `lmdp` — experiment front end for the layer-wise MIA-risk-aware DP-SGD
//! toolkit.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use lmdp_core::config::{preset, preset_names, ExperimentConfig};
use lmdp_core::data::accuracy;
use lmdp_core::experiment::{
    ablate, prepare_data, run_experiment, stage_calibrate, stage_estimate_risk, stage_train,
    write_attack_layers, write_manifest, write_ranking, AblateParam, ArtifactPaths, ManifestInputs,
};
use lmdp_core::mia::{attack_target, compare_methods};
use lmdp_core::model_io::load_model;
use lmdp_core::risk::RiskProfile;
use lmdp_core::seed;

#[derive(Parser)]
#[command(
    name = "lmdp",
    about = "Layer-wise MIA-risk-aware differentially private training",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to an experiment config JSON document.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a built-in preset (see `lmdp presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), None) => ExperimentConfig::from_path(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            (None, Some(name)) => preset(name)?,
            (None, None) => bail!("pass --config <path> or --preset <name>"),
            (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        for warning in cfg.validate()? {
            eprintln!("warning: {}", warning);
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline: estimate-risk, calibrate-sigma, train,
    /// evaluate-mia.
    Run(ConfigArgs),
    /// Estimate per-layer membership risk with a shadow model.
    EstimateRisk(ConfigArgs),
    /// Calibrate the noise multiplier for the configured budget.
    CalibrateSigma(ConfigArgs),
    /// Train privately; needs a risk profile for the heuristic weight scheme.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
        /// Risk profile JSON; defaults to <out>/risk_profile.json.
        #[arg(long)]
        risks: Option<PathBuf>,
    },
    /// Attack one or more trained models at the IR level.
    EvaluateMia {
        #[command(flatten)]
        common: ConfigArgs,
        /// Model container path; repeat to compare methods.
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        /// Label per model (defaults to the file stem); repeat to match
        /// --model.
        #[arg(long)]
        name: Vec<String>,
    },
    /// Sweep one hyperparameter over a list of values, one full run each.
    Ablate {
        #[command(flatten)]
        common: ConfigArgs,
        /// Which parameter to sweep: epsilon, clip or r.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// List the built-in presets.
    Presets,
}

fn init_thread_pool() {
    if let Ok(value) = std::env::var("LMDP_THREADS") {
        match value.parse::<usize>() {
            Ok(n) if n >= 1 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("warning: could not apply LMDP_THREADS={}: {}", n, e);
                }
            }
            _ => eprintln!("warning: ignoring invalid LMDP_THREADS={:?}", value),
        }
    }
}

fn ensure_out(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn load_risk_profile(path: &Path) -> anyhow::Result<RiskProfile> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading risks {}", path.display()))?;
    let profile: RiskProfile = serde_json::from_slice(&bytes)
        .with_context(|| format!("parsing risks {}", path.display()))?;
    Ok(profile)
}

fn main() {
    init_thread_pool();
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {:#}", e);
        std::process::exit(1);
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Presets => {
            for name in preset_names() {
                println!("{}", name);
            }
            Ok(())
        }
        Command::Run(common) => {
            let cfg = common.load()?;
            ensure_out(&common.out)?;
            let summary = run_experiment(&cfg, &common.out)?;
            println!("sigma: {:.4}", summary.sigma);
            println!(
                "accounted epsilon: {:.4} (order {})",
                summary.accounted_epsilon,
                summary
                    .accountant_order
                    .map(|o| o.to_string())
                    .unwrap_or_else(|| "-".into())
            );
            println!(
                "risk profile: [{}]",
                summary
                    .risk
                    .rates()
                    .iter()
                    .map(|r| format!("{:.3}", r))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            println!(
                "peak attack accuracy: {:.4} at layer {}",
                summary.attack.peak_accuracy, summary.attack.peak_layer
            );
            println!("final test accuracy: {:.4}", summary.final_test_accuracy);
            println!("artifacts in {}", common.out.display());
            Ok(())
        }
        Command::EstimateRisk(common) => {
            let cfg = common.load()?;
            ensure_out(&common.out)?;
            let paths = ArtifactPaths::new(&common.out);
            let data = prepare_data(&cfg)?;
            let estimate = stage_estimate_risk(&cfg, &data, &paths)?;
            println!(
                "shadow train accuracy: {:.4}",
                estimate.shadow_train_accuracy
            );
            for m in &estimate.metrics {
                println!(
                    "layer {}: error rate {:.4} (prior {:.3}, {} rows)",
                    m.layer, m.error_rate, m.member_fraction, m.rows
                );
            }
            println!("wrote {}", paths.risk_profile.display());
            Ok(())
        }
        Command::CalibrateSigma(common) => {
            let cfg = common.load()?;
            ensure_out(&common.out)?;
            let paths = ArtifactPaths::new(&common.out);
            let report = stage_calibrate(&cfg, &paths)?;
            match report.epsilon_at_sigma {
                Some(eps) => println!(
                    "sigma: {:.4}{} (epsilon at sigma: {:.4})",
                    report.sigma,
                    if report.overridden { " [override]" } else { "" },
                    eps
                ),
                None => println!("sigma: {:.4} [override, noise disabled]", report.sigma),
            }
            println!("wrote {}", paths.calibration.display());
            Ok(())
        }
        Command::Train { common, risks } => {
            let cfg = common.load()?;
            ensure_out(&common.out)?;
            let paths = ArtifactPaths::new(&common.out);
            let data = prepare_data(&cfg)?;
            let risks_path = risks.unwrap_or_else(|| paths.risk_profile.clone());
            let profile = if risks_path.exists() {
                Some(load_risk_profile(&risks_path)?)
            } else {
                None
            };
            let needs_risks = matches!(
                cfg.train.method,
                lmdp_core::clip::ClipMethod::Layerwise { .. }
            ) && matches!(
                cfg.train.weight_scheme,
                lmdp_core::trainer::WeightScheme::Heuristic { .. }
            );
            if needs_risks && profile.is_none() {
                bail!(
                    "the heuristic weight scheme needs a risk profile; run `lmdp estimate-risk` \
                     first or pass --risks <path> (looked at {})",
                    risks_path.display()
                );
            }
            let outcome = stage_train(
                &cfg,
                &data,
                profile
                    .as_ref()
                    .unwrap_or(&RiskProfile::uniform(cfg.model.layer_count(), 0.5)?),
                &paths,
            )?;
            let final_acc = accuracy(&outcome.model, &data.test)?;
            write_manifest(
                &paths,
                &cfg,
                &ManifestInputs {
                    sigma: outcome.sigma,
                    accounted_epsilon: if outcome.reported_epsilon.is_finite() {
                        Some(outcome.reported_epsilon)
                    } else {
                        None
                    },
                    accountant_order: outcome.accountant_order,
                    steps_accounted: outcome.steps_accounted,
                    risk_profile: profile.as_ref().map(|p| p.rates()),
                    attack: None,
                    final_test_accuracy: Some(final_acc),
                    shadow_train_accuracy: None,
                },
            )?;
            println!("sigma: {:.4}", outcome.sigma);
            println!("accounted epsilon: {:.4}", outcome.reported_epsilon);
            println!("final test accuracy: {:.4}", final_acc);
            println!("wrote {}", paths.model.display());
            Ok(())
        }
        Command::EvaluateMia {
            common,
            model,
            name,
        } => {
            let cfg = common.load()?;
            ensure_out(&common.out)?;
            let paths = ArtifactPaths::new(&common.out);
            if !name.is_empty() && name.len() != model.len() {
                bail!("--name must be given once per --model");
            }
            let data = prepare_data(&cfg)?;
            let attack_seed = seed::derive_seed(cfg.seed, "mia/attack");
            let mut reports = Vec::with_capacity(model.len());
            for (i, path) in model.iter().enumerate() {
                let label = name.get(i).cloned().unwrap_or_else(|| {
                    path.file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| format!("model-{}", i))
                });
                let target = load_model(path)?;
                let report = attack_target(&target, &data.train, &data.test, &cfg.mia, attack_seed)?;
                println!(
                    "{}: peak accuracy {:.4} at layer {}",
                    label, report.peak_accuracy, report.peak_layer
                );
                reports.push((label, report));
            }
            if reports.len() == 1 {
                let text = serde_json::to_string_pretty(&reports[0].1)? + "\n";
                std::fs::write(&paths.attack_report, text)
                    .with_context(|| paths.attack_report.display().to_string())?;
            } else {
                for (label, report) in &reports {
                    let path = common.out.join(format!("attack_report_{}.json", label));
                    let text = serde_json::to_string_pretty(report)? + "\n";
                    std::fs::write(&path, text).with_context(|| path.display().to_string())?;
                }
            }
            let entries: Vec<(String, &lmdp_core::mia::AttackReport)> = reports
                .iter()
                .map(|(label, report)| (label.clone(), report))
                .collect();
            write_attack_layers(&paths.attack_layers, &entries)?;
            if reports.len() >= 2 {
                let ranked = compare_methods(&reports)?;
                let ranking_path = common.out.join("ranking.csv");
                write_ranking(&ranking_path, &ranked)?;
                let best: Vec<&str> = ranked
                    .iter()
                    .filter(|r| r.best)
                    .map(|r| r.method.as_str())
                    .collect();
                println!("lowest peak attack accuracy: {}", best.join(", "));
            }
            println!("wrote {}", paths.attack_layers.display());
            Ok(())
        }
        Command::Ablate {
            common,
            param,
            values,
        } => {
            let cfg = common.load()?;
            ensure_out(&common.out)?;
            let param: AblateParam = param.parse()?;
            let rows = ablate(&cfg, param, &values, &common.out)?;
            for row in &rows {
                println!(
                    "{} = {}: peak attack accuracy {:.4}, test accuracy {:.4}",
                    row.param, row.value, row.peak_accuracy, row.final_test_accuracy
                );
            }
            println!(
                "wrote {}",
                common.out.join("ablation_summary.csv").display()
            );
            Ok(())
        }
    }
}
