//! Experiment configuration: one JSON document drives the whole pipeline.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::accountant::PrivacySpec;
use crate::clip::ClipMethod;
use crate::data::{SyntheticKind, SyntheticSpec};
use crate::error::{Error, Result};
use crate::mia::AttackConfig;
use crate::nn::{Activation, LayerSpec};
use crate::risk::{AdversaryConfig, ShadowConfig};
use crate::trainer::{LrSchedule, TrainConfig, WeightScheme};

pub const CONFIG_VERSION: u32 = 1;

/// Where the labeled data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DatasetConfig {
    /// Synthetic private pool; the shadow pool is drawn from
    /// `shadow_dataset` (or the same spec) with an independent seed stream.
    Synthetic {
        #[serde(flatten)]
        spec: SyntheticSpec,
        test_fraction: f64,
    },
    /// IDX image/label pair, split into train/test/shadow parts.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        test_fraction: f64,
        shadow_fraction: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subsample: Option<usize>,
    },
}

impl DatasetConfig {
    fn validate(&self) -> Result<()> {
        match self {
            DatasetConfig::Synthetic { test_fraction, .. } => {
                if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(Error::InvalidConfig(
                        "test_fraction must be in (0, 1)".into(),
                    ));
                }
            }
            DatasetConfig::Idx {
                test_fraction,
                shadow_fraction,
                subsample,
                ..
            } => {
                if !(*test_fraction > 0.0 && *shadow_fraction > 0.0)
                    || test_fraction + shadow_fraction >= 1.0
                {
                    return Err(Error::InvalidConfig(
                        "test_fraction and shadow_fraction must be positive and sum below 1"
                            .into(),
                    ));
                }
                if *subsample == Some(0) {
                    return Err(Error::InvalidConfig("subsample must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> Option<usize> {
        match self {
            DatasetConfig::Synthetic { spec, .. } => Some(spec.classes),
            DatasetConfig::Idx { .. } => None,
        }
    }
}

/// One hidden layer of the target architecture; the softmax classification
/// head is appended automatically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub units: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<HiddenLayer>,
}

impl ModelConfig {
    pub fn build_specs(&self, input_dim: usize, classes: usize) -> Result<Vec<LayerSpec>> {
        let mut specs = Vec::with_capacity(self.hidden.len() + 1);
        let mut in_dim = input_dim;
        for (i, h) in self.hidden.iter().enumerate() {
            if h.units == 0 {
                return Err(Error::InvalidConfig(format!(
                    "hidden layer {} has zero units",
                    i
                )));
            }
            if h.activation == Activation::SoftmaxOutput {
                return Err(Error::InvalidConfig(
                    "softmax-output is reserved for the final layer".into(),
                ));
            }
            specs.push(LayerSpec::new(in_dim, h.units, h.activation));
            in_dim = h.units;
        }
        specs.push(LayerSpec::new(in_dim, classes, Activation::SoftmaxOutput));
        Ok(specs)
    }

    pub fn layer_count(&self) -> usize {
        self.hidden.len() + 1
    }
}

/// Shadow-stage settings; the pipeline derives the seed from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowSettings {
    pub split_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adversary: AdversaryConfig,
}

impl ShadowSettings {
    pub fn to_shadow_config(&self, seed: u64) -> ShadowConfig {
        ShadowConfig {
            split_ratio: self.split_ratio,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            adversary: self.adversary,
            seed,
        }
    }
}

/// Private-training settings; the pipeline derives the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub method: ClipMethod,
    pub weight_scheme: WeightScheme,
    pub epsilon: f64,
    pub delta: f64,
    pub q: f64,
    pub iterations: u64,
    pub learning_rate: LrSchedule,
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_override: Option<f64>,
}

impl TrainSettings {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            method: self.method,
            weight_scheme: self.weight_scheme.clone(),
            privacy: PrivacySpec {
                epsilon: self.epsilon,
                delta: self.delta,
                q: self.q,
                iterations: self.iterations,
            },
            learning_rate: self.learning_rate,
            seed,
            eval_every: self.eval_every,
            sigma_override: self.sigma_override,
        }
    }
}

/// The experiment document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shadow_dataset: Option<SyntheticSpec>,
    pub model: ModelConfig,
    pub shadow: ShadowSettings,
    pub train: TrainSettings,
    pub mia: AttackConfig,
}

impl ExperimentConfig {
    /// Parses and validates a config file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: ExperimentConfig = serde_json::from_slice(&bytes).map_err(|e| {
            Error::format(path.display().to_string(), format!("invalid config: {}", e))
        })?;
        cfg.validate()?;
        if let DatasetConfig::Idx { images, labels, .. } = &cfg.dataset {
            for p in [images, labels] {
                if !p.exists() {
                    return Err(Error::InvalidConfig(format!(
                        "referenced path does not exist: {}",
                        p.display()
                    )));
                }
            }
        }
        Ok(cfg)
    }

    /// Structural validation; returns human-readable warnings for settings
    /// that are legal but inadvisable.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported config version {}, expected {}",
                self.version, CONFIG_VERSION
            )));
        }
        self.dataset.validate()?;
        if let Some(shadow_spec) = &self.shadow_dataset {
            if let Some(classes) = self.dataset.classes() {
                if shadow_spec.classes != classes {
                    return Err(Error::InvalidConfig(format!(
                        "shadow dataset has {} classes, private dataset has {}",
                        shadow_spec.classes, classes
                    )));
                }
            }
        }
        // exercise the downstream validators with a placeholder seed
        self.shadow.to_shadow_config(0).validate()?;
        self.train.to_train_config(0).validate()?;
        self.mia.validate()?;
        if let (ClipMethod::Layerwise { .. }, WeightScheme::Fixed { weights }) =
            (&self.train.method, &self.train.weight_scheme)
        {
            if weights.len() != self.model.layer_count() {
                return Err(Error::InvalidConfig(format!(
                    "fixed weight vector has {} entries, model has {} layers",
                    weights.len(),
                    self.model.layer_count()
                )));
            }
        }

        let mut warnings = Vec::new();
        if let DatasetConfig::Synthetic { spec, .. } = &self.dataset {
            let privacy = PrivacySpec {
                epsilon: self.train.epsilon,
                delta: self.train.delta,
                q: self.train.q,
                iterations: self.train.iterations.max(1),
            };
            if !privacy.delta_is_recommended(spec.n) {
                warnings.push(format!(
                    "delta {} is not below 1/N for N = {}",
                    self.train.delta, spec.n
                ));
            }
            if self.train.q * (spec.n as f64) < 1.0 {
                warnings.push(format!(
                    "expected batch size q*N = {:.2} is below 1",
                    self.train.q * spec.n as f64
                ));
            }
        }
        Ok(warnings)
    }
}

fn relu(units: usize) -> HiddenLayer {
    HiddenLayer {
        units,
        activation: Activation::Relu,
    }
}

fn synthetic_blobs(n: usize, dims: usize, classes: usize, cluster_std: f64) -> SyntheticSpec {
    SyntheticSpec {
        kind: SyntheticKind::Blobs,
        n,
        dims,
        classes,
        cluster_std,
        separation: 6.0,
        label_noise: 0.0,
    }
}

fn default_adversary() -> AdversaryConfig {
    AdversaryConfig {
        epochs: 25,
        batch_size: 32,
        learning_rate: 0.3,
        hidden_units: None,
    }
}

fn preset_base(
    dataset: SyntheticSpec,
    hidden: Vec<HiddenLayer>,
    epsilon: f64,
    q: f64,
    eta: f64,
    c: f64,
    emphasis: f64,
    iterations: u64,
) -> ExperimentConfig {
    ExperimentConfig {
        version: CONFIG_VERSION,
        seed: 42,
        dataset: DatasetConfig::Synthetic {
            spec: dataset,
            test_fraction: 0.25,
        },
        shadow_dataset: None,
        model: ModelConfig { hidden },
        shadow: ShadowSettings {
            split_ratio: 0.5,
            epochs: 40,
            batch_size: 32,
            learning_rate: 0.2,
            adversary: default_adversary(),
        },
        train: TrainSettings {
            method: ClipMethod::Layerwise { c },
            weight_scheme: WeightScheme::Heuristic { emphasis },
            epsilon,
            delta: 1e-5,
            q,
            iterations,
            learning_rate: LrSchedule::Constant { rate: eta },
            eval_every: 25,
            sigma_override: None,
        },
        mia: AttackConfig {
            adversary: default_adversary(),
            train_fraction: 0.7,
            max_per_class: None,
        },
    }
}

/// Named experiment presets. The four `*-analogue` presets carry the
/// published hyperparameter regimes (budget, sampling probability, learning
/// rate, clipping threshold, emphasis factor) rescaled to desk-size data and
/// iteration counts; `desk-smoke` is a fast end-to-end check.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let cfg = match name {
        // (eps, delta) = (5, 1e-5), q = 0.01, eta = 0.08, C = 1.0, r = 5.0
        "mnist-scnn-analogue" => preset_base(
            synthetic_blobs(3000, 16, 10, 1.6),
            vec![relu(32), relu(32), relu(24), relu(16), relu(16)],
            5.0,
            0.01,
            0.08,
            1.0,
            5.0,
            800,
        ),
        // (8, 1e-5), q = 0.01, eta = 0.10, C = 2.0, r = 3.0
        "cifar10-dcnn-analogue" => preset_base(
            synthetic_blobs(4000, 16, 10, 2.0),
            vec![
                relu(48),
                relu(48),
                relu(32),
                relu(32),
                relu(24),
                relu(24),
                relu(16),
            ],
            8.0,
            0.01,
            0.10,
            2.0,
            3.0,
            1000,
        ),
        // (8, 1e-5), q = 0.01, eta = 0.10, C = 3.0, r = 2.0
        "cifar100-resnet-analogue" => preset_base(
            synthetic_blobs(4000, 24, 10, 2.2),
            vec![relu(48), relu(40), relu(32), relu(24), relu(16)],
            8.0,
            0.01,
            0.10,
            3.0,
            2.0,
            1000,
        ),
        // (8, 1e-5), q = 0.01, eta = 0.08, C = 3.0, r = 2.0
        "celeba-vgg-analogue" => preset_base(
            synthetic_blobs(3000, 24, 2, 2.4),
            vec![relu(40), relu(32), relu(24), relu(16)],
            8.0,
            0.01,
            0.08,
            3.0,
            2.0,
            800,
        ),
        "desk-smoke" => {
            let mut cfg = preset_base(
                synthetic_blobs(400, 2, 2, 1.2),
                vec![relu(12), relu(8)],
                8.0,
                0.05,
                0.15,
                1.0,
                2.0,
                60,
            );
            cfg.shadow.epochs = 20;
            cfg.train.eval_every = 20;
            cfg
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown preset '{}'; available: {}",
                other,
                preset_names().join(", ")
            )))
        }
    };
    Ok(cfg)
}

pub fn preset_names() -> Vec<&'static str> {
    vec![
        "mnist-scnn-analogue",
        "cifar10-dcnn-analogue",
        "cifar100-resnet-analogue",
        "celeba-vgg-analogue",
        "desk-smoke",
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in preset_names() {
            let cfg = preset(name).unwrap();
            let warnings = cfg.validate().unwrap();
            assert!(warnings.is_empty(), "{}: {:?}", name, warnings);
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = preset("desk-smoke").unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn missing_seed_is_rejected() {
        let cfg = preset("desk-smoke").unwrap();
        let mut value: serde_json::Value = serde_json::to_value(&cfg).unwrap();
        value.as_object_mut().unwrap().remove("seed");
        assert!(serde_json::from_value::<ExperimentConfig>(value).is_err());
    }

    #[test]
    fn model_specs_chain_from_input_to_classes() {
        let cfg = preset("desk-smoke").unwrap();
        let specs = cfg.model.build_specs(2, 2).unwrap();
        assert_eq!(specs.len(), 3);
        assert_eq!(specs[0].in_dim, 2);
        assert_eq!(specs[2].out_dim, 2);
        assert_eq!(specs[2].activation, Activation::SoftmaxOutput);
    }

    #[test]
    fn bad_versions_and_fractions_are_rejected() {
        let mut cfg = preset("desk-smoke").unwrap();
        cfg.version = 9;
        assert!(cfg.validate().is_err());

        let mut cfg = preset("desk-smoke").unwrap();
        if let DatasetConfig::Synthetic { test_fraction, .. } = &mut cfg.dataset {
            *test_fraction = 1.5;
        }
        assert!(cfg.validate().is_err());
    }
}
