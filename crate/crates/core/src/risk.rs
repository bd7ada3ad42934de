//! Layer-wise membership-risk estimation.
//!
//! A shadow model with the target's architecture is trained on one side of a
//! disjoint split of a public shadow dataset. Every example is then forwarded
//! through the trained shadow model, and for each layer a binary adversary is
//! fit on (IR, membership) pairs. The adversary's error rate on its own
//! training rows is the layer's risk estimate: a low error rate means the
//! layer leaks membership. Measuring on the training rows (rather than held
//! out) makes the estimate optimistic about the adversary; the attack-side
//! evaluation in [`crate::mia`] is the held-out counterpart.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{one_hot, sgd_train, Activation, LayerSpec, LayeredModel, Loss, SgdOptions};
use crate::seed;
use crate::tensor::Tensor1;

/// Per-layer adversary error rates, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskProfile {
    er: Vec<f64>,
}

impl RiskProfile {
    pub fn new(er: Vec<f64>) -> Result<Self> {
        if er.is_empty() {
            return Err(Error::InvalidConfig("empty risk profile".into()));
        }
        if er.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig(
                "error rates must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { er })
    }

    pub fn rates(&self) -> &[f64] {
        &self.er
    }

    pub fn len(&self) -> usize {
        self.er.len()
    }

    pub fn is_empty(&self) -> bool {
        self.er.is_empty()
    }

    /// A flat profile; calibrating with it keeps raw weight directions.
    pub fn uniform(layers: usize, rate: f64) -> Result<Self> {
        Self::new(vec![rate; layers])
    }
}

/// Hyperparameters of one membership adversary. `hidden_units: None` is a
/// plain logistic head over the IR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub hidden_units: Option<usize>,
}

impl AdversaryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "adversary epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "adversary learning rate must be > 0".into(),
            ));
        }
        if self.hidden_units == Some(0) {
            return Err(Error::InvalidConfig(
                "hidden_units must be >= 1 when present".into(),
            ));
        }
        Ok(())
    }
}

/// Shadow-stage hyperparameters; `seed` drives every random choice in the
/// estimation pipeline. The adversary settings apply to each layer's job.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowConfig {
    pub split_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adversary: AdversaryConfig,
    pub seed: u64,
}

impl ShadowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "split ratio must be in (0, 1), got {}",
                self.split_ratio
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "shadow epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "shadow learning rate must be > 0".into(),
            ));
        }
        self.adversary.validate()
    }
}

/// One adversary training row: a layer IR with its membership flag.
#[derive(Debug, Clone)]
pub struct AdversaryRow {
    pub ir: Tensor1,
    pub member: bool,
}

/// The layer-specific adversary dataset.
#[derive(Debug, Clone)]
pub struct AdversaryDataset {
    layer: usize,
    rows: Vec<AdversaryRow>,
}

impl AdversaryDataset {
    pub fn new(layer: usize, rows: Vec<AdversaryRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let dim = rows[0].ir.len();
        if rows.iter().any(|r| r.ir.len() != dim) {
            return Err(Error::ShapeMismatch(
                "adversary rows have inconsistent IR lengths".into(),
            ));
        }
        Ok(Self { layer, rows })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn rows(&self) -> &[AdversaryRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ir_dim(&self) -> usize {
        self.rows[0].ir.len()
    }

    /// Fraction of rows labeled member (the class prior).
    pub fn member_fraction(&self) -> f64 {
        let members = self.rows.iter().filter(|r| r.member).count();
        members as f64 / self.rows.len() as f64
    }

    /// Same IRs with membership flags permuted; destroys any real signal.
    pub fn with_shuffled_labels(&self, shuffle_seed: u64) -> AdversaryDataset {
        let mut flags: Vec<bool> = self.rows.iter().map(|r| r.member).collect();
        let mut rng = seed::derive_rng(shuffle_seed, "risk/shuffle-labels");
        flags.shuffle(&mut rng);
        let rows = self
            .rows
            .iter()
            .zip(flags)
            .map(|(r, member)| AdversaryRow {
                ir: r.ir.clone(),
                member,
            })
            .collect();
        AdversaryDataset {
            layer: self.layer,
            rows,
        }
    }
}

/// Disjoint partition of the shadow dataset with `floor(ratio * N)` rows on
/// the training side, deterministic under the seed.
pub fn shadow_split(data: &Dataset, ratio: f64, split_seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Split(format!(
            "split ratio must be in (0, 1), got {}",
            ratio
        )));
    }
    if data.len() < 2 {
        return Err(Error::Split("need at least 2 examples to split".into()));
    }
    let n_in = (ratio * data.len() as f64).floor() as usize;
    if n_in == 0 || n_in >= data.len() {
        return Err(Error::Split(format!(
            "ratio {} leaves an empty side of a {}-row dataset",
            ratio,
            data.len()
        )));
    }
    crate::data::shuffled_split(data, n_in, split_seed)
}

/// Plain (non-private) shadow training: mini-batch SGD with cross-entropy.
pub fn train_shadow(
    model: &LayeredModel,
    train_part: &Dataset,
    cfg: &ShadowConfig,
) -> Result<LayeredModel> {
    cfg.validate()?;
    let opts = SgdOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        loss: Loss::CrossEntropy,
    };
    let mut rng = seed::derive_rng(cfg.seed, "risk/shadow-train");
    sgd_train(
        model,
        train_part.features(),
        &train_part.one_hot_targets(),
        &opts,
        &mut rng,
    )
}

/// Per-layer IR pools for members and non-members, order-preserving.
#[derive(Debug, Clone)]
pub struct LayerIrs {
    pub members: Vec<Tensor1>,
    pub non_members: Vec<Tensor1>,
}

pub fn extract_irs(
    model: &LayeredModel,
    members: &Dataset,
    non_members: &Dataset,
) -> Result<Vec<LayerIrs>> {
    if members.is_empty() || non_members.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let layers = model.layer_count();
    let mut out: Vec<LayerIrs> = (0..layers)
        .map(|_| LayerIrs {
            members: Vec::with_capacity(members.len()),
            non_members: Vec::with_capacity(non_members.len()),
        })
        .collect();
    for x in members.features() {
        let (_, irs) = model.forward_with_irs(x)?;
        for l in 0..layers {
            out[l].members.push(irs.layer(l).clone());
        }
    }
    for x in non_members.features() {
        let (_, irs) = model.forward_with_irs(x)?;
        for l in 0..layers {
            out[l].non_members.push(irs.layer(l).clone());
        }
    }
    Ok(out)
}

/// Pairs a layer's IRs with membership labels (members first).
pub fn build_adversary_dataset(layer: usize, irs: &LayerIrs) -> Result<AdversaryDataset> {
    let rows = irs
        .members
        .iter()
        .map(|ir| AdversaryRow {
            ir: ir.clone(),
            member: true,
        })
        .chain(irs.non_members.iter().map(|ir| AdversaryRow {
            ir: ir.clone(),
            member: false,
        }))
        .collect();
    AdversaryDataset::new(layer, rows)
}

fn adversary_specs(ir_dim: usize, cfg: &AdversaryConfig) -> Vec<LayerSpec> {
    match cfg.hidden_units {
        None => vec![LayerSpec::new(ir_dim, 2, Activation::SoftmaxOutput)],
        Some(h) => vec![
            LayerSpec::new(ir_dim, h, Activation::Relu),
            LayerSpec::new(h, 2, Activation::SoftmaxOutput),
        ],
    }
}

/// Per-coordinate affine standardization statistics of the training rows.
/// Coordinates with (numerically) zero spread are dropped rather than blown
/// up.
fn standardize_stats(features: &[Tensor1]) -> (Vec<f64>, Vec<f64>) {
    let dim = features[0].len();
    let n = features.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f.as_slice()) {
            *m += v / n;
        }
    }
    let mut inv_scale = vec![0.0; dim];
    for j in 0..dim {
        let var: f64 = features
            .iter()
            .map(|f| {
                let d = f[j] - mean[j];
                d * d
            })
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        inv_scale[j] = if std > 1e-12 { 1.0 / std } else { 0.0 };
    }
    (mean, inv_scale)
}

/// Trains the layer-specific membership classifier.
///
/// Inputs are standardized per coordinate during optimization (IR scales
/// vary wildly across layers) and the affine transform is then folded into
/// the first layer, so the returned model consumes raw IRs.
pub fn train_adversary(
    ds: &AdversaryDataset,
    cfg: &AdversaryConfig,
    adversary_seed: u64,
) -> Result<LayeredModel> {
    cfg.validate()?;
    let members = ds.rows().iter().filter(|r| r.member).count();
    if members == 0 || members == ds.len() {
        return Err(Error::DegenerateLabels(format!(
            "adversary dataset for layer {} has a single class",
            ds.layer()
        )));
    }
    let mut init_rng = seed::derive_rng(adversary_seed, "risk/adversary-init");
    let model = LayeredModel::init_random(adversary_specs(ds.ir_dim(), cfg), &mut init_rng)?;

    let raw: Vec<&Tensor1> = ds.rows().iter().map(|r| &r.ir).collect();
    let (mean, inv_scale) = standardize_stats(
        &raw.iter().map(|t| (*t).clone()).collect::<Vec<_>>(),
    );
    let features: Vec<Tensor1> = raw
        .iter()
        .map(|f| {
            Tensor1::new(
                f.as_slice()
                    .iter()
                    .zip(&mean)
                    .zip(&inv_scale)
                    .map(|((v, m), s)| (v - m) * s)
                    .collect(),
            )
        })
        .collect::<Result<_>>()?;
    let targets: Vec<Tensor1> = ds
        .rows()
        .iter()
        .map(|r| one_hot(r.member as usize, 2))
        .collect();
    let opts = SgdOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        loss: Loss::CrossEntropy,
    };
    let mut train_rng = seed::derive_rng(adversary_seed, "risk/adversary-train");
    let mut trained = sgd_train(&model, &features, &targets, &opts, &mut train_rng)?;

    // fold z = (x - mean) * inv_scale into layer 0: W'x + b' = W z + b
    let first = &trained.params()[0];
    let rows = first.weights.rows();
    let cols = first.weights.cols();
    let mut folded_w = first.weights.clone();
    let mut folded_b = first.bias.clone();
    for r in 0..rows {
        let mut shift = 0.0;
        for c in 0..cols {
            let w = first.weights.get(r, c);
            folded_w.set(r, c, w * inv_scale[c]);
            shift += w * inv_scale[c] * mean[c];
        }
        folded_b[r] -= shift;
    }
    trained.set_layer_params(0, folded_w, folded_b)?;
    Ok(trained)
}

/// Predicted probability that the IR belongs to a member.
pub fn membership_probability(adversary: &LayeredModel, ir: &Tensor1) -> Result<f64> {
    let out = adversary.forward(ir)?;
    Ok(out[1])
}

/// Misclassification fraction over the full dataset at threshold 0.5.
pub fn error_rate(adversary: &LayeredModel, ds: &AdversaryDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut wrong = 0usize;
    for row in ds.rows() {
        let predicted_member = membership_probability(adversary, &row.ir)? > 0.5;
        if predicted_member != row.member {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / ds.len() as f64)
}

/// Per-layer diagnostics emitted alongside the risk profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerAdversaryMetrics {
    /// 1-based layer index.
    pub layer: usize,
    pub error_rate: f64,
    pub member_fraction: f64,
    pub rows: usize,
}

/// Output of the full estimation pipeline.
#[derive(Debug, Clone)]
pub struct RiskEstimate {
    pub profile: RiskProfile,
    pub metrics: Vec<LayerAdversaryMetrics>,
    /// Training accuracy the shadow model reached on its member split.
    pub shadow_train_accuracy: f64,
}

/// The full estimation pipeline: split, shadow training, IR extraction, one
/// adversary per layer, error rates. Layer jobs are independent and run in
/// parallel; results join in layer order.
pub fn estimate_risk_profile(
    shadow_model: &LayeredModel,
    shadow_data: &Dataset,
    cfg: &ShadowConfig,
) -> Result<RiskEstimate> {
    cfg.validate()?;
    let (train_part, test_part) = shadow_split(
        shadow_data,
        cfg.split_ratio,
        seed::derive_seed(cfg.seed, "risk/split"),
    )?;
    let trained = train_shadow(shadow_model, &train_part, cfg)?;
    let shadow_train_accuracy = crate::data::accuracy(&trained, &train_part)?;
    let irs = extract_irs(&trained, &train_part, &test_part)?;

    let per_layer: Vec<Result<(f64, LayerAdversaryMetrics)>> = irs
        .par_iter()
        .enumerate()
        .map(|(l, layer_irs)| {
            let ds = build_adversary_dataset(l, layer_irs)?;
            let adversary_seed = seed::derive_seed(cfg.seed, &format!("risk/adversary/{}", l));
            let adversary = train_adversary(&ds, &cfg.adversary, adversary_seed)?;
            let er = error_rate(&adversary, &ds)?;
            Ok((
                er,
                LayerAdversaryMetrics {
                    layer: l + 1,
                    error_rate: er,
                    member_fraction: ds.member_fraction(),
                    rows: ds.len(),
                },
            ))
        })
        .collect();

    let mut rates = Vec::with_capacity(per_layer.len());
    let mut metrics = Vec::with_capacity(per_layer.len());
    for item in per_layer {
        let (er, m) = item?;
        rates.push(er);
        metrics.push(m);
    }
    Ok(RiskEstimate {
        profile: RiskProfile::new(rates)?,
        metrics,
        shadow_train_accuracy,
    })
}
