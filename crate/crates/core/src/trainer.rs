//! Private training loops.
//!
//! One iteration samples a Poisson mini-batch, computes per-example
//! gradients, constrains each gradient's norm with the configured mechanism
//! (for layer-wise clipping, after computing the reweighting vector from the
//! batch), sums, adds a single Gaussian noise draw over the full flattened
//! parameter vector, divides by the realized batch size and takes an SGD
//! step. Batch sampling and noise use independent RNG streams derived from
//! the run seed, so toggling the noise level never changes batch
//! composition.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{calibrate_sigma, compose_and_convert, AccountantState, PrivacySpec};
use crate::clip::{clip_auto_s, clip_layerwise, clip_psac, clip_standard, ClipMethod, ClippedGradient};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    batch_mean_gradient, per_example_gradient, GradBlock, LayeredModel, Loss, PerExampleGradient,
};
use crate::reweight::{
    calibrate_and_normalize, init_weights, lagrange_weights, BiasProblem, EmphasisFactor,
    ReweightVector,
};
use crate::risk::RiskProfile;
use crate::seed;

/// How the layer-wise reweighting vector is chosen each iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightScheme {
    /// Three-step scheme: norm-ratio initialization, risk calibration with
    /// the given emphasis, l2-normalization.
    Heuristic { emphasis: f64 },
    /// Bias-minimizing weights from the batch's own statistics.
    Lagrange,
    /// A fixed unit-norm vector supplied by the caller.
    Fixed { weights: Vec<f64> },
}

/// Learning-rate schedule. Both variants are constant over a run; `SqrtT`
/// fixes the rate at `base / sqrt(T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant { rate: f64 },
    SqrtT { base: f64 },
}

impl LrSchedule {
    pub fn rate(&self, total_iterations: u64) -> f64 {
        match self {
            LrSchedule::Constant { rate } => *rate,
            LrSchedule::SqrtT { base } => base / (total_iterations.max(1) as f64).sqrt(),
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match self {
            LrSchedule::Constant { rate } => *rate,
            LrSchedule::SqrtT { base } => *base,
        };
        if v > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig("learning rate must be > 0".into()))
        }
    }
}

/// Full configuration of a private training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: ClipMethod,
    pub weight_scheme: WeightScheme,
    pub privacy: PrivacySpec,
    pub learning_rate: LrSchedule,
    pub seed: u64,
    /// Test accuracy is sampled every this many iterations (and at the final
    /// one); 0 samples only the final iteration.
    #[serde(default)]
    pub eval_every: usize,
    /// Bypasses noise calibration; mainly for diagnostics (0 disables noise,
    /// and disables privacy accounting with it).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_override: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        self.learning_rate.validate()?;
        if let WeightScheme::Heuristic { emphasis } = self.weight_scheme {
            EmphasisFactor::new(emphasis)?;
        }
        match self.sigma_override {
            None => self.privacy.validate()?,
            Some(sigma) => {
                // calibration is skipped, so only the fields the loop itself
                // consumes need to hold
                if !(sigma >= 0.0) {
                    return Err(Error::InvalidNoise(sigma));
                }
                if !(self.privacy.q > 0.0 && self.privacy.q <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "sampling probability must be in (0, 1], got {}",
                        self.privacy.q
                    )));
                }
                if !(self.privacy.delta > 0.0 && self.privacy.delta < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "delta must be in (0, 1), got {}",
                        self.privacy.delta
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationLog {
    pub t: u64,
    pub batch_size: usize,
    /// `|| mean clipped gradient - mean raw gradient ||` before noise.
    pub bias_norm: f64,
    /// Mean per-example (unclipped) global gradient norm.
    pub grad_norm: f64,
    /// Reweighting vector used this iteration; empty for baselines and empty
    /// batches.
    pub weights: Vec<f64>,
    pub test_acc: Option<f64>,
}

/// Every index kept independently with probability `q`.
pub fn poisson_sample<R: Rng + ?Sized>(n: usize, q: f64, rng: &mut R) -> Vec<usize> {
    assert!(q > 0.0 && q <= 1.0, "sampling probability out of range");
    (0..n).filter(|_| rng.random::<f64>() < q).collect()
}

fn per_example_gradients(
    model: &LayeredModel,
    features: &[&crate::tensor::Tensor1],
    targets: &[&crate::tensor::Tensor1],
    loss: Loss,
) -> Result<Vec<PerExampleGradient>> {
    // parallel fan-out, order-preserving collect; the reduction that follows
    // is sequential in example order so results do not depend on worker count
    features
        .par_iter()
        .zip(targets.par_iter())
        .map(|(x, y)| per_example_gradient(model, x, y, loss))
        .collect()
}

/// Weights used when the requested scheme cannot be computed from this
/// batch: normalized raw ratios if informative, otherwise uniform.
fn fallback_weights(grads: &[PerExampleGradient], c: f64) -> Result<ReweightVector> {
    let raw = init_weights(grads, c)?;
    if raw.iter().all(|v| *v == 0.0) {
        Ok(ReweightVector::uniform(raw.len()))
    } else {
        let layers = raw.len();
        calibrate_and_normalize(&raw, &RiskProfile::uniform(layers, 0.5)?, EmphasisFactor::new(1.0)?)
    }
}

fn layerwise_weights(
    grads: &[PerExampleGradient],
    c: f64,
    scheme: &WeightScheme,
    risks: Option<&RiskProfile>,
) -> Result<ReweightVector> {
    let layers = grads[0].layer_count();
    match scheme {
        WeightScheme::Heuristic { emphasis } => {
            let risks = risks.ok_or_else(|| {
                Error::InvalidConfig("heuristic weight scheme needs a risk profile".into())
            })?;
            if risks.len() != layers {
                return Err(Error::ShapeMismatch(format!(
                    "risk profile has {} entries, model has {} layers",
                    risks.len(),
                    layers
                )));
            }
            let raw = init_weights(grads, c)?;
            if raw.iter().all(|v| *v == 0.0) {
                // the whole batch had zero gradients; any unit vector works
                return Ok(ReweightVector::uniform(layers));
            }
            calibrate_and_normalize(&raw, risks, EmphasisFactor::new(*emphasis)?)
        }
        WeightScheme::Lagrange => {
            let problem = BiasProblem::from_batch(grads, c)?;
            match lagrange_weights(&problem) {
                Ok(solution) => Ok(solution.weights),
                Err(Error::NoPreferredDirection) => fallback_weights(grads, c),
                Err(e) => Err(e),
            }
        }
        WeightScheme::Fixed { weights } => {
            if weights.len() != layers {
                return Err(Error::ShapeMismatch(format!(
                    "fixed weight vector has {} entries, model has {} layers",
                    weights.len(),
                    layers
                )));
            }
            ReweightVector::new(weights.clone())
        }
    }
}

struct StepInputs<'a> {
    features: &'a [&'a crate::tensor::Tensor1],
    targets: &'a [&'a crate::tensor::Tensor1],
    loss: Loss,
    sigma: f64,
    eta: f64,
    t: u64,
}

fn private_step(
    model: &LayeredModel,
    inputs: &StepInputs<'_>,
    method: &ClipMethod,
    scheme: Option<&WeightScheme>,
    risks: Option<&RiskProfile>,
    noise_rng: &mut ChaCha20Rng,
) -> Result<(LayeredModel, IterationLog)> {
    let batch_size = inputs.features.len();
    if batch_size == 0 {
        // no update; the iteration is still counted by the caller
        return Ok((
            model.clone(),
            IterationLog {
                t: inputs.t,
                batch_size: 0,
                bias_norm: 0.0,
                grad_norm: 0.0,
                weights: Vec::new(),
                test_acc: None,
            },
        ));
    }

    let grads = per_example_gradients(model, inputs.features, inputs.targets, inputs.loss)?;
    let grad_norm =
        grads.iter().map(PerExampleGradient::global_norm).sum::<f64>() / batch_size as f64;

    let mut logged_weights = Vec::new();
    let clipped: Vec<ClippedGradient> = match method {
        ClipMethod::Layerwise { c } => {
            let scheme = scheme.ok_or_else(|| {
                Error::InvalidConfig("layer-wise clipping needs a weight scheme".into())
            })?;
            let w = layerwise_weights(&grads, *c, scheme, risks)?;
            logged_weights = w.components().to_vec();
            grads
                .iter()
                .map(|g| clip_layerwise(g, &w, *c))
                .collect::<Result<Vec<_>>>()?
        }
        ClipMethod::Standard { c } => grads.iter().map(|g| clip_standard(g, *c)).collect(),
        ClipMethod::AutoS { r_stab } => grads.iter().map(|g| clip_auto_s(g, *r_stab)).collect(),
        ClipMethod::Psac { c, r_stab } => {
            grads.iter().map(|g| clip_psac(g, *c, *r_stab)).collect()
        }
    };

    // sum clipped gradients in ascending example order
    let mut summed: Vec<GradBlock> = clipped[0].blocks().to_vec();
    for cg in &clipped[1..] {
        for (acc, b) in summed.iter_mut().zip(cg.blocks()) {
            acc.add_assign(b);
        }
    }

    // clipping bias before noise: mean clipped minus mean raw gradient
    let true_mean = batch_mean_gradient(&grads)?;
    let inv = 1.0 / batch_size as f64;
    let bias_norm = {
        let mut sq = 0.0;
        for (s, t) in summed.iter().zip(true_mean.blocks()) {
            for (sv, tv) in s
                .weights
                .as_slice()
                .iter()
                .chain(s.bias.as_slice())
                .zip(t.weights.as_slice().iter().chain(t.bias.as_slice()))
            {
                let d = sv * inv - tv;
                sq += d * d;
            }
        }
        sq.sqrt()
    };

    if inputs.sigma > 0.0 {
        // one draw for the whole flattened parameter vector, then split back
        // into layer blocks
        let std = method.noise_sensitivity() * inputs.sigma;
        let flat: Vec<f64> = (0..model.param_count())
            .map(|_| std * noise_rng.sample::<f64, _>(StandardNormal))
            .collect();
        let noise_blocks = model.blocks_from_flat(&flat)?;
        for (acc, nb) in summed.iter_mut().zip(&noise_blocks) {
            acc.add_assign(nb);
        }
    }

    for block in &mut summed {
        block.scale_in_place(inv);
    }
    let mut updated = model.clone();
    updated.apply_scaled_update(&summed, inputs.eta)?;
    if !updated.params_are_finite() {
        return Err(Error::Divergence {
            unit: "iteration",
            index: inputs.t as usize,
        });
    }

    Ok((
        updated,
        IterationLog {
            t: inputs.t,
            batch_size,
            bias_norm,
            grad_norm,
            weights: logged_weights,
            test_acc: None,
        },
    ))
}

/// One layer-wise reweighted private step.
#[allow(clippy::too_many_arguments)]
pub fn lm_dpsgd_step(
    model: &LayeredModel,
    features: &[&crate::tensor::Tensor1],
    targets: &[&crate::tensor::Tensor1],
    loss: Loss,
    cfg: &TrainConfig,
    risks: Option<&RiskProfile>,
    sigma: f64,
    t: u64,
    noise_rng: &mut ChaCha20Rng,
) -> Result<(LayeredModel, IterationLog)> {
    if !matches!(cfg.method, ClipMethod::Layerwise { .. }) {
        return Err(Error::InvalidConfig(
            "lm_dpsgd_step requires the layerwise clip method".into(),
        ));
    }
    let inputs = StepInputs {
        features,
        targets,
        loss,
        sigma,
        eta: cfg.learning_rate.rate(cfg.privacy.iterations),
        t,
    };
    private_step(
        model,
        &inputs,
        &cfg.method,
        Some(&cfg.weight_scheme),
        risks,
        noise_rng,
    )
}

/// One baseline private step (standard, normalized or non-monotonic clipping).
#[allow(clippy::too_many_arguments)]
pub fn baseline_step(
    model: &LayeredModel,
    features: &[&crate::tensor::Tensor1],
    targets: &[&crate::tensor::Tensor1],
    loss: Loss,
    cfg: &TrainConfig,
    sigma: f64,
    t: u64,
    noise_rng: &mut ChaCha20Rng,
) -> Result<(LayeredModel, IterationLog)> {
    if matches!(cfg.method, ClipMethod::Layerwise { .. }) {
        return Err(Error::InvalidConfig(
            "baseline_step does not handle layerwise clipping".into(),
        ));
    }
    let inputs = StepInputs {
        features,
        targets,
        loss,
        sigma,
        eta: cfg.learning_rate.rate(cfg.privacy.iterations),
        t,
    };
    private_step(model, &inputs, &cfg.method, None, None, noise_rng)
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LayeredModel,
    pub logs: Vec<IterationLog>,
    pub sigma: f64,
    /// Accountant epsilon at the configured delta; infinite when noise was
    /// disabled by override.
    pub reported_epsilon: f64,
    pub accountant_order: Option<u32>,
    pub steps_accounted: u64,
}

/// Runs the configured private training loop for `privacy.iterations`
/// iterations. Every iteration is fed to the accountant, including those
/// whose Poisson batch came up empty.
pub fn train(
    model: &LayeredModel,
    data: &Dataset,
    eval_data: Option<&Dataset>,
    cfg: &TrainConfig,
    risks: Option<&RiskProfile>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let loss = if matches!(
        model.specs()[model.layer_count() - 1].activation,
        crate::nn::Activation::SoftmaxOutput
    ) {
        Loss::CrossEntropy
    } else {
        Loss::Mse
    };
    let sigma = match cfg.sigma_override {
        Some(s) => s,
        None => calibrate_sigma(&cfg.privacy)?,
    };

    let targets = data.one_hot_targets();
    let mut sample_rng = seed::derive_rng(cfg.seed, "train/poisson");
    let mut noise_rng = seed::derive_rng(cfg.seed, "train/noise");
    let mut accountant = AccountantState::new();

    let mut current = model.clone();
    let total = cfg.privacy.iterations;
    let mut logs = Vec::with_capacity(total as usize);
    for t in 0..total {
        let batch = poisson_sample(data.len(), cfg.privacy.q, &mut sample_rng);
        if sigma > 0.0 {
            accountant.record_steps(cfg.privacy.q, sigma, 1)?;
        }
        let features: Vec<&crate::tensor::Tensor1> =
            batch.iter().map(|i| &data.features()[*i]).collect();
        let batch_targets: Vec<&crate::tensor::Tensor1> =
            batch.iter().map(|i| &targets[*i]).collect();
        let inputs = StepInputs {
            features: &features,
            targets: &batch_targets,
            loss,
            sigma,
            eta: cfg.learning_rate.rate(total),
            t,
        };
        let scheme = match cfg.method {
            ClipMethod::Layerwise { .. } => Some(&cfg.weight_scheme),
            _ => None,
        };
        let (updated, mut log) =
            private_step(&current, &inputs, &cfg.method, scheme, risks, &mut noise_rng)?;
        current = updated;
        let sample_eval = match (eval_data, cfg.eval_every) {
            (None, _) => false,
            (Some(_), 0) => t + 1 == total,
            (Some(_), k) => (t + 1) % k as u64 == 0 || t + 1 == total,
        };
        if sample_eval {
            log.test_acc = Some(crate::data::accuracy(&current, eval_data.unwrap())?);
        }
        logs.push(log);
    }

    let report = if sigma > 0.0 {
        compose_and_convert(&accountant, cfg.privacy.delta)?
    } else {
        crate::accountant::EpsilonReport {
            epsilon: f64::INFINITY,
            order: None,
        }
    };
    Ok(TrainOutcome {
        model: current,
        logs,
        sigma,
        reported_epsilon: report.epsilon,
        accountant_order: report.order,
        steps_accounted: accountant.steps_taken(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticKind, SyntheticSpec};
    use crate::nn::{one_hot, Activation, LayerSpec};
    use crate::tensor::Tensor1;
    use rand::SeedableRng;

    fn blobs(n: usize, seed: u64) -> Dataset {
        generate_synthetic(
            &SyntheticSpec {
                kind: SyntheticKind::Blobs,
                n,
                dims: 2,
                classes: 2,
                cluster_std: 1.0,
                separation: 6.0,
                label_noise: 0.0,
            },
            seed,
        )
        .unwrap()
    }

    fn model_2layer(seed: u64) -> LayeredModel {
        let mut rng = seed::derive_rng(seed, "test/model");
        LayeredModel::init_random(
            vec![
                LayerSpec::new(2, 6, Activation::Tanh),
                LayerSpec::new(6, 2, Activation::SoftmaxOutput),
            ],
            &mut rng,
        )
        .unwrap()
    }

    fn config(method: ClipMethod, scheme: WeightScheme, t: u64, sigma: Option<f64>) -> TrainConfig {
        TrainConfig {
            method,
            weight_scheme: scheme,
            privacy: PrivacySpec {
                epsilon: 8.0,
                delta: 1e-5,
                q: 0.2,
                iterations: t,
            },
            learning_rate: LrSchedule::Constant { rate: 0.2 },
            seed: 11,
            eval_every: 0,
            sigma_override: sigma,
        }
    }

    #[test]
    fn poisson_q1_includes_everything() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert_eq!(poisson_sample(10, 1.0, &mut rng), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn poisson_tiny_q_is_empty() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert!(poisson_sample(100, 1e-12, &mut rng).is_empty());
    }

    #[test]
    fn poisson_concentrates_around_qn() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut total = 0usize;
        for _ in 0..1000 {
            total += poisson_sample(10_000, 0.01, &mut rng).len();
        }
        let mean = total as f64 / 1000.0;
        assert!((90.0..=110.0).contains(&mean), "mean batch size {}", mean);
    }

    #[test]
    fn zero_iterations_return_the_model_unchanged() {
        let data = blobs(20, 0);
        let model = model_2layer(0);
        let cfg = config(
            ClipMethod::Layerwise { c: 1.0 },
            WeightScheme::Heuristic { emphasis: 1.0 },
            0,
            Some(0.0),
        );
        let out = train(&model, &data, None, &cfg, Some(&RiskProfile::uniform(2, 0.5).unwrap()))
            .unwrap();
        assert_eq!(out.model.flatten_params(), model.flatten_params());
        assert!(out.logs.is_empty());
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let data = blobs(60, 2);
        let model = model_2layer(2);
        let cfg = config(
            ClipMethod::Layerwise { c: 1.0 },
            WeightScheme::Heuristic { emphasis: 2.0 },
            25,
            None,
        );
        let risks = RiskProfile::new(vec![0.45, 0.3]).unwrap();
        let a = train(&model, &data, None, &cfg, Some(&risks)).unwrap();
        let b = train(&model, &data, None, &cfg, Some(&risks)).unwrap();
        assert_eq!(a.model.flatten_params(), b.model.flatten_params());
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.steps_accounted, 25);
        assert!(a.reported_epsilon <= 8.0);
    }

    #[test]
    fn empty_batch_skips_update_but_counts() {
        let data = blobs(10, 3);
        let model = model_2layer(3);
        let mut cfg = config(
            ClipMethod::Standard { c: 1.0 },
            WeightScheme::Lagrange,
            5,
            Some(1.0),
        );
        cfg.privacy.q = 1e-12;
        let out = train(&model, &data, None, &cfg, None).unwrap();
        assert_eq!(out.logs.len(), 5);
        assert!(out.logs.iter().all(|l| l.batch_size == 0));
        assert_eq!(out.model.flatten_params(), model.flatten_params());
        assert_eq!(out.steps_accounted, 5);
    }

    /// sigma = 0, L = 1: the layer-wise step must match the standard step to
    /// within a relative 1e-15 per parameter.
    #[test]
    fn single_layer_step_collapses_to_standard() {
        let data = blobs(30, 4);
        let mut rng = seed::derive_rng(4, "test/model");
        let model = LayeredModel::init_random(
            vec![LayerSpec::new(2, 2, Activation::SoftmaxOutput)],
            &mut rng,
        )
        .unwrap();
        let targets = data.one_hot_targets();
        let features: Vec<&Tensor1> = data.features().iter().collect();
        let target_refs: Vec<&Tensor1> = targets.iter().collect();

        let lm_cfg = config(
            ClipMethod::Layerwise { c: 0.5 },
            WeightScheme::Heuristic { emphasis: 3.0 },
            10,
            Some(0.0),
        );
        let base_cfg = config(
            ClipMethod::Standard { c: 0.5 },
            WeightScheme::Lagrange,
            10,
            Some(0.0),
        );
        let risks = RiskProfile::uniform(1, 0.4).unwrap();
        let mut rng_a = seed::derive_rng(0, "noise");
        let mut rng_b = seed::derive_rng(0, "noise");
        let (lm_model, _) = lm_dpsgd_step(
            &model,
            &features,
            &target_refs,
            Loss::CrossEntropy,
            &lm_cfg,
            Some(&risks),
            0.0,
            0,
            &mut rng_a,
        )
        .unwrap();
        let (std_model, _) = baseline_step(
            &model,
            &features,
            &target_refs,
            Loss::CrossEntropy,
            &base_cfg,
            0.0,
            0,
            &mut rng_b,
        )
        .unwrap();
        for (a, b) in lm_model
            .flatten_params()
            .iter()
            .zip(std_model.flatten_params())
        {
            let denom = b.abs().max(1e-6);
            assert!((a - b).abs() / denom <= 1e-13, "{} vs {}", a, b);
        }
    }

    /// A batch of identical examples with flat risks reproduces the raw
    /// gradient exactly, so the logged bias is numerically zero.
    #[test]
    fn identical_batch_with_flat_risks_is_unbiased() {
        let model = model_2layer(5);
        let x = Tensor1::new(vec![0.4, -1.1]).unwrap();
        let y = one_hot(1, 2);
        let features: Vec<&Tensor1> = (0..8).map(|_| &x).collect();
        let targets: Vec<&Tensor1> = (0..8).map(|_| &y).collect();
        let cfg = config(
            ClipMethod::Layerwise { c: 100.0 },
            WeightScheme::Heuristic { emphasis: 1.0 },
            1,
            Some(0.0),
        );
        let risks = RiskProfile::uniform(2, 0.5).unwrap();
        let mut rng = seed::derive_rng(0, "noise");
        let (_, log) = lm_dpsgd_step(
            &model,
            &features,
            &targets,
            Loss::CrossEntropy,
            &cfg,
            Some(&risks),
            0.0,
            0,
            &mut rng,
        )
        .unwrap();
        assert!(log.bias_norm <= 1e-9, "bias {}", log.bias_norm);
    }

    /// On the same batch and state, the bias-minimizing weights never log a
    /// larger bias than the heuristic ones.
    #[test]
    fn lagrange_bias_at_most_heuristic_bias() {
        let data = blobs(40, 6);
        let model = model_2layer(6);
        let targets = data.one_hot_targets();
        let features: Vec<&Tensor1> = data.features().iter().collect();
        let target_refs: Vec<&Tensor1> = targets.iter().collect();
        let risks = RiskProfile::new(vec![0.45, 0.25]).unwrap();
        let run = |scheme: WeightScheme| {
            let cfg = config(ClipMethod::Layerwise { c: 0.3 }, scheme, 1, Some(0.0));
            let mut rng = seed::derive_rng(1, "noise");
            let (_, log) = lm_dpsgd_step(
                &model,
                &features,
                &target_refs,
                Loss::CrossEntropy,
                &cfg,
                Some(&risks),
                0.0,
                0,
                &mut rng,
            )
            .unwrap();
            log.bias_norm
        };
        let lagrange = run(WeightScheme::Lagrange);
        let heuristic = run(WeightScheme::Heuristic { emphasis: 2.0 });
        assert!(
            lagrange <= heuristic + 1e-12,
            "lagrange {} vs heuristic {}",
            lagrange,
            heuristic
        );
    }

    /// sigma = 0 with a threshold no gradient reaches: the baseline step is
    /// exact mini-batch SGD.
    #[test]
    fn inactive_clipping_reduces_to_plain_sgd() {
        let data = blobs(16, 7);
        let model = model_2layer(7);
        let targets = data.one_hot_targets();
        let features: Vec<&Tensor1> = data.features().iter().collect();
        let target_refs: Vec<&Tensor1> = targets.iter().collect();
        let cfg = config(
            ClipMethod::Standard { c: f64::INFINITY },
            WeightScheme::Lagrange,
            1,
            Some(0.0),
        );
        let mut rng = seed::derive_rng(2, "noise");
        let (stepped, log) = baseline_step(
            &model,
            &features,
            &target_refs,
            Loss::CrossEntropy,
            &cfg,
            0.0,
            0,
            &mut rng,
        )
        .unwrap();
        assert!(log.bias_norm <= 1e-12);

        let grads: Vec<_> = data
            .features()
            .iter()
            .zip(&targets)
            .map(|(x, y)| per_example_gradient(&model, x, y, Loss::CrossEntropy).unwrap())
            .collect();
        let mean = batch_mean_gradient(&grads).unwrap();
        let mut plain = model.clone();
        plain
            .apply_scaled_update(mean.blocks(), cfg.learning_rate.rate(1))
            .unwrap();
        for (a, b) in stepped.flatten_params().iter().zip(plain.flatten_params()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    /// update * |B| / eta on a zero-gradient batch is exactly the noise; its
    /// per-coordinate spread must match C * sigma.
    #[test]
    fn noise_scale_matches_specification() {
        // identity single layer, mse, targets equal to outputs -> zero grads
        let mut model =
            LayeredModel::new(vec![LayerSpec::new(2, 2, Activation::Identity)]).unwrap();
        model
            .set_layer_params(0, crate::tensor::Tensor2::identity(2), Tensor1::zeros(2))
            .unwrap();
        let x1 = Tensor1::new(vec![0.5, -0.25]).unwrap();
        let x2 = Tensor1::new(vec![-1.0, 2.0]).unwrap();
        let features = [&x1, &x2];
        let targets = [&x1, &x2]; // identity model output == input
        let cfg = config(
            ClipMethod::Standard { c: 2.0 },
            WeightScheme::Lagrange,
            1,
            Some(1.5),
        );
        let mut rng = seed::derive_rng(123, "noise");
        let eta = cfg.learning_rate.rate(1);
        let mut samples = Vec::new();
        for t in 0..2000u64 {
            let (stepped, _) = baseline_step(
                &model,
                &features,
                &targets,
                Loss::Mse,
                &cfg,
                1.5,
                t,
                &mut rng,
            )
            .unwrap();
            for (after, before) in stepped.flatten_params().iter().zip(model.flatten_params()) {
                samples.push((before - after) * 2.0 / eta); // |B| = 2
            }
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        let expected_std = 2.0 * 1.5; // C * sigma
        assert!(
            (var.sqrt() - expected_std).abs() <= 0.05 * expected_std,
            "std {} vs {}",
            var.sqrt(),
            expected_std
        );
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let mut cfg = config(
            ClipMethod::Layerwise { c: 1.0 },
            WeightScheme::Heuristic { emphasis: 0.5 },
            10,
            None,
        );
        assert!(cfg.validate().is_err()); // emphasis < 1
        cfg.weight_scheme = WeightScheme::Heuristic { emphasis: 1.0 };
        assert!(cfg.validate().is_ok());
        cfg.method = ClipMethod::Standard { c: -1.0 };
        assert!(cfg.validate().is_err());
    }
}
