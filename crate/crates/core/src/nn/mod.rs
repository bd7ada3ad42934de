//! Dense layered models with intermediate-representation capture.
//!
//! A model is an ordered stack of fully connected layers. One layer means one
//! `(weight, bias)` pair plus an activation; the post-activation output of
//! layer `l` is the intermediate representation (IR) exposed for that layer.
//! Softmax is only allowed on the final layer, where it plays the role of a
//! classification head.

mod gradient;
mod sgd;

pub use gradient::{
    batch_mean_gradient, example_loss, one_hot, per_example_gradient, GradBlock, Loss,
    PerExampleGradient,
};
pub use sgd::{sgd_train, SgdOptions};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor1, Tensor2};

/// Element-wise (or, for softmax, vector-valued) layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    SoftmaxOutput,
}

impl Activation {
    fn apply(&self, z: &Tensor1) -> Tensor1 {
        match self {
            Activation::Relu => {
                let mut out = z.clone();
                for v in out.as_mut_slice() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                out
            }
            Activation::Tanh => {
                let mut out = z.clone();
                for v in out.as_mut_slice() {
                    *v = v.tanh();
                }
                out
            }
            Activation::Identity => z.clone(),
            Activation::SoftmaxOutput => softmax(z),
        }
    }

    /// Derivative evaluated from the post-activation value.
    ///
    /// Only defined for element-wise activations; softmax gradients are fused
    /// with the cross-entropy loss during backpropagation.
    fn derivative_from_output(&self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
            Activation::SoftmaxOutput => {
                unreachable!("softmax derivative is handled by the loss")
            }
        }
    }
}

fn softmax(z: &Tensor1) -> Tensor1 {
    let max = z
        .as_slice()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = Tensor1::zeros(z.len());
    let mut sum = 0.0;
    for (o, v) in out.as_mut_slice().iter_mut().zip(z.as_slice()) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.as_mut_slice() {
        *o /= sum;
    }
    out
}

/// Shape and activation of a single dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// One layer's parameters: weight matrix of shape `(out_dim, in_dim)` plus a
/// bias vector of length `out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor2,
    pub bias: Tensor1,
}

/// Post-activation outputs of every layer for a single input.
#[derive(Debug, Clone)]
pub struct IrCapture {
    per_layer: Vec<Tensor1>,
}

impl IrCapture {
    /// IR of layer `l` (0-based).
    pub fn layer(&self, l: usize) -> &Tensor1 {
        &self.per_layer[l]
    }

    pub fn layer_count(&self) -> usize {
        self.per_layer.len()
    }
}

/// A feedforward network whose parameters are partitioned into `L` layer
/// blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredModel {
    specs: Vec<LayerSpec>,
    params: Vec<LayerParams>,
}

impl LayeredModel {
    /// Builds a model with all parameters zero.
    pub fn new(specs: Vec<LayerSpec>) -> Result<Self> {
        validate_specs(&specs)?;
        let params = specs
            .iter()
            .map(|s| LayerParams {
                weights: Tensor2::zeros(s.out_dim, s.in_dim),
                bias: Tensor1::zeros(s.out_dim),
            })
            .collect();
        Ok(Self { specs, params })
    }

    /// Builds a model with Xavier-uniform weights and zero biases.
    pub fn init_random<R: Rng + ?Sized>(specs: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let mut model = Self::new(specs)?;
        for (spec, params) in model.specs.iter().zip(model.params.iter_mut()) {
            let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
            for w in params.weights.as_mut_slice() {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(model)
    }

    pub fn layer_count(&self) -> usize {
        self.specs.len()
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn input_dim(&self) -> usize {
        self.specs[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].out_dim
    }

    /// Forward pass returning only the final output.
    pub fn forward(&self, x: &Tensor1) -> Result<Tensor1> {
        Ok(self.forward_trace(x)?.activations.pop().unwrap())
    }

    /// Forward pass returning the output and every layer's post-activation IR.
    pub fn forward_with_irs(&self, x: &Tensor1) -> Result<(Tensor1, IrCapture)> {
        let trace = self.forward_trace(x)?;
        let per_layer = trace.activations;
        let output = per_layer.last().unwrap().clone();
        Ok((output, IrCapture { per_layer }))
    }

    /// Index of the highest-scoring output unit.
    pub fn predict_class(&self, x: &Tensor1) -> Result<usize> {
        let out = self.forward(x)?;
        let mut best = 0;
        for i in 1..out.len() {
            if out[i] > out[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Full forward trace: post-activations of every layer plus the final
    /// pre-activation (needed for numerically safe cross-entropy).
    pub(crate) fn forward_trace(&self, x: &Tensor1) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input length {} does not match model input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut activations = Vec::with_capacity(self.layer_count());
        let mut current = x.clone();
        let mut final_pre = Tensor1::zeros(0);
        for (l, (spec, params)) in self.specs.iter().zip(&self.params).enumerate() {
            let mut z = params.weights.matvec(&current);
            for (zv, b) in z.as_mut_slice().iter_mut().zip(params.bias.as_slice()) {
                *zv += b;
            }
            if l + 1 == self.layer_count() {
                final_pre = z.clone();
            }
            current = spec.activation.apply(&z);
            activations.push(current.clone());
        }
        Ok(ForwardTrace {
            activations,
            final_pre_activation: final_pre,
        })
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.specs
            .iter()
            .map(|s| s.out_dim * s.in_dim + s.out_dim)
            .sum()
    }

    /// Parameters flattened in layer order: weights row-major, then bias.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in &self.params {
            out.extend_from_slice(p.weights.as_slice());
            out.extend_from_slice(p.bias.as_slice());
        }
        out
    }

    /// Writes a flat parameter vector back, inverse of [`flatten_params`].
    ///
    /// [`flatten_params`]: LayeredModel::flatten_params
    pub fn set_params_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let w = p.weights.as_mut_slice();
            w.copy_from_slice(&flat[offset..offset + w.len()]);
            offset += w.len();
            let b = p.bias.as_mut_slice();
            b.copy_from_slice(&flat[offset..offset + b.len()]);
            offset += b.len();
        }
        Ok(())
    }

    /// Splits a flat vector into per-layer gradient-shaped blocks.
    pub fn blocks_from_flat(&self, flat: &[f64]) -> Result<Vec<GradBlock>> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "flat vector has length {}, expected {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut blocks = Vec::with_capacity(self.layer_count());
        let mut offset = 0;
        for spec in &self.specs {
            let wlen = spec.out_dim * spec.in_dim;
            let weights = Tensor2::new(
                spec.out_dim,
                spec.in_dim,
                flat[offset..offset + wlen].to_vec(),
            )?;
            offset += wlen;
            let bias = Tensor1::new(flat[offset..offset + spec.out_dim].to_vec())?;
            offset += spec.out_dim;
            blocks.push(GradBlock { weights, bias });
        }
        Ok(blocks)
    }

    /// `W <- W - scale * blocks`, block shapes must match the model.
    pub fn apply_scaled_update(&mut self, blocks: &[GradBlock], scale: f64) -> Result<()> {
        if blocks.len() != self.layer_count() {
            return Err(Error::ShapeMismatch(format!(
                "update has {} blocks, model has {} layers",
                blocks.len(),
                self.layer_count()
            )));
        }
        for (p, g) in self.params.iter_mut().zip(blocks) {
            if p.weights.rows() != g.weights.rows()
                || p.weights.cols() != g.weights.cols()
                || p.bias.len() != g.bias.len()
            {
                return Err(Error::ShapeMismatch("update block shape".into()));
            }
            for (w, gw) in p
                .weights
                .as_mut_slice()
                .iter_mut()
                .zip(g.weights.as_slice())
            {
                *w -= scale * gw;
            }
            for (b, gb) in p.bias.as_mut_slice().iter_mut().zip(g.bias.as_slice()) {
                *b -= scale * gb;
            }
        }
        Ok(())
    }

    pub fn params_are_finite(&self) -> bool {
        self.params.iter().all(|p| {
            p.weights.as_slice().iter().all(|v| v.is_finite())
                && p.bias.as_slice().iter().all(|v| v.is_finite())
        })
    }

    /// Replaces one layer's parameters, used by tests and fixtures.
    pub fn set_layer_params(&mut self, l: usize, weights: Tensor2, bias: Tensor1) -> Result<()> {
        let spec = self.specs[l];
        if weights.rows() != spec.out_dim
            || weights.cols() != spec.in_dim
            || bias.len() != spec.out_dim
        {
            return Err(Error::ShapeMismatch(format!(
                "layer {} expects weights {}x{} and bias {}",
                l, spec.out_dim, spec.in_dim, spec.out_dim
            )));
        }
        self.params[l] = LayerParams { weights, bias };
        Ok(())
    }
}

pub(crate) struct ForwardTrace {
    pub activations: Vec<Tensor1>,
    pub final_pre_activation: Tensor1,
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::InvalidConfig("model needs at least one layer".into()));
    }
    for (l, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "layer {} has zero dimension",
                l
            )));
        }
        if s.activation == Activation::SoftmaxOutput && l + 1 != specs.len() {
            return Err(Error::InvalidConfig(format!(
                "softmax-output only permitted on the final layer, found on layer {}",
                l
            )));
        }
    }
    for w in specs.windows(2) {
        if w[0].out_dim != w[1].in_dim {
            return Err(Error::ShapeMismatch(format!(
                "adjacent layer dims do not chain: {} -> {}",
                w[0].out_dim, w[1].in_dim
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn t1(v: &[f64]) -> Tensor1 {
        Tensor1::new(v.to_vec()).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut model =
            LayeredModel::new(vec![LayerSpec::new(2, 2, Activation::Identity)]).unwrap();
        model
            .set_layer_params(0, Tensor2::identity(2), Tensor1::zeros(2))
            .unwrap();
        let (out, irs) = model.forward_with_irs(&t1(&[1.0, 2.0])).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 2.0]);
        assert_eq!(irs.layer(0).as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_layer_zeroes_negative_entries() {
        let mut model = LayeredModel::new(vec![LayerSpec::new(2, 2, Activation::Relu)]).unwrap();
        model
            .set_layer_params(0, Tensor2::identity(2), Tensor1::zeros(2))
            .unwrap();
        let out = model.forward(&t1(&[-1.0, 3.0])).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 3.0]);
    }

    #[test]
    fn two_layer_tanh_softmax_matches_hand_computation() {
        // Hand-computed forward pass:
        //   layer 1: z = W1 x + b1, a = tanh(z)
        //     W1 = [[0.5, -0.25], [0.1, 0.3]], b1 = (0.1, -0.2), x = (1, 2)
        //     z1 = (0.5*1 - 0.25*2 + 0.1, 0.1*1 + 0.3*2 - 0.2) = (0.1, 0.5)
        //     a1 = (tanh 0.1, tanh 0.5)
        //   layer 2: z = W2 a1 + b2, softmax
        //     W2 = [[1.0, 0.0], [0.0, 1.0]], b2 = (0, 0) -> z2 = a1
        let mut model = LayeredModel::new(vec![
            LayerSpec::new(2, 2, Activation::Tanh),
            LayerSpec::new(2, 2, Activation::SoftmaxOutput),
        ])
        .unwrap();
        model
            .set_layer_params(
                0,
                Tensor2::new(2, 2, vec![0.5, -0.25, 0.1, 0.3]).unwrap(),
                t1(&[0.1, -0.2]),
            )
            .unwrap();
        model
            .set_layer_params(1, Tensor2::identity(2), Tensor1::zeros(2))
            .unwrap();

        let (out, irs) = model.forward_with_irs(&t1(&[1.0, 2.0])).unwrap();
        let a1 = (0.1f64.tanh(), 0.5f64.tanh());
        let e0 = a1.0.exp();
        let e1 = a1.1.exp();
        let expected = (e0 / (e0 + e1), e1 / (e0 + e1));

        assert!((out[0] - expected.0).abs() < 1e-15);
        assert!((out[1] - expected.1).abs() < 1e-15);
        assert!((out[0] + out[1] - 1.0).abs() < 1e-12);
        assert!((irs.layer(0)[0] - a1.0).abs() < 1e-15);
        assert_eq!(irs.layer(1).as_slice(), out.as_slice());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let model = LayeredModel::init_random(
            vec![
                LayerSpec::new(3, 5, Activation::Tanh),
                LayerSpec::new(5, 2, Activation::SoftmaxOutput),
            ],
            &mut rng,
        )
        .unwrap();
        let x = t1(&[0.3, -1.2, 0.8]);
        let a = model.forward(&x).unwrap();
        let b = model.forward(&x).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = LayeredModel::new(vec![LayerSpec::new(2, 2, Activation::Identity)]).unwrap();
        assert!(matches!(
            model.forward(&t1(&[1.0])),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn softmax_must_be_final() {
        let err = LayeredModel::new(vec![
            LayerSpec::new(2, 2, Activation::SoftmaxOutput),
            LayerSpec::new(2, 2, Activation::Identity),
        ]);
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn non_chaining_dims_rejected() {
        let err = LayeredModel::new(vec![
            LayerSpec::new(2, 3, Activation::Identity),
            LayerSpec::new(4, 2, Activation::Identity),
        ]);
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn flatten_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut model = LayeredModel::init_random(
            vec![
                LayerSpec::new(2, 3, Activation::Relu),
                LayerSpec::new(3, 2, Activation::Identity),
            ],
            &mut rng,
        )
        .unwrap();
        let flat = model.flatten_params();
        assert_eq!(flat.len(), model.param_count());
        let copy = model.clone();
        model.set_params_from_flat(&flat).unwrap();
        assert_eq!(model, copy);
    }
}
