//! Exact per-example gradients via backpropagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor1, Tensor2};

use super::{Activation, LayeredModel};

/// Per-example training loss.
///
/// Cross-entropy requires a softmax output layer; squared error requires an
/// element-wise final activation. The squared-error loss carries the usual
/// 1/2 factor so its gradient for a linear layer is `(y_hat - y) x^T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    CrossEntropy,
    Mse,
}

/// Gradient of one layer's parameters, shaped like [`super::LayerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBlock {
    pub weights: Tensor2,
    pub bias: Tensor1,
}

impl GradBlock {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weights: Tensor2::zeros(out_dim, in_dim),
            bias: Tensor1::zeros(out_dim),
        }
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.weights.as_slice().iter().map(|v| v * v).sum::<f64>()
            + self.bias.as_slice().iter().map(|v| v * v).sum::<f64>()
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for v in self.weights.as_mut_slice() {
            *v *= s;
        }
        for v in self.bias.as_mut_slice() {
            *v *= s;
        }
    }

    pub fn add_assign(&mut self, other: &GradBlock) {
        debug_assert_eq!(self.weights.as_slice().len(), other.weights.as_slice().len());
        for (a, b) in self
            .weights
            .as_mut_slice()
            .iter_mut()
            .zip(other.weights.as_slice())
        {
            *a += b;
        }
        for (a, b) in self.bias.as_mut_slice().iter_mut().zip(other.bias.as_slice()) {
            *a += b;
        }
    }

    pub fn same_shape(&self, other: &GradBlock) -> bool {
        self.weights.rows() == other.weights.rows()
            && self.weights.cols() == other.weights.cols()
            && self.bias.len() == other.bias.len()
    }

    /// Entries in flat order: weights row-major, then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.weights.as_slice().len() + self.bias.len());
        out.extend_from_slice(self.weights.as_slice());
        out.extend_from_slice(self.bias.as_slice());
        out
    }
}

/// Gradient of the per-example loss, partitioned into layer blocks with
/// cached layer-wise and global l2-norms.
#[derive(Debug, Clone)]
pub struct PerExampleGradient {
    blocks: Vec<GradBlock>,
    layer_norms: Vec<f64>,
    global_norm: f64,
}

impl PerExampleGradient {
    /// Wraps raw blocks, computing the norm caches.
    ///
    /// The global norm is derived from the same per-layer sums of squares as
    /// the layer norms, so `global^2 == sum(layer^2)` up to rounding.
    pub fn from_blocks(blocks: Vec<GradBlock>) -> Self {
        let sums: Vec<f64> = blocks.iter().map(GradBlock::sum_of_squares).collect();
        let layer_norms = sums.iter().map(|s| s.sqrt()).collect();
        let global_norm = sums.iter().sum::<f64>().sqrt();
        Self {
            blocks,
            layer_norms,
            global_norm,
        }
    }

    pub fn blocks(&self) -> &[GradBlock] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<GradBlock> {
        self.blocks
    }

    pub fn layer_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn layer_norms(&self) -> &[f64] {
        &self.layer_norms
    }

    pub fn global_norm(&self) -> f64 {
        self.global_norm
    }

    /// Flattens all blocks in layer order (weights row-major, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend_from_slice(b.weights.as_slice());
            out.extend_from_slice(b.bias.as_slice());
        }
        out
    }
}

/// One-hot encoding of a class label.
pub fn one_hot(label: usize, classes: usize) -> Tensor1 {
    let mut t = Tensor1::zeros(classes);
    t[label] = 1.0;
    t
}

fn check_loss_pairing(model: &LayeredModel, loss: Loss) -> Result<()> {
    let last = model.specs()[model.layer_count() - 1].activation;
    match (loss, last) {
        (Loss::CrossEntropy, Activation::SoftmaxOutput) => Ok(()),
        (Loss::CrossEntropy, _) => Err(Error::InvalidConfig(
            "cross-entropy requires a softmax-output final layer".into(),
        )),
        (Loss::Mse, Activation::SoftmaxOutput) => Err(Error::InvalidConfig(
            "mse is not defined for a softmax-output final layer".into(),
        )),
        (Loss::Mse, _) => Ok(()),
    }
}

fn check_target(model: &LayeredModel, target: &Tensor1) -> Result<()> {
    if target.len() != model.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "target length {} does not match model output dim {}",
            target.len(),
            model.output_dim()
        )));
    }
    Ok(())
}

/// Loss of a single example under the current parameters.
pub fn example_loss(model: &LayeredModel, x: &Tensor1, target: &Tensor1, loss: Loss) -> Result<f64> {
    check_loss_pairing(model, loss)?;
    check_target(model, target)?;
    let trace = model.forward_trace(x)?;
    match loss {
        Loss::CrossEntropy => {
            // log-softmax from the pre-activation keeps saturated outputs finite
            let z = &trace.final_pre_activation;
            let max = z
                .as_slice()
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let log_sum = z
                .as_slice()
                .iter()
                .map(|v| (v - max).exp())
                .sum::<f64>()
                .ln();
            let mut l = 0.0;
            for (y, zv) in target.as_slice().iter().zip(z.as_slice()) {
                if *y != 0.0 {
                    l -= y * (zv - max - log_sum);
                }
            }
            Ok(l)
        }
        Loss::Mse => {
            let out = trace.activations.last().unwrap();
            let l = out
                .as_slice()
                .iter()
                .zip(target.as_slice())
                .map(|(o, y)| (o - y) * (o - y))
                .sum::<f64>();
            Ok(0.5 * l)
        }
    }
}

/// Exact gradient of the per-example loss with respect to every parameter
/// block, with norm caches populated.
pub fn per_example_gradient(
    model: &LayeredModel,
    x: &Tensor1,
    target: &Tensor1,
    loss: Loss,
) -> Result<PerExampleGradient> {
    check_loss_pairing(model, loss)?;
    check_target(model, target)?;
    let trace = model.forward_trace(x)?;
    let depth = model.layer_count();
    let activations = &trace.activations;

    let output = &activations[depth - 1];
    let mut delta = Tensor1::zeros(output.len());
    match loss {
        Loss::CrossEntropy => {
            // softmax + cross-entropy: dL/dz = p - y
            for i in 0..output.len() {
                delta[i] = output[i] - target[i];
            }
        }
        Loss::Mse => {
            let act = model.specs()[depth - 1].activation;
            for i in 0..output.len() {
                delta[i] = (output[i] - target[i]) * act.derivative_from_output(output[i]);
            }
        }
    }

    let mut blocks: Vec<GradBlock> = Vec::with_capacity(depth);
    for l in (0..depth).rev() {
        let spec = model.specs()[l];
        let input = if l == 0 { x } else { &activations[l - 1] };
        let mut weights = Tensor2::zeros(spec.out_dim, spec.in_dim);
        for r in 0..spec.out_dim {
            let d = delta[r];
            let row = &mut weights.as_mut_slice()[r * spec.in_dim..(r + 1) * spec.in_dim];
            for (w, xv) in row.iter_mut().zip(input.as_slice()) {
                *w = d * xv;
            }
        }
        let bias = delta.clone();
        blocks.push(GradBlock { weights, bias });

        if l > 0 {
            let back = model.params()[l].weights.matvec_transposed(&delta);
            let prev_act = model.specs()[l - 1].activation;
            let prev_out = &activations[l - 1];
            let mut next_delta = Tensor1::zeros(back.len());
            for i in 0..back.len() {
                next_delta[i] = back[i] * prev_act.derivative_from_output(prev_out[i]);
            }
            delta = next_delta;
        }
    }
    blocks.reverse();
    Ok(PerExampleGradient::from_blocks(blocks))
}

/// Element-wise mean across a non-empty batch of equally shaped gradients.
///
/// The reduction runs in ascending example-index order so the result is
/// bitwise reproducible no matter how the inputs were produced.
pub fn batch_mean_gradient(grads: &[PerExampleGradient]) -> Result<PerExampleGradient> {
    let first = grads.first().ok_or(Error::EmptyBatch)?;
    for g in &grads[1..] {
        if g.layer_count() != first.layer_count()
            || g.blocks()
                .iter()
                .zip(first.blocks())
                .any(|(a, b)| !a.same_shape(b))
        {
            return Err(Error::ShapeMismatch(
                "gradients in batch have different shapes".into(),
            ));
        }
    }
    let mut acc: Vec<GradBlock> = first.blocks().to_vec();
    for g in &grads[1..] {
        for (a, b) in acc.iter_mut().zip(g.blocks()) {
            a.add_assign(b);
        }
    }
    let inv = 1.0 / grads.len() as f64;
    for a in &mut acc {
        a.scale_in_place(inv);
    }
    Ok(PerExampleGradient::from_blocks(acc))
}
