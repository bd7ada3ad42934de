//! Gradient norm constraint mechanisms.
//!
//! Four ways to bound a per-example gradient's l2 norm before noise is
//! added: plain threshold clipping, normalization toward unit norm with a
//! stabilizer, the non-monotonic variant that keeps the bound while reducing
//! deviation from the batch mean, and layer-wise reweighted clipping which
//! redistributes the clipped magnitude across layers under a unit-norm
//! weight vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{GradBlock, PerExampleGradient};
use crate::reweight::ReweightVector;

/// Which norm-constraint mechanism a training run uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ClipMethod {
    Standard { c: f64 },
    AutoS { r_stab: f64 },
    Psac { c: f64, r_stab: f64 },
    Layerwise { c: f64 },
}

impl ClipMethod {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            ClipMethod::Standard { c } | ClipMethod::Layerwise { c } => *c > 0.0,
            ClipMethod::AutoS { r_stab } => *r_stab > 0.0,
            ClipMethod::Psac { c, r_stab } => *c > 0.0 && *r_stab > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "clip method parameters out of range: {:?}",
                self
            )))
        }
    }

    /// The l2-sensitivity bound the mechanism guarantees, which also scales
    /// the Gaussian noise. Normalizing mechanisms bound outputs by 1.
    pub fn noise_sensitivity(&self) -> f64 {
        match self {
            ClipMethod::Standard { c } | ClipMethod::Psac { c, .. } | ClipMethod::Layerwise { c } => {
                *c
            }
            ClipMethod::AutoS { .. } => 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ClipMethod::Standard { .. } => "standard",
            ClipMethod::AutoS { .. } => "auto_s",
            ClipMethod::Psac { .. } => "psac",
            ClipMethod::Layerwise { .. } => "layerwise",
        }
    }
}

/// A norm-constrained gradient.
///
/// `clipped_norm` is the target norm of the mechanism. For layer-wise
/// clipping it equals `min(C, ||G||)`; the realized norm falls below it only
/// when some layer had a zero gradient.
#[derive(Debug, Clone)]
pub struct ClippedGradient {
    blocks: Vec<GradBlock>,
    clipped_norm: f64,
}

impl ClippedGradient {
    pub fn blocks(&self) -> &[GradBlock] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<GradBlock> {
        self.blocks
    }

    pub fn clipped_norm(&self) -> f64 {
        self.clipped_norm
    }

    /// Realized global l2 norm of the output.
    pub fn global_norm(&self) -> f64 {
        self.blocks
            .iter()
            .map(GradBlock::sum_of_squares)
            .sum::<f64>()
            .sqrt()
    }
}

fn scaled_blocks(g: &PerExampleGradient, scale: f64) -> Vec<GradBlock> {
    g.blocks()
        .iter()
        .map(|b| {
            let mut out = b.clone();
            out.scale_in_place(scale);
            out
        })
        .collect()
}

/// `g * min(1, C / ||G||)`. A zero gradient passes through unchanged.
pub fn clip_standard(g: &PerExampleGradient, c: f64) -> ClippedGradient {
    assert!(c > 0.0, "clipping threshold must be > 0");
    let norm = g.global_norm();
    let blocks = if norm > c {
        scaled_blocks(g, c / norm)
    } else {
        g.blocks().to_vec()
    };
    ClippedGradient {
        blocks,
        clipped_norm: c.min(norm),
    }
}

/// `g / (||G|| + r)`: gradients are driven toward (strictly below) unit
/// norm, so the mechanism's sensitivity bound is 1.
pub fn clip_auto_s(g: &PerExampleGradient, r_stab: f64) -> ClippedGradient {
    assert!(r_stab > 0.0, "stabilizer must be > 0");
    let norm = g.global_norm();
    let scale = 1.0 / (norm + r_stab);
    ClippedGradient {
        blocks: scaled_blocks(g, scale),
        clipped_norm: norm * scale,
    }
}

/// `g * C / (||G|| + r / (||G|| + r))`: non-monotonic in the input norm but
/// always bounded by `C`.
pub fn clip_psac(g: &PerExampleGradient, c: f64, r_stab: f64) -> ClippedGradient {
    assert!(c > 0.0 && r_stab > 0.0, "psac parameters must be > 0");
    let norm = g.global_norm();
    let scale = c / (norm + r_stab / (norm + r_stab));
    ClippedGradient {
        blocks: scaled_blocks(g, scale),
        clipped_norm: norm * scale,
    }
}

/// Layer-wise reweighted clipping: each layer block is rescaled to magnitude
/// `min(C, ||G||) * w^(l)` along its own direction; zero layer gradients stay
/// zero, in which case the realized norm falls below the target.
pub fn clip_layerwise(
    g: &PerExampleGradient,
    w: &ReweightVector,
    c: f64,
) -> Result<ClippedGradient> {
    assert!(c > 0.0, "clipping threshold must be > 0");
    if w.len() != g.layer_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} weight components vs {} layers",
            w.len(),
            g.layer_count()
        )));
    }
    let clipped_norm = c.min(g.global_norm());
    let blocks = g
        .blocks()
        .iter()
        .zip(g.layer_norms())
        .zip(w.components())
        .map(|((block, layer_norm), wl)| {
            let mut out = block.clone();
            if *layer_norm == 0.0 {
                out.scale_in_place(0.0);
            } else {
                out.scale_in_place(clipped_norm * wl / layer_norm);
            }
            out
        })
        .collect();
    Ok(ClippedGradient {
        blocks,
        clipped_norm,
    })
}
