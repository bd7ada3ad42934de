//! Layer-wise MIA-risk-aware differentially private SGD at desk scale.
//!
//! The crate covers the full pipeline: dense layered models with exact
//! per-example gradients ([`nn`]), the four gradient-norm-constraint
//! mechanisms ([`clip`]), layer-wise reweighting schemes ([`reweight`]),
//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism
//! ([`accountant`]), shadow-model membership-risk estimation ([`risk`]),
//! private training ([`trainer`]), IR-level attack evaluation ([`mia`]) and
//! the config-driven experiment runner ([`experiment`]).

pub mod accountant;
pub mod clip;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod mia;
pub mod model_io;
pub mod nn;
pub mod reweight;
pub mod risk;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
