//! Deterministic numerics shared by the rest of the crate.

pub mod adam;
pub mod linalg;
pub mod mlp;
pub mod rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use linalg::{log_abs_det, symmetric_eigen};
pub use mlp::{gaussian_init, relu, relu_derivative, Dense, Mlp, MlpCache, MLP_DEPTH};
pub use rng::{mix_seed, Rng};
