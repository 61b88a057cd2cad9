//! Out-of-distribution detection for multispectral reflectance spectra.
//!
//! An ensemble of normalizing flows is trained by maximum likelihood on band
//! measurements; the WAIC score `Var[log p(x|Θ)] − E[log p(x|Θ)]` over the
//! ensemble members flags spectra that lie outside the training
//! distribution. A built-in tissue-spectrum simulator and virtual cameras
//! provide data for the validation experiments in [`harness`].

pub mod datasets;
pub mod error;
pub mod flow;
pub mod harness;
pub mod numcore;
pub mod simulator;
pub mod waic;

pub use error::{Error, Result};
