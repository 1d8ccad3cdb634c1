//! Benchmark for compositional generalization of unsupervised
//! representations: factored image data, β-VAE / β-TCVAE / emergent-language
//! autoencoders, few-label readout probes and disentanglement metrics.

pub mod arch;
pub mod checkpoint;
pub mod data;
pub mod el;
pub mod error;
pub mod extract;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod orchestrate;
pub mod readout;
pub mod seed;
pub mod train;
pub mod vae;
pub mod verify;

pub use error::{Error, Result};
