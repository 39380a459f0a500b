//! Active noise control with adaptive filters constrained to a learned latent
//! space.
//!
//! - [`acoustics`]: shoebox room impulse responses and reverberation time.
//! - [`anc`]: block FxLMS, the plant simulation and error traces.
//! - [`neural`]: the spectral autoencoder, its gradients and model files.
//! - [`training`]: the converged-filter dataset and autoencoder training.
//! - [`latent`]: the latent-space FxLMS controller and step-size tuning.
//! - [`harness`]: trials, convergence and gain metrics, reports and the end-to-end pipeline.

pub mod acoustics;
pub mod anc;
pub mod error;
pub mod harness;
pub mod io;
pub mod latent;
pub mod neural;
pub mod training;

pub use error::{Error, Result};
