//! Diffusion-generated time series detection.
//!
//! The crate trains small denoising-diffusion generators over multivariate
//! time series windows and builds two families of detectors on top of them:
//!
//! * a white-box detector ([`whitebox`]) that scores a window by how well a
//!   reference generator reconstructs it under DDIM inversion and denoising;
//! * black-box classifiers ([`blackbox`]) trained directly on raw windows.
//!
//! [`harness`] runs the in-distribution / out-of-distribution protocol over a
//! zoo of generators and emits metric tables, quality reports and the raw
//! score distributions.
//!
//! Per-window work (reconstruction, generation, scoring, per-sample gradients)
//! fans out over rayon when the `parallel` feature is enabled. Every reduction
//! runs in a fixed order, so results do not depend on the worker count.

pub mod blackbox;
pub mod dataio;
pub mod diffusion;
mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod quality;
pub mod rng;
pub mod whitebox;

pub use error::{Error, Result};
