//! Noise-to-norm reconstruction toolkit for industrial anomaly detection.
//!
//! Images are corrupted with blended Gaussian noise, a multiscale
//! encoder/decoder reconstructs the clean appearance, and per-pixel
//! dissimilarity between input and reconstruction localizes defects. The
//! whole pipeline — tensors with reverse-mode autodiff, structural
//! similarity losses, the reconstruction network, training, evaluation and
//! dataset tooling — lives in this crate; the `n2n` binary drives it.

pub mod cli;
pub mod config;
pub mod data_io;
pub mod evaluation;
pub mod error;
pub mod fingerprint;
pub mod model;
pub mod msssim;
pub mod noise;
pub mod rng;
pub mod training;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Shape, Tensor};
