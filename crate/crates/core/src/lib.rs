//! Degradation-aware diffusion guidance for blind super-resolution, at a scale
//! that trains and evaluates on a desktop CPU.
//!
//! Layers, bottom-up:
//! - [`tensor`]: dense tensors, reverse-mode autodiff, Adam.
//! - [`linops`]: explicit degradation matrices, Jacobi SVD, pseudo-inverses and
//!   range-null rectification.
//! - [`degradation`]: anisotropic Gaussian kernels, strided blur-downsampling,
//!   procedural HR images and paired datasets.
//! - [`diffusion`]: DDPM schedule, respacing, noise-prediction network,
//!   training and unconditional sampling.
//! - [`daware`]: encoder, degradation and restoration networks and their joint
//!   training.
//! - [`guidance`]: DDNM, implicit (learned) guidance with input perturbation
//!   and guidance scalar, explicit kernel estimation and the combined mode.
//! - [`eval`]: metrics, file formats, configuration and experiment reports.

pub mod daware;
pub mod degradation;
pub mod diffusion;
pub mod eval;
pub mod guidance;
pub mod linops;
pub mod rng;
pub mod selftest;
pub mod tensor;

pub use tensor::{Tensor, TensorError};

use thiserror::Error;

/// Errors from the model, sampling and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error(transparent)]
    Linops(#[from] linops::LinopsError),
    #[error(transparent)]
    Degradation(#[from] degradation::DegradationError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("non-finite value at step {step}: {context}")]
    NonFinite { step: usize, context: String },
    #[error("numerical guard: {0}")]
    Numerical(String),
    #[error(transparent)]
    Archive(#[from] eval::archive::ArchiveError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
