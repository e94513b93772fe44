//! Conditional temporal-GAN toolkit for 3-D PET-like volume synthesis,
//! segmentation and radiomic evaluation.
//!
//! The crate bundles a small reverse-mode autodiff engine, singular value
//! clipping via Jacobi SVD, a Wasserstein training loop, procedural head
//! phantoms, a residual U-Net with squeeze-and-excitation normalization,
//! GLCM radiomics with Welch statistics, and the file formats and commands
//! that tie them together.

pub mod autodiff;
pub mod commands;
pub mod error;
pub mod io;
pub mod prng;
pub mod phantom;
pub mod radiomics;
pub mod seg;
pub mod stats;
pub mod spectral;
pub mod tgan;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
