//! File formats: VOL1 volumes, CKPT checkpoints, a NIfTI-1 subset, PGM
//! mosaics and the run configuration.

pub mod ckpt;
pub mod config;
pub mod nifti;
pub mod pgm;
pub mod vol1;
