//! Zero-shot self-supervised denoising for 3D CT projection volumes.
//!
//! The library turns a single noisy projection volume into its own training
//! set: a statistical pseudo-label bank built from nonlocal block matching
//! and a physics-constrained bank built from conjugate-ray replacement. A
//! small 3D convolutional network is then trained Noise2Noise-style on pairs
//! drawn from the two banks and applied back to the original volume.
//!
//! Alongside the denoiser the crate ships the full simulation and evaluation
//! harness needed to exercise it end to end on synthetic phantoms: a
//! ray-driven Radon projector, parallel- and fan-beam FBP, a Poisson plus
//! Gaussian low-dose model, detector-gain ring injection, and PSNR / SSIM /
//! RMSE reporting.
//!
//! Start with the runnable examples (`cargo run --release --example ...`)
//! or the `scout` binary, which exposes every pipeline stage as a
//! subcommand.

pub mod bank;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod rng;
pub mod simulate;
pub mod train;
pub mod volume;

pub use error::{Result, ScoutError};
pub use geometry::{
    conjugate_index, fbp_reconstruct, fbp_reconstruct_with, forward_project, BeamMode,
    ConjugateIndex, FbpFilter, ScanGeometry,
};
pub use rng::RandomSource;
pub use volume::{
    extract_block, load_image, load_projection, load_volume, save_image, save_projection,
    save_volume, Dims, ImageVolume, PatchBlock, ProjectionVolume, Volume,
};
