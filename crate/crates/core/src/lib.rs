//! Contact localization on a serial-chain robot from proprioceptive
//! measurements, via a conditional denoising diffusion model.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`robot`]: kinematics, capsule geometry, analytic SDFs.
//! - [`physics`]: contact wrench synthesis, friction cones, observer emulation.
//! - [`qp`]: friction-cone-constrained least squares (contact likelihood).
//! - [`nn`]: minimal deterministic network substrate with reverse-mode
//!   gradients and Adam.
//! - [`diffusion`]: noise schedule, forward/reverse processes, DDIM, the
//!   conditioned denoiser, training and recursive inference.
//! - [`classifier`]: single- vs dual-contact state classifier.
//! - [`datagen`]: scenario simulation, window slicing, dataset files.
//! - [`metrics`]: M-RMSE, C-RMSE, QP error decomposition, failure rate.
//! - [`pf`]: particle-filter baseline for comparison.
//! - [`pipeline`]: run configuration and end-to-end orchestration.

pub mod classifier;
pub mod datagen;
pub mod diffusion;
pub mod error;
pub mod geom;
pub mod kmeans;
pub mod mat;
pub mod metrics;
pub mod nn;
pub mod parallel;
pub mod pf;
pub mod physics;
pub mod pipeline;
pub mod qp;
pub mod rng;
pub mod robot;
pub mod svg;
