//! Conditional normalizing flows for fast calorimeter-response surrogates.
//!
//! The crate trains a masked-autoregressive-flow (MAF) teacher on
//! preprocessed detector responses, distills it into an inverse-autoregressive
//! -flow (IAF) student whose sampling needs one masked-network pass per layer,
//! and evaluates both with channel-based Wasserstein and per-condition MAE
//! metrics plus shower-shape statistics and a sampling-speed benchmark.
//!
//! Module map:
//!
//! - [`nn`]: masked dense networks, reverse-mode tape, Adam.
//! - [`rqs`]: monotone rational-quadratic spline transforms.
//! - [`flow`]: MAF/IAF stacks, teacher training, student distillation.
//! - [`physics`]: channel sums, preprocessing chain, diversity weights.
//! - [`data`]: synthetic dataset generation, splits, binary I/O.
//! - [`eval`]: metric battery and the sampling benchmark.
//! - [`pipeline`]: end-to-end orchestration shared by the CLI and tests.

pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod linalg;
pub mod nn;
pub mod physics;
pub mod pipeline;
pub mod rng;
pub mod rqs;

pub use error::{Error, Result};
pub use linalg::Matrix;
