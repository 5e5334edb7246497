//! Numerical core of the Maestro judge.
//!
//! This crate holds everything that touches model math:
//!
//! - [`model`], [`train`], [`data`] and [`weights`]: a small dense/conv network
//!   stack used to build the hidden models submissions are benchmarked against.
//! - [`oracle`]: the query-metered interface through which every attack sees a
//!   hidden model.
//! - [`attack`]: FGSM, PGD and a black-box genetic attack, plus the harness that
//!   measures an attack's raw metrics.
//! - [`defense`]: adversarial training and the robustness harness.
//! - [`scoring`]: normalized sub-scores and weighted-sum overall scores.
//!
//! Model math is `f32`; scoring is `f64`.

// `!(x > 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod data;
pub mod defense;
mod error;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod scoring;
pub mod tensor;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::Tensor;
