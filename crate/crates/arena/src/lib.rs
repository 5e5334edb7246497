//! The judge: submitters, phases and deadlines, evaluation of reference and
//! external submissions against hidden models, the war tournament, CSV export
//! and leaderboard views.

// `!(x > 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod board;
pub mod clock;
pub mod config;
mod error;
pub mod export;
pub mod judge;
pub mod protocol;
pub mod records;
pub mod sandbox;
pub mod setup;
pub mod store;
pub mod war;

pub use error::{ArenaError, Result};
pub use config::Config;
pub use judge::{Arena, Outcome};
