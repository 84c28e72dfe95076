//! Experiment harness: training runs, paired policy/planner evaluations,
//! latency benchmarks, the noise ablation, plots and log validation.

pub mod ablation;
pub mod bench;
pub mod cli;
pub mod config;
pub mod episode;
pub mod error;
pub mod eval;
pub mod plots;
pub mod profile;
pub mod schema;
pub mod train;

pub use error::{HarnessError, Result};
