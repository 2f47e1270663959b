//! Experiment harness: data, corruptions, multi-seed training, comparisons,
//! convergence batches and plot tables, plus the `orthograd` command line.

pub mod cli;
pub mod compare;
pub mod config;
pub mod converge;
pub mod corrupt;
pub mod data;
pub mod error;
pub mod experiment;
pub mod plotdata;
pub mod record;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
