//! File formats, experiment orchestration and the command-line runner on top
//! of `atlab-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod output;
pub mod run;
pub mod selftest;
pub mod suite;

pub use atlab_core;
pub use error::{AppError, Result};
