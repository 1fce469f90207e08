//! Adversarial-training laboratory core.
//!
//! Everything in this crate is a pure function of its inputs and seeds:
//! datasets and label corruption, small differentiable classifiers with
//! hand-written backpropagation, the PGD-AT / TRADES / interpolated /
//! temporal-ensembling objectives, inner-maximization attacks, the training
//! loop, and the gradient-stability and complexity diagnostics.
//!
//! The crate is `no_std` (with `alloc`). File formats, configuration and the
//! command-line surface live in the `atlab` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod attacks;
pub mod complexity;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod schedule;
pub mod trainer;

pub use error::{Error, Result};
