//! Simulation, likelihood expansions and estimation for one-dimensional
//! diffusions whose drift carries a periodic parametric signal:
//!
//! ```text
//! dξ_t = [S_θ(t/T) + b(ξ_t)] dt + σ(ξ_t) dW_t
//! ```
//!
//! The crate computes scores, Fisher information and log-likelihood ratios
//! along Euler paths and checks by Monte Carlo that the shape parameter θ is
//! estimable at rate `n^{-1/2}` and the period T at rate `n^{-3/2}`.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod ergodic;
pub mod error;
pub mod estimator;
pub mod fisher;
pub mod lan;
pub mod replicate;
pub mod sde;
pub mod signal;
pub mod stats;

pub use error::{Error, Result};
pub use fisher::{FisherMatrix, Provenance};
pub use lan::{LanReport, LocalScale};
pub use sde::{DiffusionSpec, Drift, Noise, PathRecord, Volatility};
pub use signal::{Signal, SignalSpec};
