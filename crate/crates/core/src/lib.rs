//! Structured Bayesian pruning: neural networks with group-shared truncated
//! log-normal multiplicative noise, trained by stochastic variational
//! inference, then pruned by signal-to-noise ratio and physically compacted.

pub mod data;
pub mod error;
pub mod net;
pub mod pipeline;
pub mod sbp;
pub mod truncmath;

pub use error::{Error, Result};
pub use net::{Network, NetworkSpec, Tensor};
pub use sbp::{GroupPattern, PruneReport, SbpLayer};
