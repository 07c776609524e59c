//! Structured noise layer: group-shared truncated log-normal multiplicative
//! noise with a truncated log-uniform prior, and the SNR pruning rule.

mod layer;
mod pattern;

pub use layer::{
    PruneReport, SbpLayer, DEFAULT_A, DEFAULT_B, DEFAULT_THRESHOLD, INIT_MU, INIT_SIGMA, LOG_SIGMA_RANGE,
    MU_RANGE,
};
pub use pattern::{GroupPattern, GroupSpec};
