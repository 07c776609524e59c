//! Scalar numerics for the truncated normal / truncated log-normal family.
//!
//! Everything here works in `f64` regardless of the tensor precision used by
//! the network; gradient checks need the extra headroom. Tail-sensitive
//! quantities (the normalizer `Z`, moments, SNR) are evaluated in log space
//! on top of the scaled complementary error function, so they stay finite
//! when the naive closed forms produce `0/0` or `∞·0`. When the support sits
//! deep in one tail of the underlying normal, statistics are instead written
//! in terms of the distance to the near bound, which avoids cancelling
//! `±y²/2` exponents.

use std::fmt;

pub mod special;
mod trunc;

pub use special::{
    erf, erfc, erfcx, inv_std_normal_cdf, log_diff_std_normal_cdf, log_std_normal_cdf,
    std_normal_cdf, std_normal_pdf, std_normal_sf,
};
pub use trunc::{
    kl_grad, kl_trunc_logn_vs_trunc_logu, mean_trunc_lognormal, moments, sample_grad,
    sample_trunc_lognormal, snr_trunc_lognormal, trunc_normal_entropy, variance_trunc_lognormal,
    KlGrad, Moments, SampleGrad, TruncParams, TruncSampler, U_EPS,
};

/// Invalid argument to a truncmath routine.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainError {
    msg: String,
}

impl DomainError {
    pub(crate) fn new(msg: impl Into<String>) -> Self {
        Self { msg: msg.into() }
    }
}

impl fmt::Display for DomainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "domain error: {}", self.msg)
    }
}

impl std::error::Error for DomainError {}
