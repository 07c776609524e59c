use std::f64::consts::FRAC_1_SQRT_2;

use super::special::{
    erfcx, inv_std_normal_cdf_from_log, inv_std_normal_cdf_lower, log_add_exp, log_diff_std_normal_cdf,
    log_std_normal_cdf, log_std_normal_pdf, log_std_normal_sf, std_normal_cdf, std_normal_sf,
    LN_SQRT_2PI,
};
use super::DomainError;

/// Uniform draws fed to the inverse-CDF transform come from
/// `(U_EPS, 1 - U_EPS)` so the quantile stays finite.
pub const U_EPS: f64 = 1e-7;

/// Parameters of a normal `N(mu, sigma²)` truncated to `[a, b]`; in the
/// log-normal reading `[a, b]` bounds `log θ`.
///
/// Construction validates the parameters and caches the standardized
/// bounds and `ln Z`, so every routine taking a `&TruncParams` is total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncParams {
    mu: f64,
    sigma: f64,
    a: f64,
    b: f64,
    alpha: f64,
    beta: f64,
    log_z: f64,
    tail: Option<OneSided>,
}

/// Support lying entirely in one tail of the untruncated normal, with the
/// far bound's mass negligible: `t = edge ∓ σ·s` where the distance `s ≥ 0`
/// from the near bound has density `∝ exp(−y·s − s²/2)`.
///
/// Written this way every statistic is a ratio of the bounded integrals
/// `I_k(y) = ∫₀^∞ s^k e^{−ys−s²/2} ds`, and the `±y²/2` exponents that make
/// the generic formulas cancel catastrophically never appear.
#[derive(Debug, Clone, Copy, PartialEq)]
struct OneSided {
    /// `|standardized near bound|`, at least [`ONE_SIDED_MIN_Y`].
    y: f64,
    /// `+1` when the support sits below the mean (`θ = e^b·e^{−σs}`), `−1`
    /// when above (`θ = e^a·e^{σs}`).
    dir: f64,
    /// Near bound in `log θ` units.
    edge: f64,
}

const ONE_SIDED_MIN_Y: f64 = 1.0;
/// Far-bound mass ratio below which it is dropped (`e^{−40} ≈ 4e−18`).
const FAR_TAIL_LOG_RATIO: f64 = -40.0;
const SQRT_FRAC_PI_2: f64 = 1.253_314_137_315_500_251_207_882_642_405_522_6;

/// `ln I₀(x)` with `I₀(x) = ∫₀^∞ e^{−xs − s²/2} ds = √(π/2)·erfcx(x/√2)`;
/// for `x < 0`, `I₀(x) = √(2π)·e^{x²/2}·(1 − Φ(x))`.
fn ln_i0(x: f64) -> f64 {
    if x >= 0.0 {
        (SQRT_FRAC_PI_2 * erfcx(x * FRAC_1_SQRT_2)).ln()
    } else {
        0.5 * x * x + LN_SQRT_2PI + (-std_normal_cdf(x)).ln_1p()
    }
}

/// `I_k / I_{k−1}` for `k = 1..=n` (so `E s = r₁`, `E s² = r₁r₂`, …) from the
/// backward continued fraction `r_k = k / (y + r_{k+1})`, which involves no
/// subtraction. The depth needed grows like `1/y²`; `y ≥ 1` here.
fn moment_ratios<const N: usize>(y: f64) -> [f64; N] {
    let depth = N + 20 + (700.0 / (y * y)).ceil() as usize;
    let mut r = [0.0; N];
    let mut x = 0.0;
    for k in (1..=depth).rev() {
        x = k as f64 / (y + x);
        if k <= N {
            r[k - 1] = x;
        }
    }
    r
}

impl TruncParams {
    pub fn new(mu: f64, sigma: f64, a: f64, b: f64) -> Result<Self, DomainError> {
        if !(mu.is_finite() && sigma.is_finite() && a.is_finite() && b.is_finite()) {
            return Err(DomainError::new(format!(
                "parameters must be finite (mu={mu}, sigma={sigma}, a={a}, b={b})"
            )));
        }
        if sigma <= 0.0 {
            return Err(DomainError::new(format!("sigma must be positive, got {sigma}")));
        }
        if a >= b {
            return Err(DomainError::new(format!("truncation requires a < b, got [{a}, {b}]")));
        }
        let alpha = (a - mu) / sigma;
        let beta = (b - mu) / sigma;
        let log_z = log_diff_std_normal_cdf(alpha, beta);
        if !log_z.is_finite() {
            return Err(DomainError::new(format!(
                "normalizer underflows for mu={mu}, sigma={sigma} on [{a}, {b}]"
            )));
        }
        let tail = if beta <= -ONE_SIDED_MIN_Y
            && log_std_normal_cdf(alpha) - log_std_normal_cdf(beta) < FAR_TAIL_LOG_RATIO
        {
            Some(OneSided { y: -beta, dir: 1.0, edge: b })
        } else if alpha >= ONE_SIDED_MIN_Y
            && log_std_normal_sf(beta) - log_std_normal_sf(alpha) < FAR_TAIL_LOG_RATIO
            // E θ² tilts the mass back toward the far bound
            && log_std_normal_sf(beta - 2.0 * sigma) - log_std_normal_sf(alpha - 2.0 * sigma) < FAR_TAIL_LOG_RATIO
        {
            Some(OneSided { y: alpha, dir: -1.0, edge: a })
        } else {
            None
        };
        Ok(Self { mu, sigma, a, b, alpha, beta, log_z, tail })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// `(a - mu) / sigma`
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `(b - mu) / sigma`
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `ln(Φ(β) − Φ(α))`
    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    /// `φ(α)/Z` and `φ(β)/Z`, the inverse Mills-type ratios that appear in
    /// the entropy and its derivatives.
    fn boundary_ratios(&self) -> (f64, f64) {
        (
            (log_std_normal_pdf(self.alpha) - self.log_z).exp(),
            (log_std_normal_pdf(self.beta) - self.log_z).exp(),
        )
    }
}

/// Differential entropy of the truncated normal in log space:
/// `ln(√(2πe)·σ·Z) + (αφ(α) − βφ(β)) / (2Z)`.
pub fn trunc_normal_entropy(p: &TruncParams) -> f64 {
    if let Some(t) = p.tail {
        // ln Z and the boundary term each grow like y²/2 and cancel.
        let [r1] = moment_ratios::<1>(t.y);
        return 0.5 + p.sigma.ln() + ln_i0(t.y) + 0.5 * t.y * r1;
    }
    let (ra, rb) = p.boundary_ratios();
    LN_SQRT_2PI + 0.5 + p.sigma.ln() + p.log_z + 0.5 * (p.alpha * ra - p.beta * rb)
}

/// KL divergence from the truncated log-normal posterior to the truncated
/// log-uniform prior on the same support; equals `ln(b − a) − H`.
pub fn kl_trunc_logn_vs_trunc_logu(p: &TruncParams) -> f64 {
    (p.b - p.a).ln() - trunc_normal_entropy(p)
}

/// Partial derivatives of the KL with respect to `mu` and `sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlGrad {
    pub d_mu: f64,
    pub d_sigma: f64,
}

pub fn kl_grad(p: &TruncParams) -> KlGrad {
    let s = p.sigma;
    if let Some(t) = p.tail {
        // With w = E s² and 1/I₀ = y + r₁ (the near-bound Mills ratio):
        // dH/dμ = ∓w/(2σI₀), dH/dσ = (2 + y·w/I₀)/(2σ).
        let [r1, r2] = moment_ratios::<2>(t.y);
        let w_over_i0 = r1 * r2 * (t.y + r1);
        return KlGrad { d_mu: t.dir * w_over_i0 / (2.0 * s), d_sigma: -(2.0 + t.y * w_over_i0) / (2.0 * s) };
    }
    let (ra, rb) = p.boundary_ratios();
    let (al, be) = (p.alpha, p.beta);
    // N/Z with N = αφ(α) − βφ(β)
    let n_over_z = al * ra - be * rb;
    let dh_dmu = (ra - rb) / s + (-(1.0 - al * al) * ra + (1.0 - be * be) * rb) / (2.0 * s)
        - n_over_z * (ra - rb) / (2.0 * s);
    let dh_dsigma = 1.0 / s
        + n_over_z / s
        + (-(1.0 - al * al) * al * ra + (1.0 - be * be) * be * rb) / (2.0 * s)
        - n_over_z * n_over_z / (2.0 * s);
    KlGrad { d_mu: -dh_dmu, d_sigma: -dh_dsigma }
}

/// Mean, variance and signal-to-noise ratio of the truncated log-normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub snr: f64,
}

/// All three statistics from shared log-space pieces.
///
/// With `P_k = Φ(β − kσ) − Φ(α − kσ)`, `E θ^k = exp(kμ + k²σ²/2)·P_k/Z`.
/// The SNR only needs `Var/E² = Z·e^{σ²}·P_2/P_1² − 1`, computed with
/// `expm1` on the log of the ratio; `μ` cancels out of it entirely. When
/// that ratio rounds to zero the variance is reported as 0 and the SNR as
/// `+∞`.
pub fn moments(p: &TruncParams) -> Moments {
    let s = p.sigma;
    let (log_mean, excess) = match p.tail {
        Some(t) => one_sided_moments(&t, s),
        None => {
            let log_p1 = log_diff_std_normal_cdf(p.alpha - s, p.beta - s);
            let log_p2 = log_diff_std_normal_cdf(p.alpha - 2.0 * s, p.beta - 2.0 * s);
            (p.mu + 0.5 * s * s + log_p1 - p.log_z, (log_p2 + p.log_z - 2.0 * log_p1 + s * s).exp_m1())
        }
    };
    let mean = log_mean.exp().clamp(p.a.exp(), p.b.exp());
    if excess > 0.0 {
        Moments {
            mean,
            variance: (2.0 * log_mean).exp() * excess,
            snr: 1.0 / excess.sqrt(),
        }
    } else {
        Moments { mean, variance: 0.0, snr: f64::INFINITY }
    }
}

/// `(ln E θ, Var θ / (E θ)²)` for a one-sided support. `E e^{∓kσs} =
/// I₀(y ± kσ)/I₀(y)`; the excess is the exponentiated second difference of
/// `ln I₀`, which loses all precision once `σ·sd(s)` is small, so there the
/// central-moment series of `E e^{∓σ(s − E s)}` is summed instead.
fn one_sided_moments(t: &OneSided, sigma: f64) -> (f64, f64) {
    let d = t.dir * sigma;
    let base = ln_i0(t.y);
    let l1 = ln_i0(t.y + d);
    let log_mean = t.edge + l1 - base;
    const K: usize = 14;
    let r = moment_ratios::<K>(t.y);
    let var_s = r[0] * (r[1] - r[0]);
    if sigma * var_s.sqrt() >= 1e-2 {
        return (log_mean, (ln_i0(t.y + 2.0 * d) + base - 2.0 * l1).exp_m1());
    }
    let mut raw = [1.0; K + 1];
    for k in 1..=K {
        raw[k] = raw[k - 1] * r[k - 1];
    }
    // central moments by binomial expansion about E s
    let m1 = raw[1];
    let (mut one, mut two) = (0.0, 0.0);
    let mut fact = 1.0;
    let mut c_pow = 1.0;
    for k in 1..=K {
        fact *= k as f64;
        c_pow *= -d;
        if k < 2 {
            continue;
        }
        let mut binom = 1.0;
        let mut central = 0.0;
        for (j, r) in raw.iter().enumerate().take(k + 1) {
            central += binom * r * (-m1).powi((k - j) as i32);
            binom = binom * (k - j) as f64 / (j + 1) as f64;
        }
        let term = c_pow * central / fact;
        one += term;
        two += term * (2f64.powi(k as i32) - 2.0);
    }
    (log_mean, (two - one * one) / ((1.0 + one) * (1.0 + one)))
}

pub fn mean_trunc_lognormal(p: &TruncParams) -> f64 {
    moments(p).mean
}

pub fn variance_trunc_lognormal(p: &TruncParams) -> f64 {
    moments(p).variance
}

/// `E θ / sqrt(Var θ)`; `+∞` when the variance underflows (σ → 0).
pub fn snr_trunc_lognormal(p: &TruncParams) -> f64 {
    moments(p).snr
}

/// Which representation the inverse-CDF transform runs in.
#[derive(Debug, Clone, Copy)]
enum Regime {
    /// Φ(α), Φ(β) and their complements are all comfortably representable.
    Linear { cdf_a: f64, cdf_b: f64, sf_a: f64, sf_b: f64 },
    /// Support far in the lower tail; quantiles found from ln Φ.
    LowerLog { log_cdf_a: f64, log_cdf_b: f64 },
    /// Support far in the upper tail; mirrored onto the lower tail.
    UpperLog { log_sf_a: f64, log_sf_b: f64 },
}

const LINEAR_FLOOR: f64 = 1e-280;

/// Reparameterized sampler for one truncated log-normal:
/// `θ = exp(μ + σ·Φ⁻¹(Φ(α) + Z·u))`.
///
/// The quantile target is always formed on whichever side of the median it
/// falls, so neither tail loses precision to `1 − p`.
#[derive(Debug, Clone, Copy)]
pub struct TruncSampler {
    params: TruncParams,
    regime: Regime,
}

/// Pathwise derivatives of a sample at fixed `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleGrad {
    pub d_mu: f64,
    pub d_sigma: f64,
}

impl TruncSampler {
    pub fn new(params: &TruncParams) -> Self {
        let (al, be) = (params.alpha, params.beta);
        let cdf_b = std_normal_cdf(be);
        let sf_a = std_normal_sf(al);
        let regime = if cdf_b > LINEAR_FLOOR && sf_a > LINEAR_FLOOR {
            Regime::Linear { cdf_a: std_normal_cdf(al), cdf_b, sf_a, sf_b: std_normal_sf(be) }
        } else if be <= 0.0 {
            Regime::LowerLog { log_cdf_a: log_std_normal_cdf(al), log_cdf_b: log_std_normal_cdf(be) }
        } else {
            Regime::UpperLog { log_sf_a: log_std_normal_sf(al), log_sf_b: log_std_normal_sf(be) }
        };
        Self { params: *params, regime }
    }

    pub fn params(&self) -> &TruncParams {
        &self.params
    }

    /// Standardized log-space sample `t ∈ [α, β]`.
    fn standard(&self, u: f64) -> f64 {
        let t = match self.regime {
            Regime::Linear { cdf_a, cdf_b, sf_a, sf_b } => {
                let lower = cdf_a * (1.0 - u) + cdf_b * u;
                if lower <= 0.5 {
                    inv_std_normal_cdf_lower(lower)
                } else {
                    -inv_std_normal_cdf_lower(sf_a * (1.0 - u) + sf_b * u)
                }
            }
            Regime::LowerLog { log_cdf_a, log_cdf_b } => inv_std_normal_cdf_from_log(log_add_exp(
                (-u).ln_1p() + log_cdf_a,
                u.ln() + log_cdf_b,
            )),
            Regime::UpperLog { log_sf_a, log_sf_b } => -inv_std_normal_cdf_from_log(log_add_exp(
                (-u).ln_1p() + log_sf_a,
                u.ln() + log_sf_b,
            )),
        };
        t.clamp(self.params.alpha, self.params.beta)
    }

    /// Draw for a given `u ∈ (0, 1)`; no domain check.
    #[inline]
    pub fn sample(&self, u: f64) -> f64 {
        let t = self.standard(u);
        (self.params.mu + self.params.sigma * t).exp()
    }

    /// Sample together with `dθ/dμ` and `dθ/dσ` at fixed `u`, including the
    /// dependence of α, β and Z on the parameters.
    #[inline]
    pub fn sample_with_grad(&self, u: f64) -> (f64, SampleGrad) {
        let p = &self.params;
        let t = self.standard(u);
        let theta = (p.mu + p.sigma * t).exp();
        // φ(α)/φ(t) and φ(β)/φ(t) without forming either density.
        let ra = (0.5 * (t - p.alpha) * (t + p.alpha)).exp();
        let rb = (0.5 * (t - p.beta) * (t + p.beta)).exp();
        let wa = (1.0 - u) * ra;
        let wb = u * rb;
        let grad = SampleGrad {
            d_mu: theta * (1.0 - wa - wb),
            d_sigma: theta * (t - p.alpha * wa - p.beta * wb),
        };
        (theta, grad)
    }
}

fn check_u(u: f64) -> Result<(), DomainError> {
    if u > 0.0 && u < 1.0 {
        Ok(())
    } else {
        Err(DomainError::new(format!("uniform draw must lie in (0, 1), got {u}")))
    }
}

/// Inverse-CDF sample of the truncated log-normal; result lies in
/// `[e^a, e^b]` and is nondecreasing in `u`.
pub fn sample_trunc_lognormal(p: &TruncParams, u: f64) -> Result<f64, DomainError> {
    check_u(u)?;
    Ok(TruncSampler::new(p).sample(u))
}

pub fn sample_grad(p: &TruncParams, u: f64) -> Result<SampleGrad, DomainError> {
    check_u(u)?;
    Ok(TruncSampler::new(p).sample_with_grad(u).1)
}
