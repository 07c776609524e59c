use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::layers::ParamVisitor;
use crate::net::{ParamKind, Real, Tensor};
use crate::sbp::GroupPattern;
use crate::truncmath::{kl_grad, kl_trunc_logn_vs_trunc_logu, moments, TruncParams, TruncSampler, U_EPS};

/// Box that `mu` is clamped to after every optimizer step.
pub const MU_RANGE: (f64, f64) = (-20.0, 5.0);
/// Box that `log_sigma` is clamped to after every optimizer step.
pub const LOG_SIGMA_RANGE: (f64, f64) = (-6.0, 3.0);
pub const INIT_MU: f64 = 0.0;
pub const INIT_SIGMA: f64 = 0.1;
pub const DEFAULT_A: f64 = -20.0;
pub const DEFAULT_B: f64 = 0.0;
pub const DEFAULT_THRESHOLD: f64 = 1.0;

/// Outcome of the SNR test for every group of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub snr: Vec<f64>,
    pub kept: Vec<bool>,
    pub kept_count: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub group_labels: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
struct NoiseCache<T> {
    x: Tensor<T>,
    u: Vec<f64>,
    theta: Vec<f64>,
    dtheta_dmu: Vec<f64>,
    dtheta_dsigma: Vec<f64>,
}

/// Multiplicative noise layer: `y[m, f] = x[m, f] · θ[m, group(f)]` with
/// `log θ` a normal truncated to `[a, b]`.
///
/// Training draws a fresh θ for every object of every minibatch. The uniform
/// feeding draw `(m, g)` at step `s` is word `m·G + g` of the ChaCha stream
/// `s` keyed by `(seed, layer index)`, so draws depend only on those four
/// numbers. Evaluation replaces θ by its expectation, or by 0 for groups
/// whose SNR is below the threshold.
#[derive(Debug, Clone)]
pub struct SbpLayer<T: Real> {
    pattern: GroupPattern,
    mu: Vec<T>,
    log_sigma: Vec<T>,
    grad_mu: Vec<T>,
    grad_log_sigma: Vec<T>,
    a: f64,
    b: f64,
    threshold: f64,
    rng_key: [u8; 32],
    cache: Option<NoiseCache<T>>,
}

impl<T: Real> SbpLayer<T> {
    /// Fresh layer at the default initialization (`mu = 0`, `sigma = 0.1`).
    pub fn new(pattern: GroupPattern, a: f64, b: f64, threshold: f64) -> Result<Self> {
        let g = pattern.groups();
        Self::with_params(pattern, vec![T::of(INIT_MU); g], vec![T::of(INIT_SIGMA.ln()); g], a, b, threshold)
    }

    pub fn with_params(
        pattern: GroupPattern,
        mu: Vec<T>,
        log_sigma: Vec<T>,
        a: f64,
        b: f64,
        threshold: f64,
    ) -> Result<Self> {
        let g = pattern.groups();
        if mu.len() != g || log_sigma.len() != g {
            return Err(Error::Shape(format!(
                "{g} groups but {} mu and {} log_sigma values",
                mu.len(),
                log_sigma.len()
            )));
        }
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Config(format!("truncation interval needs finite a < b, got [{a}, {b}]")));
        }
        if threshold.is_nan() || threshold < 0.0 {
            return Err(Error::Config(format!("SNR threshold must be ≥ 0, got {threshold}")));
        }
        let layer = Self {
            pattern,
            grad_mu: vec![T::zero(); g],
            grad_log_sigma: vec![T::zero(); g],
            mu,
            log_sigma,
            a,
            b,
            threshold,
            rng_key: [0; 32],
            cache: None,
        };
        for i in 0..g {
            layer.params(i)?;
        }
        Ok(layer)
    }

    pub fn pattern(&self) -> &GroupPattern {
        &self.pattern
    }

    pub fn groups(&self) -> usize {
        self.pattern.groups()
    }

    pub fn mu(&self) -> &[T] {
        &self.mu
    }

    pub fn log_sigma(&self) -> &[T] {
        &self.log_sigma
    }

    pub fn grad_mu(&self) -> &[T] {
        &self.grad_mu
    }

    pub fn grad_log_sigma(&self) -> &[T] {
        &self.grad_log_sigma
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: f64) -> Result<()> {
        if threshold.is_nan() || threshold < 0.0 {
            return Err(Error::Config(format!("SNR threshold must be ≥ 0, got {threshold}")));
        }
        self.threshold = threshold;
        Ok(())
    }

    /// Overwrites every group's parameters (used by pretraining resets).
    pub fn fill_params(&mut self, mu: f64, log_sigma: f64) {
        self.mu.iter_mut().for_each(|v| *v = T::of(mu));
        self.log_sigma.iter_mut().for_each(|v| *v = T::of(log_sigma));
    }

    /// Keys the noise stream; the network passes its seed and layer index.
    pub fn set_noise_key(&mut self, seed: u64, layer_index: u64) {
        self.rng_key = [0; 32];
        self.rng_key[..8].copy_from_slice(&seed.to_le_bytes());
        self.rng_key[8..16].copy_from_slice(&layer_index.to_le_bytes());
    }

    /// Uniform draws of the last training forward pass, `[M × G]` row-major.
    pub fn last_u(&self) -> Option<&[f64]> {
        self.cache.as_ref().map(|c| c.u.as_slice())
    }

    /// θ of the last training forward pass, `[M × G]` row-major.
    pub fn last_noise(&self) -> Option<&[f64]> {
        self.cache.as_ref().map(|c| c.theta.as_slice())
    }

    pub fn params(&self, g: usize) -> Result<TruncParams> {
        Ok(TruncParams::new(self.mu[g].f64(), self.log_sigma[g].f64().exp(), self.a, self.b)?)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        x.expect_item_shape(self.pattern.input_shape(), "sbp layer")
    }

    /// Training pass with one noise vector per object; `step` selects the
    /// noise stream.
    pub fn forward_train(&mut self, x: &Tensor<T>, step: u64) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let (m, g) = (x.batch(), self.groups());
        let samplers = (0..g).map(|i| self.params(i).map(|p| TruncSampler::new(&p))).collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::from_seed(self.rng_key);
        rng.set_stream(step);
        let n = m * g;
        let mut cache = NoiseCache {
            x: x.clone(),
            u: Vec::with_capacity(n),
            theta: Vec::with_capacity(n),
            dtheta_dmu: Vec::with_capacity(n),
            dtheta_dsigma: Vec::with_capacity(n),
        };
        for _ in 0..m {
            for s in &samplers {
                let r: f64 = rng.sample(Open01);
                let u = U_EPS + (1.0 - 2.0 * U_EPS) * r;
                let (theta, d) = s.sample_with_grad(u);
                cache.u.push(u);
                cache.theta.push(theta);
                cache.dtheta_dmu.push(d.d_mu);
                cache.dtheta_dsigma.push(d.d_sigma);
            }
        }
        let y = self.scale_rows(x, |row| &cache.theta[row * g..(row + 1) * g])?;
        self.cache = Some(cache);
        Ok(y)
    }

    /// Per-group multiplier used at evaluation: the noise mean for groups
    /// that pass the SNR test, 0 otherwise.
    pub fn eval_scales(&self) -> Result<Vec<f64>> {
        (0..self.groups())
            .map(|g| {
                let mo = moments(&self.params(g)?);
                Ok(if mo.snr >= self.threshold { mo.mean } else { 0.0 })
            })
            .collect()
    }

    /// Deterministic pass with θ replaced by its expectation on kept groups.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let scales = self.eval_scales()?;
        self.scale_rows(x, |_| &scales)
    }

    fn scale_rows<'s>(&self, x: &Tensor<T>, scales: impl Fn(usize) -> &'s [f64]) -> Result<Tensor<T>> {
        let f = self.pattern.features();
        let group_of = self.pattern.group_of();
        let mut y = Vec::with_capacity(x.len());
        for (row, xs) in x.data().chunks_exact(f).enumerate() {
            let s = scales(row);
            y.extend(xs.iter().zip(group_of).map(|(&v, &g)| v * T::of(s[g])));
        }
        Tensor::from_vec(x.shape(), y)
    }

    /// Data-term backward through the cached noise. Accumulates into the
    /// `mu` / `log_sigma` gradients and returns the input gradient.
    pub fn backward(&mut self, grad_y: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("sbp backward called without a cached training forward pass".into()))?;
        if grad_y.shape() != cache.x.shape() {
            return Err(Error::Shape(format!(
                "sbp backward: gradient shape {:?} does not match input {:?}",
                grad_y.shape(),
                cache.x.shape()
            )));
        }
        let g = self.pattern.groups();
        let f = self.pattern.features();
        let group_of = self.pattern.group_of();
        let mut gx = Vec::with_capacity(grad_y.len());
        let mut d_mu = vec![0.0f64; g];
        let mut d_sigma = vec![0.0f64; g];
        let mut d_theta = vec![0.0f64; g];
        for (row, (gys, xs)) in grad_y.data().chunks_exact(f).zip(cache.x.data().chunks_exact(f)).enumerate() {
            let theta = &cache.theta[row * g..(row + 1) * g];
            d_theta.iter_mut().for_each(|v| *v = 0.0);
            for ((&gy, &xv), &grp) in gys.iter().zip(xs).zip(group_of) {
                gx.push(gy * T::of(theta[grp]));
                d_theta[grp] += gy.f64() * xv.f64();
            }
            let dmu = &cache.dtheta_dmu[row * g..(row + 1) * g];
            let dsig = &cache.dtheta_dsigma[row * g..(row + 1) * g];
            for i in 0..g {
                d_mu[i] += d_theta[i] * dmu[i];
                d_sigma[i] += d_theta[i] * dsig[i];
            }
        }
        for i in 0..g {
            let sigma = self.log_sigma[i].f64().exp();
            self.grad_mu[i] += T::of(d_mu[i]);
            self.grad_log_sigma[i] += T::of(d_sigma[i] * sigma);
        }
        Tensor::from_vec(grad_y.shape(), gx)
    }

    /// Σ over groups of KL(posterior ‖ truncated log-uniform prior).
    pub fn kl_sum(&self) -> Result<f64> {
        (0..self.groups()).map(|g| Ok(kl_trunc_logn_vs_trunc_logu(&self.params(g)?))).sum()
    }

    /// Per-group gradients of `kl_sum` with respect to `mu` and `log_sigma`.
    pub fn kl_sum_grads(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut dm = Vec::with_capacity(self.groups());
        let mut dl = Vec::with_capacity(self.groups());
        for g in 0..self.groups() {
            let p = self.params(g)?;
            let kg = kl_grad(&p);
            dm.push(kg.d_mu);
            dl.push(kg.d_sigma * p.sigma());
        }
        Ok((dm, dl))
    }

    /// Adds `scale ·` KL gradients to the accumulated parameter gradients.
    pub fn add_kl_grads(&mut self, scale: f64) -> Result<()> {
        let (dm, dl) = self.kl_sum_grads()?;
        for g in 0..self.groups() {
            self.grad_mu[g] += T::of(scale * dm[g]);
            self.grad_log_sigma[g] += T::of(scale * dl[g]);
        }
        Ok(())
    }

    pub fn prune_report(&self) -> Result<PruneReport> {
        let snr = (0..self.groups()).map(|g| Ok(moments(&self.params(g)?).snr)).collect::<Result<Vec<f64>>>()?;
        let kept: Vec<bool> = snr.iter().map(|&s| s >= self.threshold).collect();
        let kept_count = kept.iter().filter(|&&k| k).count();
        Ok(PruneReport { snr, kept, kept_count, group_labels: None })
    }

    /// Projects the parameters back into the clamping box.
    pub fn clamp_params(&mut self) {
        for v in &mut self.mu {
            *v = T::of(v.f64().clamp(MU_RANGE.0, MU_RANGE.1));
        }
        for v in &mut self.log_sigma {
            *v = T::of(v.f64().clamp(LOG_SIGMA_RANGE.0, LOG_SIGMA_RANGE.1));
        }
    }

    pub(crate) fn zero_grad(&mut self) {
        self.grad_mu.iter_mut().for_each(|g| *g = T::zero());
        self.grad_log_sigma.iter_mut().for_each(|g| *g = T::zero());
    }

    pub(crate) fn visit_params(&mut self, f: &mut ParamVisitor<'_, T>) {
        f(ParamKind::Mu, &mut self.mu, &mut self.grad_mu);
        f(ParamKind::LogSigma, &mut self.log_sigma, &mut self.grad_log_sigma);
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub(crate) fn cast<U: Real>(&self) -> SbpLayer<U> {
        SbpLayer {
            pattern: self.pattern.clone(),
            mu: self.mu.iter().map(|v| U::of(v.f64())).collect(),
            log_sigma: self.log_sigma.iter().map(|v| U::of(v.f64())).collect(),
            grad_mu: vec![U::zero(); self.groups()],
            grad_log_sigma: vec![U::zero(); self.groups()],
            a: self.a,
            b: self.b,
            threshold: self.threshold,
            rng_key: self.rng_key,
            cache: None,
        }
    }
}
