//! Independent reference implementations shared by the integration tests:
//! adaptive quadrature over `t = log θ`, the textbook closed forms, and a
//! central-difference harness.

#![allow(dead_code)]

use sbp_core::truncmath::{std_normal_cdf, std_normal_sf, TruncParams};

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let (f1, f2) = (f(c - h * XGK[j]), f(c + h * XGK[j]));
        kron += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod integral of `f` over consecutive `breaks`:
/// repeatedly bisects the piece with the largest error estimate until the
/// summed estimate is below `rtol·|total|` or stops improving.
pub fn integrate(f: &dyn Fn(f64) -> f64, breaks: &[f64], rtol: f64) -> f64 {
    #[derive(PartialEq)]
    struct Piece(f64, f64, f64, f64);
    impl Eq for Piece {}
    impl PartialOrd for Piece {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Piece {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            self.3.total_cmp(&o.3)
        }
    }
    let mut heap = std::collections::BinaryHeap::new();
    let (mut total, mut err) = (0.0, 0.0);
    for w in breaks.windows(2).filter(|w| w[1] > w[0]) {
        let (v, e) = gk15(f, w[0], w[1]);
        total += v;
        err += e;
        heap.push(Piece(w[0], w[1], v, e));
    }
    for _ in 0..5_000 {
        if err <= rtol * total.abs() {
            break;
        }
        let Some(Piece(lo, hi, v, e)) = heap.pop() else { break };
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            heap.push(Piece(lo, hi, v, 0.0));
            err -= e;
            continue;
        }
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        total += v1 + v2 - v;
        err += e1 + e2 - e;
        heap.push(Piece(lo, mid, v1, e1));
        heap.push(Piece(mid, hi, v2, e2));
    }
    // Re-sum to shed the drift of the running total.
    heap.iter().map(|p| p.2).sum()
}

/// Reference statistics of θ with `log θ ~ N(μ, σ²)` truncated to `[a, b]`,
/// all by quadrature over `t = log θ`.
pub struct Quadrature {
    mu: f64,
    sigma: f64,
    /// Integration window: `[a, b]` clipped to 40σ around the mode.
    breaks: Vec<f64>,
    /// log of the unnormalized density at the mode, subtracted for range.
    peak: f64,
    z: f64,
    a: f64,
    b: f64,
}

pub const QUAD_RTOL: f64 = 1e-13;

impl Quadrature {
    pub fn new(mu: f64, sigma: f64, a: f64, b: f64) -> Self {
        let mode = mu.clamp(a, b);
        let lo = a.max(mode - 40.0 * sigma);
        let hi = b.min(mode + 40.0 * sigma);
        let mut breaks = vec![lo, hi];
        for k in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
            for s in [-1.0, 1.0] {
                let t = mode + s * k * sigma;
                if t > lo && t < hi {
                    breaks.push(t);
                }
            }
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let peak = -0.5 * ((mode - mu) / sigma).powi(2);
        let mut q = Self { mu, sigma, breaks, peak, z: 1.0, a, b };
        q.z = integrate(&|t| q.scaled_density(t), &q.breaks, QUAD_RTOL);
        q
    }

    fn scaled_density(&self, t: f64) -> f64 {
        (-0.5 * ((t - self.mu) / self.sigma).powi(2) - self.peak).exp()
    }

    /// Normalized density of `t`.
    pub fn density(&self, t: f64) -> f64 {
        self.scaled_density(t) / self.z
    }

    pub fn expect(&self, g: &dyn Fn(f64) -> f64) -> f64 {
        integrate(&|t| g(t) * self.density(t), &self.breaks, QUAD_RTOL)
    }

    pub fn mean(&self) -> f64 {
        self.expect(&|t| t.exp())
    }

    /// Central second moment, integrated directly to avoid cancellation.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expect(&|t| (t.exp() - m).powi(2))
    }

    /// KL against the log-uniform prior, which is uniform in `t`.
    pub fn kl(&self) -> f64 {
        let log_norm = self.peak + self.z.ln();
        let width = (self.b - self.a).ln();
        integrate(
            &|t| {
                let d = self.density(t);
                if d == 0.0 {
                    0.0
                } else {
                    let log_q = -0.5 * ((t - self.mu) / self.sigma).powi(2) - log_norm;
                    d * (log_q + width)
                }
            },
            &self.breaks,
            QUAD_RTOL,
        )
    }
}

/// `Φ(hi) − Φ(lo)` computed from whichever tail is accurate, with no log
/// space or scaling tricks.
pub fn cdf_diff(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        std_normal_sf(lo) - std_normal_sf(hi)
    } else {
        std_normal_cdf(hi) - std_normal_cdf(lo)
    }
}

/// Textbook closed forms for the truncated log-normal, evaluated as written.
pub struct Naive {
    pub mean: f64,
    pub variance: f64,
    pub snr: f64,
}

pub fn naive(mu: f64, sigma: f64, a: f64, b: f64) -> Naive {
    let (al, be) = ((a - mu) / sigma, (b - mu) / sigma);
    let z = cdf_diff(al, be);
    let p1 = cdf_diff(al - sigma, be - sigma);
    let p2 = cdf_diff(al - 2.0 * sigma, be - 2.0 * sigma);
    let mean = (mu + sigma * sigma / 2.0).exp() / z * p1;
    let variance = (2.0 * mu + sigma * sigma).exp() / z * ((sigma * sigma).exp() * p2 - p1 * p1 / z);
    Naive { mean, variance, snr: mean / variance.sqrt() }
}

pub fn params(mu: f64, sigma: f64) -> TruncParams {
    TruncParams::new(mu, sigma, -20.0, 0.0).unwrap()
}

/// `|x − y| ≤ rtol·max(|x|, |y|)`.
pub fn rel_close(x: f64, y: f64, rtol: f64) -> bool {
    (x - y).abs() <= rtol * x.abs().max(y.abs())
}

/// Central difference of `f` at `x` with step `h`.
pub fn central_diff(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative disagreement between an analytic and a numeric derivative, with
/// an absolute floor below which both are treated as zero.
pub fn grad_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

use sbp_core::net::{sgvb_objective, softmax_xent, KlTerm, Network, SgvbLossParts, Tensor};

/// Scalar objectives the gradient harness can differentiate.
pub enum Objective<'a> {
    /// `Σ c ⊙ output` for a fixed probe tensor `c`.
    Probe(&'a [f64]),
    /// Full minibatch objective `N·nll + Σ KL` with unit KL scales.
    Sgvb { labels: &'a [usize], n: usize },
}

const STEP: u64 = 7;

fn objective_value(net: &mut Network<f64>, x: &Tensor<f64>, obj: &Objective) -> f64 {
    let y = net.forward_train(x, STEP).unwrap();
    match obj {
        Objective::Probe(c) => y.data().iter().zip(c.iter()).map(|(a, b)| a * b).sum(),
        Objective::Sgvb { labels, n } => {
            let (nll, _) = softmax_xent(&y, labels).unwrap();
            let kl_terms =
                net.sbp_layers().map(|(i, s)| KlTerm { layer: i, kl: s.kl_sum().unwrap(), scale: 1.0 }).collect();
            sgvb_objective(&SgvbLossParts { nll_minibatch: nll, n: *n, m: labels.len(), kl_terms }).unwrap().0
        }
    }
}

fn param_arrays(net: &mut Network<f64>) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    net.visit_params(|layer, kind, _, g| out.push((format!("layer {layer} {kind:?}"), g.to_vec())));
    out
}

fn nudge(net: &mut Network<f64>, array: usize, idx: usize, delta: f64) {
    let mut k = 0;
    net.visit_params(|_, _, p, _| {
        if k == array {
            p[idx] += delta;
        }
        k += 1;
    });
}

/// Fourth-order central difference of `f` at offset 0.
fn five_point(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

/// Largest relative error between backpropagated gradients (parameters and
/// input) and fourth-order central differences with step `h`. Entries smaller than
/// `1e-6 ×` the largest magnitude in their array count as zero.
pub fn gradient_check(net: &mut Network<f64>, x: &Tensor<f64>, obj: &Objective, h: f64) -> (f64, String) {
    net.zero_grad();
    let y = net.forward_train(x, STEP).unwrap();
    let gy = match obj {
        Objective::Probe(c) => Tensor::from_vec(y.shape(), c.to_vec()).unwrap(),
        Objective::Sgvb { labels, n } => {
            let (_, mut g) = softmax_xent(&y, labels).unwrap();
            g.data_mut().iter_mut().for_each(|v| *v *= *n as f64);
            g
        }
    };
    let gx = net.backward(&gy).unwrap();
    if let Objective::Sgvb { .. } = obj {
        for (_, s) in net.sbp_layers_mut() {
            s.add_kl_grads(1.0).unwrap();
        }
    }
    let mut arrays = param_arrays(net);
    arrays.push(("input".into(), gx.data().to_vec()));

    let mut worst = (0.0, String::new());
    let n_params = arrays.len() - 1;
    for (a, (name, grads)) in arrays.iter().enumerate() {
        let floor = 1e-6 * grads.iter().fold(0.0_f64, |m, g| m.max(g.abs())).max(1e-12);
        for (i, &g) in grads.iter().enumerate() {
            let numeric = if a < n_params {
                five_point(h, |d| {
                    nudge(net, a, i, d);
                    let v = objective_value(net, x, obj);
                    nudge(net, a, i, -d);
                    v
                })
            } else {
                five_point(h, |d| {
                    let mut xp = x.clone();
                    xp.data_mut()[i] += d;
                    objective_value(net, &xp, obj)
                })
            };
            let e = grad_error(g, numeric, floor);
            if e > worst.0 {
                worst = (e, format!("{name}[{i}]: analytic {g:e} vs numeric {numeric:e}"));
            }
        }
    }
    worst
}

/// Deterministic pseudo-random values in `[-1, 1)`.
pub fn uniform_values(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}
