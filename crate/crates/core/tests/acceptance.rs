//! Acceptance suite: one check per criterion, each printing a single
//! `criterion N: PASS|FAIL ...` line. Runs under its own `main` (no libtest
//! harness) so the lines are never captured; positional arguments filter
//! checks by substring (`--exact` for whole names, `--skip` to exclude), and
//! the process exits nonzero if any check fails.
//!
//! Criteria 7–10 train on MNIST. The IDX files are read from `$SBP_MNIST_DIR`
//! or `<workspace>/data/mnist`; if they are absent those criteria fail unless
//! `SBP_SKIP_MNIST=1` is set, in which case they report SKIP.

mod common;

use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbp_core::data::{DatasetSource, Split, MNIST_FILES};
use sbp_core::net::{
    argmax, Conv2d, ConvGeometry, Dense, Flatten, Layer, MaxPool, Network, NetworkSpec, Relu, Select, Tensor,
};
use sbp_core::pipeline::{compact, load_checkpoint, save_checkpoint, test_error, train, TrainConfig, TrainOutcome};
use sbp_core::sbp::{GroupPattern, SbpLayer};
use sbp_core::truncmath::*;

static REPORTED: AtomicBool = AtomicBool::new(false);

fn report(criterion: u32, pass: bool, detail: &str) {
    print_line(&format!("criterion {criterion}"), pass, detail);
}

fn print_line(label: &str, pass: bool, detail: &str) {
    REPORTED.store(true, Ordering::SeqCst);
    let line = format!("{label}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn finish(criterion: u32, failures: Vec<String>, summary: String) {
    report(criterion, failures.is_empty(), &summary);
    assert!(failures.is_empty(), "criterion {criterion}: {}", failures.join("; "));
}

/// The clamped parameter box, sampled uniformly in `μ` and `log σ`.
fn box_grid(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (rng.gen_range(-20.0..5.0), rng.gen_range(-6.0_f64..3.0).exp())).collect()
}

fn criterion_1_closed_form_kl() {
    let t = Instant::now();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for (mu, sigma) in box_grid(200, 1) {
        let analytic = kl_trunc_logn_vs_trunc_logu(&params(mu, sigma));
        let reference = Quadrature::new(mu, sigma, -20.0, 0.0).kl();
        let err = (analytic - reference).abs();
        worst = worst.max(err);
        if err > 1e-6 {
            failures.push(format!("μ={mu}, σ={sigma}: {analytic} vs {reference}"));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    if secs >= 10.0 {
        failures.push(format!("took {secs:.1} s"));
    }
    finish(1, failures, format!("max |KL − quadrature| = {worst:.2e} over 200 points (≤ 1e-6), {secs:.2} s"));
}

fn criterion_2_moments_and_snr() {
    let t = Instant::now();
    let mut failures = Vec::new();
    let (mut w_mean, mut w_var, mut w_snr) = (0.0_f64, 0.0_f64, 0.0_f64);
    for (mu, sigma) in box_grid(200, 1) {
        let m = moments(&params(mu, sigma));
        let q = Quadrature::new(mu, sigma, -20.0, 0.0);
        let (qm, qv) = (q.mean(), q.variance());
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
        let (em, ev) = (rel(m.mean, qm), rel(m.variance, qv));
        w_mean = w_mean.max(em);
        w_var = w_var.max(ev);
        if em > 1e-8 || ev > 1e-8 {
            failures.push(format!("μ={mu}, σ={sigma}: mean {} vs {qm}, var {} vs {qv}", m.mean, m.variance));
        }
        let q_snr = qm / qv.sqrt();
        let es = rel(m.snr, q_snr);
        w_snr = w_snr.max(es);
        if es > 1e-6 {
            failures.push(format!("μ={mu}, σ={sigma}: snr {} vs {q_snr}", m.snr));
        }
    }

    // Monte Carlo spot checks: mean and variance each within 4 standard errors.
    let spots = [(-2.0, 1.0), (0.0, 1.0), (-10.0, 5.0), (-5.0, 0.5), (-0.5, 3.0), (-15.0, 2.0), (2.0, 0.3), (-19.0, 0.7), (-10.0, 15.0), (-1.0, 0.05)];
    let mut w_z: f64 = 0.0;
    for (k, &(mu, sigma)) in spots.iter().enumerate() {
        let p = params(mu, sigma);
        let sampler = TruncSampler::new(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k as u64);
        let n = 10_000_000usize;
        let m = moments(&p);
        // Accumulate central moments about the analytic mean for stability.
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let u: f64 = rng.sample(rand::distributions::Open01);
            let d = sampler.sample(u) - m.mean;
            s1 += d;
            s2 += d * d;
            s4 += d * d * d * d;
        }
        let nf = n as f64;
        let mc_mean_dev = s1 / nf;
        let mc_var = s2 / nf - mc_mean_dev * mc_mean_dev;
        let se_mean = (s2 / nf / nf).sqrt();
        let se_var = ((s4 / nf - (s2 / nf).powi(2)) / nf).sqrt();
        let z_mean = mc_mean_dev.abs() / se_mean;
        let z_var = (mc_var - m.variance).abs() / se_var;
        w_z = w_z.max(z_mean).max(z_var);
        if z_mean > 4.0 || z_var > 4.0 {
            failures.push(format!("MC μ={mu}, σ={sigma}: mean off by {z_mean:.2} SE, variance by {z_var:.2} SE"));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    if secs >= 60.0 {
        failures.push(format!("took {secs:.1} s"));
    }
    finish(
        2,
        failures,
        format!(
            "max rel err mean {w_mean:.1e}, var {w_var:.1e} (≤ 1e-8), snr {w_snr:.1e} (≤ 1e-6); \
             MC worst {w_z:.2} SE (≤ 4); {secs:.1} s"
        ),
    );
}

fn criterion_3_stability_grid() {
    let mut failures = Vec::new();
    let (mut compared, mut worst) = (0usize, 0.0_f64);
    for i in 0..50 {
        let mu = -30.0 + 40.0 * i as f64 / 49.0;
        for j in 1..=50 {
            let sigma = 20.0 * j as f64 / 50.0;
            let m = moments(&params(mu, sigma));
            if !(m.mean.is_finite() && m.snr.is_finite()) {
                failures.push(format!("μ={mu}, σ={sigma}: mean {}, snr {}", m.mean, m.snr));
                continue;
            }
            let nv = naive(mu, sigma, -20.0, 0.0);
            for (stable, naive_v, what) in [(m.mean, nv.mean, "mean"), (m.snr, nv.snr, "snr")] {
                if naive_v.is_finite() && naive_v > 0.0 {
                    compared += 1;
                    let e = (stable - naive_v).abs() / naive_v.abs();
                    worst = worst.max(e);
                    if e > 1e-8 {
                        failures.push(format!("μ={mu}, σ={sigma}: {what} {stable} vs naive {naive_v}"));
                    }
                }
            }
        }
    }
    finish(
        3,
        failures,
        format!("2500 grid points finite; {compared} naive comparisons, max rel diff {worst:.1e} (≤ 1e-8)"),
    );
}

fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

fn criterion_4_sampling_law() {
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    let settings = [(-2.0, 1.0), (-10.0, 5.0), (-0.5, 3.0), (2.0, 0.3), (-19.5, 0.2)];
    for (k, &(mu, sigma)) in settings.iter().enumerate() {
        let p = params(mu, sigma);
        let sampler = TruncSampler::new(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(40 + k as u64);
        let n = 10_000;
        let mut xs: Vec<f64> =
            (0..n).map(|_| sampler.sample(rng.sample(rand::distributions::Open01))).collect();
        // F(x) = (Φ((log x − μ)/σ) − Φ(α)) / Z, in log space for the tails.
        let cdf = |x: f64| {
            let t = ((x.ln() - mu) / sigma).min(p.beta());
            if t <= p.alpha() {
                0.0
            } else {
                (log_diff_std_normal_cdf(p.alpha(), t) - p.log_z()).exp()
            }
        };
        let d = ks_statistic(&mut xs, cdf) * (n as f64).sqrt();
        worst = worst.max(d);
        if d >= 1.63 {
            failures.push(format!("μ={mu}, σ={sigma}: D·√n = {d:.3}"));
        }
    }

    // Boundary limits: as u → 0⁺ (1⁻) samples decrease (increase) toward
    // e^a (e^b). Each extreme sample must either sit on the boundary to
    // rounding, or be the exact tail quantile: log F(θ(u)) = log u (and the
    // mirrored identity at the top), which is how close any sample can get
    // when the boundary mass is below floating-point resolution.
    let (lo, hi) = ((-20.0_f64).exp(), 1.0);
    let us = [1e-3, 1e-6, 1e-12, 1e-300];
    for &(mu, sigma) in &settings {
        let p = params(mu, sigma);
        let log_tail = |theta: f64, upper: bool| {
            let t = (theta.ln() - mu) / sigma;
            if upper {
                log_diff_std_normal_cdf(t, p.beta()) - p.log_z()
            } else {
                log_diff_std_normal_cdf(p.alpha(), t) - p.log_z()
            }
        };
        let low: Vec<f64> = us.iter().map(|&u| sample_trunc_lognormal(&p, u).unwrap()).collect();
        let tops: Vec<f64> = us.iter().map(|&e| (1.0 - e).min(1.0 - f64::EPSILON / 2.0)).collect();
        let high: Vec<f64> = tops.iter().map(|&u| sample_trunc_lognormal(&p, u).unwrap()).collect();
        let ok_low = low.windows(2).all(|w| w[1] <= w[0])
            && low.iter().zip(&us).all(|(&x, &u)| {
                (x - lo).abs() <= 1e-9 * lo || (log_tail(x, false) - u.ln()).abs() <= 1e-6 * u.ln().abs()
            });
        let ok_high = high.windows(2).all(|w| w[1] >= w[0])
            && high.iter().zip(&tops).all(|(&x, &u)| {
                let e = 1.0 - u;
                (x - hi).abs() <= 1e-9 || (log_tail(x, true) - e.ln()).abs() <= 1e-6 * e.ln().abs()
            });
        if !(ok_low && ok_high) {
            failures.push(format!("μ={mu}, σ={sigma}: boundary approach {low:?} / {high:?}"));
        }
    }
    // Where the boundary mass is representable the limit is reached exactly.
    let p = params(-0.5, 3.0);
    let (x0, x1) = (sample_trunc_lognormal(&p, 1e-300).unwrap(), sample_trunc_lognormal(&p, 1.0 - f64::EPSILON / 2.0).unwrap());
    if (x0 - lo).abs() > 1e-12 * lo || (x1 - hi).abs() > 1e-12 {
        failures.push(format!("μ=-0.5, σ=3: extremes {x0} / {x1}"));
    }
    finish(4, failures, format!("worst KS D·√n = {worst:.3} over 5 settings (< 1.63); u→0⁺/1⁻ reach e^a/e^b"));
}

fn layer_net(input: &[usize], layer: Layer<f64>) -> Network<f64> {
    Network::from_layers(input.to_vec(), vec![layer]).unwrap()
}

fn micro_layers() -> Vec<(&'static str, Network<f64>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let geom = ConvGeometry { in_channels: 2, out_channels: 3, kernel_h: 3, kernel_w: 2, stride: 1, padding: 1 };
    let strided = ConvGeometry { in_channels: 2, out_channels: 2, kernel_h: 2, kernel_w: 2, stride: 2, padding: 0 };
    let mut sbp = SbpLayer::<f64>::with_params(
        GroupPattern::per_channel(&[2, 2, 3]).unwrap(),
        vec![-1.0, -0.3, -4.0],
        vec![-0.5, 0.2, -1.5],
        -20.0,
        0.0,
        1.0,
    )
    .unwrap();
    sbp.set_noise_key(3, 0);
    let mut sbp_feat = SbpLayer::<f64>::with_params(
        GroupPattern::per_feature(&[3]).unwrap(),
        vec![-0.7, -2.0, 0.5],
        vec![0.3, -1.0, -3.0],
        -20.0,
        0.0,
        1.0,
    )
    .unwrap();
    sbp_feat.set_noise_key(4, 1);
    vec![
        ("dense", layer_net(&[5], Layer::Dense(Dense::init(5, 4, &mut rng).unwrap())), vec![3, 5]),
        ("conv2d", layer_net(&[4, 3, 2], Layer::Conv2d(Conv2d::init(geom, &mut rng).unwrap())), vec![2, 4, 3, 2]),
        ("conv2d strided", layer_net(&[4, 4, 2], Layer::Conv2d(Conv2d::init(strided, &mut rng).unwrap())), vec![2, 4, 4, 2]),
        ("maxpool", layer_net(&[4, 4, 2], Layer::MaxPool(MaxPool::new(2, 2).unwrap())), vec![2, 4, 4, 2]),
        ("relu", layer_net(&[6], Layer::Relu(Relu::new())), vec![3, 6]),
        ("flatten", layer_net(&[2, 2, 2], Layer::Flatten(Flatten::new())), vec![2, 2, 2, 2]),
        ("select", layer_net(&[5], Layer::Select(Select::new(5, vec![4, 0, 2]).unwrap())), vec![2, 5]),
        ("sbp per-channel", layer_net(&[2, 2, 3], Layer::Sbp(sbp)), vec![2, 2, 2, 3]),
        ("sbp per-feature", layer_net(&[3], Layer::Sbp(sbp_feat)), vec![2, 3]),
    ]
}

fn criterion_5_gradient_fidelity() {
    let t = Instant::now();
    let mut failures = Vec::new();
    let tol = 1e-4;

    let mut w_kl: f64 = 0.0;
    for (mu, sigma) in box_grid(100, 2) {
        let p = params(mu, sigma);
        let g = kl_grad(&p);
        let h = 1e-5;
        let d_mu = central_diff(&|m| kl_trunc_logn_vs_trunc_logu(&params(m, sigma)), mu, h);
        let d_sigma = central_diff(&|s| kl_trunc_logn_vs_trunc_logu(&params(mu, s)), sigma, h.min(sigma / 10.0));
        // central-difference round-off on a KL of O(10) is ~1e-10
        let e = grad_error(g.d_mu, d_mu, 1e-6).max(grad_error(g.d_sigma, d_sigma, 1e-6));
        w_kl = w_kl.max(e);
        if e > tol {
            failures.push(format!("kl_grad μ={mu}, σ={sigma}: {g:?} vs ({d_mu}, {d_sigma})"));
        }
    }

    let mut w_sample: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (mu, sigma) in box_grid(100, 4) {
        let u: f64 = rng.gen_range(U_EPS..1.0 - U_EPS);
        let g = sample_grad(&params(mu, sigma), u).unwrap();
        let theta = |m: f64, s: f64| sample_trunc_lognormal(&params(m, s), u).unwrap();
        let h = 1e-5;
        let d_mu = central_diff(&|m| theta(m, sigma), mu, h);
        let d_sigma = central_diff(&|s| theta(mu, s), sigma, h.min(sigma / 10.0));
        let floor = 1e-8 * theta(mu, sigma);
        let e = grad_error(g.d_mu, d_mu, floor).max(grad_error(g.d_sigma, d_sigma, floor));
        w_sample = w_sample.max(e);
        if e > tol {
            failures.push(format!("sample_grad μ={mu}, σ={sigma}, u={u}: {g:?} vs ({d_mu}, {d_sigma})"));
        }
    }

    let mut w_layer: f64 = 0.0;
    for (k, (name, mut net, in_shape)) in micro_layers().into_iter().enumerate() {
        let n_in: usize = in_shape.iter().product();
        let x = Tensor::from_vec(&in_shape, uniform_values(n_in, 10 + k as u64)).unwrap();
        let n_out = net.forward_eval(&x).unwrap().len();
        let probe = uniform_values(n_out, 50 + k as u64);
        let (e, at) = gradient_check(&mut net, &x, &Objective::Probe(&probe), 1e-4);
        w_layer = w_layer.max(e);
        if e > tol {
            failures.push(format!("{name} backward: {at}"));
        }
    }

    // End to end: small conv net with channel and feature noise on 8 examples.
    let spec: NetworkSpec = serde_json::from_str(
        r#"{"input_shape": [6, 6, 1], "layers": [
            {"kind": "conv2d", "in_channels": 1, "out_channels": 3, "kernel_h": 3, "kernel_w": 3},
            {"kind": "relu"},
            {"kind": "sbp", "groups": "per_channel"},
            {"kind": "max_pool", "size": 2, "stride": 2},
            {"kind": "flatten"},
            {"kind": "sbp", "groups": "per_feature"},
            {"kind": "dense", "inputs": 12, "outputs": 5},
            {"kind": "relu"},
            {"kind": "sbp", "groups": "per_feature"},
            {"kind": "dense", "inputs": 5, "outputs": 3}
        ]}"#,
    )
    .unwrap();
    let mut net = Network::<f64>::from_spec(&spec, 11).unwrap();
    for (i, s) in net.sbp_layers_mut() {
        let g = s.groups();
        let mu: Vec<f64> = uniform_values(g, 70 + i as u64).iter().map(|v| -1.0 + v).collect();
        let ls: Vec<f64> = uniform_values(g, 80 + i as u64).iter().map(|v| -1.0 + v).collect();
        let mut fresh = SbpLayer::with_params(s.pattern().clone(), mu, ls, -20.0, 0.0, 1.0).unwrap();
        fresh.set_noise_key(11, i as u64);
        *s = fresh;
    }
    let x = Tensor::from_vec(&[8, 6, 6, 1], uniform_values(8 * 36, 90)).unwrap();
    let labels = [0, 1, 2, 0, 1, 2, 0, 1];
    let (w_e2e, at) = gradient_check(&mut net, &x, &Objective::Sgvb { labels: &labels, n: 40 }, 1e-4);
    if w_e2e > tol {
        failures.push(format!("end-to-end objective: {at}"));
    }

    let secs = t.elapsed().as_secs_f64();
    if secs >= 120.0 {
        failures.push(format!("took {secs:.1} s"));
    }
    finish(
        5,
        failures,
        format!(
            "max rel err: kl_grad {w_kl:.1e}, sample_grad {w_sample:.1e}, layers {w_layer:.1e}, \
             end-to-end {w_e2e:.1e} (≤ 1e-4); {secs:.1} s"
        ),
    );
}

fn criterion_6_prior_collapse() {
    let p = params(-10.0, 1e3);
    let kl = kl_trunc_logn_vs_trunc_logu(&p);
    let snr = snr_trunc_lognormal(&p);
    let mut failures = Vec::new();
    if kl > 1e-2 {
        failures.push(format!("KL = {kl}"));
    }
    if snr >= 1.0 {
        failures.push(format!("SNR = {snr}"));
    }
    finish(6, failures, format!("KL = {kl:.3e} (≤ 1e-2), SNR = {snr:.4} (< 1)"));
}

// ---------------------------------------------------------------------------
// MNIST-backed criteria.

fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("SBP_MNIST_DIR").map(PathBuf::from).unwrap_or_else(|| workspace_root().join("data/mnist"));
    MNIST_FILES.iter().all(|f| dir.join(f).is_file()).then_some(dir)
}

/// Returns the MNIST directory, or reports SKIP/FAIL and returns `None`.
fn require_mnist(criterion: u32) -> Option<PathBuf> {
    if let Some(dir) = mnist_dir() {
        return Some(dir);
    }
    if std::env::var("SBP_SKIP_MNIST").as_deref() == Ok("1") {
        let mut out = std::io::stdout().lock();
        writeln!(out, "criterion {criterion}: SKIP MNIST files not found (SBP_SKIP_MNIST=1)").unwrap();
        return None;
    }
    report(criterion, false, "MNIST IDX files not found; set SBP_MNIST_DIR");
    panic!("MNIST data missing");
}

/// Loads a shipped config and points its dataset at `dir`.
fn mnist_config(name: &str, dir: &std::path::Path) -> TrainConfig {
    let mut cfg = TrainConfig::from_file(&workspace_root().join("configs").join(name)).unwrap();
    if let DatasetSource::MnistIdx { dir: d, .. } = &mut cfg.dataset {
        *d = dir.to_path_buf();
    }
    cfg
}

struct MnistRun {
    config: TrainConfig,
    data: Split,
    outcome: TrainOutcome,
    secs: f64,
}

static TABLE1_RUN: OnceLock<MnistRun> = OnceLock::new();

fn table1_run(dir: &std::path::Path) -> &'static MnistRun {
    TABLE1_RUN.get_or_init(|| {
        let config = mnist_config("mnist_lenet_500_300.json", dir);
        let data = config.dataset.load().unwrap();
        let t = Instant::now();
        let outcome = train(&config, &data).unwrap();
        MnistRun { config, data, outcome, secs: t.elapsed().as_secs_f64() }
    })
}

fn criterion_7_table1_analog() {
    let Some(dir) = require_mnist(7) else { return };
    let run = table1_run(&dir);
    let r = &run.outcome.report;
    let err = r.test_error.unwrap();
    let input = &r.layers[0];
    let pruned_inputs = 1.0 - input.kept as f64 / input.total as f64;
    let speedup = r.speedup.unwrap_or(1.0);
    let widths: Vec<String> = r.layers.iter().map(|l| l.kept.to_string()).collect();
    let mut failures = Vec::new();
    if err > 0.025 {
        failures.push(format!("test error {err}"));
    }
    if pruned_inputs < 0.35 {
        failures.push(format!("only {pruned_inputs} of input features pruned"));
    }
    if speedup < 2.0 {
        failures.push(format!("speedup {speedup}"));
    }
    finish(
        7,
        failures,
        format!(
            "test error {:.2}% (≤ 2.5%), inputs pruned {:.1}% (≥ 35%), FLOPs speedup {speedup:.2}× (≥ 2×), \
             kept {}-10, {} train examples, {:.0} s",
            100.0 * err,
            100.0 * pruned_inputs,
            widths.join("-"),
            run.data.train.len(),
            run.secs
        ),
    );
}

fn criterion_8_compaction_equivalence() {
    let Some(dir) = require_mnist(8) else { return };
    let run = table1_run(&dir);
    let net = &run.outcome.network;
    let held_out = run.data.test.head(1000);
    let x = held_out.inputs.reshape(&[1000, 784]).unwrap();
    let masked = net.forward_eval(&x).unwrap();
    let compacted_net = compact(net).unwrap();
    let compacted = compacted_net.forward_eval(&x).unwrap();
    let (mut agree, mut drift) = (0usize, 0.0_f64);
    for (m, c) in masked.data().chunks(10).zip(compacted.data().chunks(10)) {
        agree += usize::from(argmax(m) == argmax(c));
        for (a, b) in m.iter().zip(c) {
            drift = drift.max(f64::from((a - b).abs()) / f64::from(a.abs()).max(1.0));
        }
    }
    let rate = agree as f64 / 1000.0;
    let mut failures = Vec::new();
    if rate < 0.999 {
        failures.push(format!("argmax agreement {rate}"));
    }
    if drift > 1e-4 {
        failures.push(format!("logit drift {drift}"));
    }
    finish(
        8,
        failures,
        format!(
            "argmax agreement {:.1}% (≥ 99.9%), max logit drift {drift:.1e} (≤ 1e-4 relative), {} → {} layers",
            100.0 * rate,
            net.layers().len(),
            compacted_net.layers().len()
        ),
    );
}

fn checkpoint_of_trained_network_reproduces_test_error() {
    let Some(dir) = mnist_dir() else { return };
    let run = table1_run(&dir);
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("net.sbp");
    save_checkpoint(&run.outcome.network, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let x = run.data.test.inputs.clone().reshape(&[run.data.test.len(), 784]).unwrap();
    let err = test_error(&loaded, &x, &run.data.test.labels).unwrap();
    let same = Some(err) == run.outcome.report.test_error;
    print_line("checkpoint", same, &format!("reloaded network test error {:.2}% matches the trained one", 100.0 * err));
    assert!(same, "reloaded test error {err} vs {:?}", run.outcome.report.test_error);
}

fn kept_fraction(o: &TrainOutcome) -> f64 {
    o.report.kept_fraction()
}

fn criterion_9_random_labels_direction() {
    let Some(dir) = require_mnist(9) else { return };
    let t = Instant::now();
    let cfg = mnist_config("mnist_random_labels.json", &dir);
    let data = cfg.dataset.load().unwrap();
    let truth = train(&cfg, &data).unwrap();
    let shuffled_cfg = TrainConfig { shuffle_labels: true, ..cfg };
    let shuffled = train(&shuffled_cfg, &data).unwrap();
    let (kt, ks) = (kept_fraction(&truth), kept_fraction(&shuffled));
    let acc = 1.0 - shuffled.report.test_error.unwrap();
    let majority = data.test.majority_rate();
    let mut failures = Vec::new();
    if ks > kt {
        failures.push(format!("shuffled kept fraction {ks} > true-label {kt}"));
    }
    if (acc - majority).abs() > 0.02 {
        failures.push(format!("shuffled accuracy {acc} vs majority rate {majority}"));
    }
    finish(
        9,
        failures,
        format!(
            "kept fraction shuffled {:.2}% ≤ true {:.2}%; shuffled accuracy {:.2}% vs majority {:.2}% (±2%), {:.0} s",
            100.0 * ks,
            100.0 * kt,
            100.0 * acc,
            100.0 * majority,
            t.elapsed().as_secs_f64()
        ),
    );
}

fn criterion_10_determinism() {
    let Some(dir) = require_mnist(10) else { return };
    let first = table1_run(&dir);
    let again = train(&first.config, &first.data).unwrap();
    let (a, b) = (first.outcome.metrics.to_csv(), again.metrics.to_csv());
    let same = a.as_bytes() == b.as_bytes();
    let failures = if same { Vec::new() } else { vec!["metrics CSVs differ".to_string()] };
    finish(10, failures, format!("two same-seed runs give byte-identical metrics CSVs ({} bytes)", a.len()));
}

const CHECKS: &[(&str, fn())] = &[
    ("criterion_1_closed_form_kl", criterion_1_closed_form_kl),
    ("criterion_2_moments_and_snr", criterion_2_moments_and_snr),
    ("criterion_3_stability_grid", criterion_3_stability_grid),
    ("criterion_4_sampling_law", criterion_4_sampling_law),
    ("criterion_5_gradient_fidelity", criterion_5_gradient_fidelity),
    ("criterion_6_prior_collapse", criterion_6_prior_collapse),
    ("criterion_7_table1_analog", criterion_7_table1_analog),
    ("criterion_8_compaction_equivalence", criterion_8_compaction_equivalence),
    ("checkpoint_of_trained_network_reproduces_test_error", checkpoint_of_trained_network_reproduces_test_error),
    ("criterion_9_random_labels_direction", criterion_9_random_labels_direction),
    ("criterion_10_determinism", criterion_10_determinism),
];

fn main() {
    let mut filters = Vec::new();
    let mut skips = Vec::new();
    let mut exact = false;
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        match a.as_str() {
            "--exact" => exact = true,
            "--skip" => skips.extend(args.next()),
            // libtest options that take a value; accepted and ignored
            "--test-threads" | "--color" | "--format" | "--logfile" | "-Z" => {
                args.next();
            }
            _ if a.starts_with('-') => {}
            _ => filters.push(a),
        }
    }
    let matches = |name: &str, pat: &String| if exact { name == pat } else { name.contains(pat.as_str()) };
    let selected = CHECKS.iter().filter(|(name, _)| {
        (filters.is_empty() || filters.iter().any(|f| matches(name, f))) && !skips.iter().any(|s| matches(name, s))
    });

    let mut failed = Vec::new();
    let mut ran = 0;
    for (name, check) in selected {
        ran += 1;
        REPORTED.store(false, Ordering::SeqCst);
        if panic::catch_unwind(AssertUnwindSafe(check)).is_err() {
            if !REPORTED.load(Ordering::SeqCst) {
                print_line(name, false, "panicked before reporting (see stderr)");
            }
            failed.push(*name);
        }
    }
    println!("\nacceptance: {} of {ran} checks passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
