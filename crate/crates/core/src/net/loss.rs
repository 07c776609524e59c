use crate::error::{Error, Result};
use crate::net::{Real, Tensor};

/// Mean negative log-likelihood of integer labels under softmax(logits),
/// and its gradient with respect to the logits.
pub fn softmax_xent<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let &[m, c] = logits.shape() else {
        return Err(Error::Shape(format!("softmax_xent expects [batch, classes], got {:?}", logits.shape())));
    };
    if labels.len() != m {
        return Err(Error::Shape(format!("{} labels for a batch of {m}", labels.len())));
    }
    if m == 0 {
        return Ok((0.0, logits.clone()));
    }
    let mut grad = Vec::with_capacity(m * c);
    let mut nll = 0.0;
    let inv_m = 1.0 / m as f64;
    for (row, &y) in logits.data().chunks_exact(c).zip(labels) {
        if y >= c {
            return Err(Error::Data(format!("label {y} out of range for {c} classes")));
        }
        let max = row.iter().fold(f64::NEG_INFINITY, |acc, v| acc.max(v.f64()));
        let sum: f64 = row.iter().map(|v| (v.f64() - max).exp()).sum();
        let log_sum = sum.ln() + max;
        nll += log_sum - row[y].f64();
        for (j, v) in row.iter().enumerate() {
            let p = (v.f64() - log_sum).exp();
            let onehot = if j == y { 1.0 } else { 0.0 };
            grad.push(T::of((p - onehot) * inv_m));
        }
    }
    Ok((nll * inv_m, Tensor::from_vec(&[m, c], grad)?))
}

/// One layer's contribution to the KL part of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlTerm {
    pub layer: usize,
    pub kl: f64,
    pub scale: f64,
}

/// Ingredients of the minibatch estimate of the negative variational bound.
#[derive(Debug, Clone, PartialEq)]
pub struct SgvbLossParts {
    /// Mean negative log-likelihood over the minibatch.
    pub nll_minibatch: f64,
    /// Training-set size.
    pub n: usize,
    /// Minibatch size.
    pub m: usize,
    pub kl_terms: Vec<KlTerm>,
}

/// `(loss, scaled KL total)` with `loss = N·nll + Σ scale·KL` — the negated
/// bound, so smaller is better. The data term is rescaled from the
/// minibatch mean to the whole training set.
pub fn sgvb_objective(parts: &SgvbLossParts) -> Result<(f64, f64)> {
    if parts.m == 0 || parts.n < parts.m {
        return Err(Error::Config(format!(
            "need dataset size N ≥ minibatch size M ≥ 1, got N={}, M={}",
            parts.n, parts.m
        )));
    }
    let mut kl_total = 0.0;
    for t in &parts.kl_terms {
        if !(t.scale > 0.0) {
            return Err(Error::Config(format!("KL scale of layer {} must be positive, got {}", t.layer, t.scale)));
        }
        kl_total += t.scale * t.kl;
    }
    let loss = parts.n as f64 * parts.nll_minibatch + kl_total;
    Ok((loss, kl_total))
}
