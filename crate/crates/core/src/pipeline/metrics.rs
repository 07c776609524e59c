use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::net::{Network, Real};

/// Kept/total noise groups of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub layer: usize,
    pub kept: usize,
    pub total: usize,
}

/// Distribution of per-group SNR in one noise layer. Histogram bins are
/// over `log10(snr)` with edges `-1, -0.5, 0, 0.5, 1` (open-ended outer
/// bins); the SNR threshold 1 sits on the middle edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrSummary {
    pub layer: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub below_threshold: usize,
    pub histogram: [usize; 6],
}

pub const SNR_HIST_EDGES: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

impl SnrSummary {
    pub fn from_snr(layer: usize, snr: &[f64], threshold: f64) -> Self {
        let mut sorted = snr.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut histogram = [0usize; 6];
        for &s in snr {
            let l = s.log10();
            histogram[SNR_HIST_EDGES.iter().take_while(|&&e| l >= e).count()] += 1;
        }
        Self {
            layer,
            min: sorted.first().copied().unwrap_or(f64::NAN),
            median: sorted.get(sorted.len() / 2).copied().unwrap_or(f64::NAN),
            max: sorted.last().copied().unwrap_or(f64::NAN),
            below_threshold: snr.iter().filter(|&&s| s < threshold).count(),
            histogram,
        }
    }
}

pub fn layer_sparsity<T: Real>(net: &Network<T>) -> Result<Vec<LayerSparsity>> {
    net.sbp_layers()
        .map(|(i, s)| Ok(LayerSparsity { layer: i, kept: s.prune_report()?.kept_count, total: s.groups() }))
        .collect()
}

pub fn snr_summaries<T: Real>(net: &Network<T>) -> Result<Vec<SnrSummary>> {
    net.sbp_layers()
        .map(|(i, s)| Ok(SnrSummary::from_snr(i, &s.prune_report()?.snr, s.threshold())))
        .collect()
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_nll: f64,
    /// Unscaled KL sum over all noise layers at the end of the epoch.
    pub kl_total: f64,
    /// `−(N · train_nll + kl_total)`: estimate of the variational bound.
    pub elbo: f64,
    pub test_error: f64,
    pub sparsity: Vec<LayerSparsity>,
}

/// Per-epoch metrics with a fixed column schema.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsLog {
    /// Layer indices of the noise layers, fixing the trailing columns.
    pub layers: Vec<usize>,
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn new(layers: Vec<usize>) -> Self {
        Self { layers, rows: Vec::new() }
    }

    pub fn header(&self) -> String {
        let mut h = String::from("epoch,train_nll,kl_total,elbo,test_error");
        for l in &self.layers {
            h.push_str(&format!(",layer{l}:kept/total"));
        }
        h
    }

    /// CSV text. Floats use Rust's shortest round-trip formatting, so equal
    /// values always print identically.
    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{:?},{:?},{:?},{:?}", r.epoch, r.train_nll, r.kl_total, r.elbo, r.test_error));
            for s in &r.sparsity {
                out.push_str(&format!(",{}/{}", s.kept, s.total));
            }
            out.push('\n');
        }
        out
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }
}
