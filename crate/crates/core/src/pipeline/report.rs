use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::net::{Network, Real};
use crate::pipeline::metrics::{layer_sparsity, snr_summaries, LayerSparsity, SnrSummary};
use crate::pipeline::{compact, count_flops};

/// Structured sparsity and compute savings of a trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub layers: Vec<LayerSparsity>,
    pub flops_before: u64,
    pub flops_after: u64,
    /// `flops_before / flops_after` (`+∞`, serialized as `null`, if nothing
    /// is left to compute).
    pub speedup: Option<f64>,
    pub test_error: Option<f64>,
    pub snr: Vec<SnrSummary>,
}

impl SparsityReport {
    /// Compacts `net` to measure FLOPs after pruning.
    pub fn for_network<T: Real>(net: &Network<T>, test_error: Option<f64>) -> Result<Self> {
        let compacted = compact(net)?;
        let before = count_flops(net)?;
        let after = count_flops(&compacted)?;
        Ok(Self {
            layers: layer_sparsity(net)?,
            flops_before: before,
            flops_after: after,
            speedup: (after > 0).then(|| before as f64 / after as f64),
            test_error,
            snr: snr_summaries(net)?,
        })
    }

    /// Fraction of all noise groups that survive pruning.
    pub fn kept_fraction(&self) -> f64 {
        let (k, t) = self.layers.iter().fold((0, 0), |(k, t), l| (k + l.kept, t + l.total));
        if t == 0 {
            1.0
        } else {
            k as f64 / t as f64
        }
    }

    /// Plain-text table of kept groups and FLOPs.
    pub fn to_table(&self) -> String {
        let mut s = String::from("layer  kept / total\n");
        for l in &self.layers {
            s.push_str(&format!("{:>5}  {} / {}\n", l.layer, l.kept, l.total));
        }
        s.push_str(&format!("FLOPs before: {}\nFLOPs after:  {}\n", self.flops_before, self.flops_after));
        match self.speedup {
            Some(x) => s.push_str(&format!("speedup:      {x:.2}x\n")),
            None => s.push_str("speedup:      unbounded (nothing left to compute)\n"),
        }
        if let Some(e) = self.test_error {
            s.push_str(&format!("test error:   {:.2}%\n", 100.0 * e));
        }
        s
    }
}
