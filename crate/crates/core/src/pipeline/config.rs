use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetSource;
use crate::error::{Error, Result};
use crate::net::{AdamConfig, NetworkSpec};
use crate::sbp::{DEFAULT_A, DEFAULT_B, DEFAULT_THRESHOLD};

/// How per-layer KL terms are weighted in the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    /// Every noise layer's KL enters with weight 1.
    #[default]
    Plain,
    /// Each noise layer's KL is weighted by the FLOPs of the weight layers
    /// next to it, normalized so the most expensive layer gets weight 1.
    Scaled,
}

impl std::str::FromStr for KlMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "plain" => Ok(KlMode::Plain),
            "scaled" => Ok(KlMode::Scaled),
            other => Err(format!("unknown KL mode `{other}` (expected `plain` or `scaled`)")),
        }
    }
}

/// Tensor precision for a run. `f64` is the shadow mode used to check
/// gradients; checkpoints always store 32-bit values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Network architecture: a named template or an explicit layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "template", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkChoice {
    /// 784-500-300-10 perceptron with noise in front of each dense layer.
    #[serde(rename = "lenet-500-300")]
    Lenet500300,
    /// LeNet-5 with 20/50 filters and 500 hidden units.
    Lenet5,
    /// Perceptron whose input and output widths come from the dataset.
    Mlp { hidden: Vec<usize> },
    Custom { spec: NetworkSpec },
}

impl NetworkChoice {
    /// Resolves the architecture for a dataset with the given example shape
    /// and class count.
    pub fn resolve(&self, item_shape: &[usize], classes: usize) -> NetworkSpec {
        let features: usize = item_shape.iter().product();
        match self {
            NetworkChoice::Lenet500300 => NetworkSpec::lenet_500_300(),
            NetworkChoice::Lenet5 => NetworkSpec::lenet5(),
            NetworkChoice::Mlp { hidden } => NetworkSpec::mlp(features, hidden, classes),
            NetworkChoice::Custom { spec } => spec.clone(),
        }
    }
}

fn d_a() -> f64 {
    DEFAULT_A
}
fn d_b() -> f64 {
    DEFAULT_B
}
fn d_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn d_batch() -> usize {
    100
}
fn d_one() -> usize {
    1
}
fn d_decay() -> f64 {
    5e-4
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub network: NetworkChoice,
    pub dataset: DatasetSource,
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: AdamConfig,
    /// Learning rate for the noise parameters; defaults to `optimizer.lr`.
    #[serde(default)]
    pub variational_lr: Option<f64>,
    /// Multiplier reached by the learning rates at the last epoch, with
    /// linear decay from the first; 1 keeps them constant.
    #[serde(default = "d_final_lr_fraction")]
    pub final_lr_fraction: f64,
    #[serde(default = "d_a")]
    pub a: f64,
    #[serde(default = "d_b")]
    pub b: f64,
    #[serde(default = "d_threshold")]
    pub snr_threshold: f64,
    #[serde(default)]
    pub kl_mode: KlMode,
    #[serde(default)]
    pub pretrain_epochs: usize,
    #[serde(default = "d_decay")]
    pub pretrain_weight_decay: f64,
    #[serde(default)]
    pub shuffle_labels: bool,
    #[serde(default = "d_one")]
    pub eval_every: usize,
    #[serde(default)]
    pub precision: Precision,
}

fn d_final_lr_fraction() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    /// Checks everything that does not depend on the dataset.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.a.is_finite() && self.b.is_finite()) || self.a >= self.b {
            return bad(format!(
                "truncation bounds need a < b (got a = {}, b = {}); swap them or widen the interval",
                self.a, self.b
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.snr_threshold.is_nan() || self.snr_threshold < 0.0 {
            return bad(format!("snr_threshold must be ≥ 0, got {}", self.snr_threshold));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return bad(format!("optimizer.lr must be positive, got {}", o.lr));
        }
        if let Some(v) = self.variational_lr {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("variational_lr must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad(format!("optimizer betas must lie in [0, 1), got {} and {}", o.beta1, o.beta2));
        }
        if !(o.eps > 0.0) {
            return bad(format!("optimizer.eps must be positive, got {}", o.eps));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return bad(format!("final_lr_fraction must lie in (0, 1], got {}", self.final_lr_fraction));
        }
        if !(self.pretrain_weight_decay >= 0.0 && self.pretrain_weight_decay.is_finite()) {
            return bad(format!("pretrain_weight_decay must be ≥ 0, got {}", self.pretrain_weight_decay));
        }
        Ok(())
    }

    /// Checks the minibatch against the loaded training-set size.
    pub fn validate_for_dataset(&self, train_size: usize) -> Result<()> {
        if self.batch_size > train_size {
            return Err(Error::Config(format!(
                "batch_size M = {} exceeds the training-set size N = {train_size}; lower batch_size or use more data",
                self.batch_size
            )));
        }
        Ok(())
    }
}
