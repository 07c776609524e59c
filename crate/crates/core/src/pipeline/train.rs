use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::net::{
    apply_adam, sgvb_objective, softmax_xent, AdamConfig, AdamState, KlTerm, Layer, LayerSpec, Network, ParamKind,
    Real, SgvbLossParts, Tensor,
};
use crate::pipeline::config::{KlMode, Precision, TrainConfig};
use crate::pipeline::metrics::{layer_sparsity, MetricsLog, MetricsRow};
use crate::pipeline::report::SparsityReport;
use crate::sbp::{INIT_MU, INIT_SIGMA, LOG_SIGMA_RANGE};

/// Stream-key salts so that data order, label shuffling and initialization
/// draw from unrelated streams of the same seed.
const ORDER_SALT: u64 = 0x6f72_6465_7273_6565;
const LABEL_SALT: u64 = 0x6c61_6265_6c73_6565;

const EVAL_BATCH: usize = 1000;

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub metrics: MetricsLog,
    pub report: SparsityReport,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Failed(#[from] Error),
    /// Non-finite loss or gradient; carries the network as of the last
    /// completed epoch.
    #[error("training diverged at epoch {epoch} (step {step}): {reason}")]
    Diverged { epoch: usize, step: u64, reason: String, last_good: Box<Network<f32>>, metrics: MetricsLog },
}

/// Trains according to `config` on `data`.
pub fn train(config: &TrainConfig, data: &Split) -> Result<TrainOutcome, TrainError> {
    train_with(config, data, |_| {})
}

/// As [`train`], calling `on_row` after every logged epoch.
pub fn train_with(
    config: &TrainConfig,
    data: &Split,
    on_row: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome, TrainError> {
    match config.precision {
        Precision::F32 => Trainer::<f32>::new(config, data)?.run(on_row),
        Precision::F64 => Trainer::<f64>::new(config, data)?.run(on_row),
    }
}

/// Builds the network a config describes, with the config's truncation
/// bounds and threshold applied to every noise layer.
pub fn build_network<T: Real>(config: &TrainConfig, item_shape: &[usize], classes: usize) -> Result<Network<T>> {
    let mut spec = config.network.resolve(item_shape, classes);
    for l in &mut spec.layers {
        if let LayerSpec::Sbp { a, b, threshold, .. } = l {
            *a = config.a;
            *b = config.b;
            *threshold = config.snr_threshold;
        }
    }
    let net = Network::<T>::from_spec(&spec, config.seed)?;
    let in_len: usize = net.input_shape().iter().product();
    let item_len: usize = item_shape.iter().product();
    if in_len != item_len {
        return Err(Error::Config(format!(
            "network takes {:?} ({in_len} values) but examples have shape {item_shape:?}",
            net.input_shape()
        )));
    }
    if net.output_shape() != [classes] {
        return Err(Error::Config(format!(
            "network outputs {:?} but the dataset has {classes} classes",
            net.output_shape()
        )));
    }
    Ok(net)
}

/// Reshapes a dataset's inputs to the network input and converts precision.
pub fn network_inputs<T: Real>(net: &Network<T>, ds: &Dataset) -> Result<Tensor<T>> {
    let mut shape = vec![ds.len()];
    shape.extend_from_slice(net.input_shape());
    ds.inputs.cast::<T>().reshape(&shape)
}

/// Fraction of misclassified examples under the evaluation pass.
pub fn test_error<T: Real>(net: &Network<T>, inputs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let pred = net.predict(inputs, EVAL_BATCH)?;
    let wrong = pred.iter().zip(labels).filter(|(p, y)| p != y).count();
    Ok(wrong as f64 / labels.len().max(1) as f64)
}

/// Per noise layer: weight of its KL term in the objective.
pub fn kl_scales<T: Real>(net: &Network<T>, mode: KlMode) -> Result<Vec<(usize, f64)>> {
    let sbp: Vec<usize> = net.sbp_layers().map(|(i, _)| i).collect();
    match mode {
        KlMode::Plain => Ok(sbp.into_iter().map(|i| (i, 1.0)).collect()),
        KlMode::Scaled => {
            let flops = net.layer_flops()?;
            let is_weight = |l: &Layer<T>| matches!(l, Layer::Dense(_) | Layer::Conv2d(_));
            let layers = net.layers();
            let cost: Vec<f64> = sbp
                .iter()
                .map(|&i| {
                    let before = (0..i).rev().find(|&j| is_weight(&layers[j])).map_or(0, |j| flops[j]);
                    let after = (i + 1..layers.len()).find(|&j| is_weight(&layers[j])).map_or(0, |j| flops[j]);
                    (before + after) as f64
                })
                .collect();
            let max = cost.iter().copied().fold(0.0, f64::max);
            Ok(sbp
                .into_iter()
                .zip(cost)
                .map(|(i, c)| (i, if max > 0.0 && c > 0.0 { c / max } else { 1.0 }))
                .collect())
        }
    }
}

struct Optimizer<T> {
    cfg: AdamConfig,
    states: Vec<AdamState<T>>,
    t: u64,
}

impl<T: Real> Optimizer<T> {
    fn new(cfg: AdamConfig) -> Self {
        Self { cfg, states: Vec::new(), t: 0 }
    }

    /// One Adam step over every array; noise parameters are skipped when
    /// `freeze_noise` is set. `decay` is added as `decay · w` to weight
    /// gradients. Aborts before any update on a non-finite gradient.
    fn step(&mut self, net: &mut Network<T>, lr_w: f64, lr_v: f64, decay: f64, freeze_noise: bool) -> Result<()> {
        let mut bad = None;
        net.visit_params(|layer, kind, _, g| {
            if bad.is_none() && g.iter().any(|v| !v.is_finite()) {
                bad = Some(format!("non-finite {kind:?} gradient in layer {layer}"));
            }
        });
        if let Some(m) = bad {
            return Err(Error::Numeric(m));
        }
        self.t += 1;
        let mut idx = 0;
        let (states, cfg, t) = (&mut self.states, &self.cfg, self.t);
        net.visit_params(|_, kind, p, g| {
            if states.len() <= idx {
                states.push(AdamState::new(p.len()));
            }
            let noise = matches!(kind, ParamKind::Mu | ParamKind::LogSigma);
            if !(noise && freeze_noise) {
                if kind == ParamKind::Weight && decay > 0.0 {
                    let d = T::of(decay);
                    g.iter_mut().zip(p.iter()).for_each(|(gv, &pv)| *gv += d * pv);
                }
                apply_adam(p, g, &mut states[idx], cfg, if noise { lr_v } else { lr_w }, t);
            }
            idx += 1;
        });
        Ok(())
    }
}

struct Trainer<'a, T: Real> {
    config: &'a TrainConfig,
    net: Network<T>,
    train_x: Tensor<T>,
    train_y: Vec<usize>,
    test_x: Tensor<T>,
    test_y: &'a [usize],
    kl_scales: Vec<(usize, f64)>,
    step: u64,
    epoch_counter: u64,
}

enum Phase {
    Pretrain,
    Variational,
}

impl<'a, T: Real> Trainer<'a, T> {
    fn new(config: &'a TrainConfig, data: &'a Split) -> Result<Self> {
        config.validate()?;
        if data.train.is_empty() || data.test.is_empty() {
            return Err(Error::Data("training and test sets must both be non-empty".into()));
        }
        config.validate_for_dataset(data.train.len())?;
        let net = build_network::<T>(config, data.train.inputs.item_shape(), data.train.classes)?;
        let mut train_y = data.train.labels.clone();
        if config.shuffle_labels {
            train_y.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ LABEL_SALT));
        }
        Ok(Self {
            config,
            train_x: network_inputs(&net, &data.train)?,
            test_x: network_inputs(&net, &data.test)?,
            test_y: &data.test.labels,
            kl_scales: kl_scales(&net, config.kl_mode)?,
            net,
            train_y,
            step: 0,
            epoch_counter: 0,
        })
    }

    fn run(mut self, mut on_row: impl FnMut(&MetricsRow)) -> Result<TrainOutcome, TrainError> {
        let layers: Vec<usize> = self.net.sbp_layers().map(|(i, _)| i).collect();
        let mut metrics = MetricsLog::new(layers);
        let mut last_good = self.net.cast::<f32>();

        if self.config.pretrain_epochs > 0 {
            for (_, s) in self.net.sbp_layers_mut() {
                s.fill_params(INIT_MU, LOG_SIGMA_RANGE.0);
            }
            let mut opt = Optimizer::new(self.config.optimizer);
            for e in 0..self.config.pretrain_epochs {
                let lr = self.config.optimizer.lr;
                if let Err(err) = self.epoch(&mut opt, Phase::Pretrain, lr, lr) {
                    return Err(self.diverged(err, e + 1, last_good, metrics));
                }
                last_good = self.net.cast::<f32>();
            }
            for (_, s) in self.net.sbp_layers_mut() {
                s.fill_params(INIT_MU, INIT_SIGMA.ln());
            }
            last_good = self.net.cast::<f32>();
        }

        let mut opt = Optimizer::new(self.config.optimizer);
        let epochs = self.config.epochs;
        for e in 0..epochs {
            let frac = if epochs > 1 { e as f64 / (epochs - 1) as f64 } else { 0.0 };
            let mult = 1.0 - (1.0 - self.config.final_lr_fraction) * frac;
            let lr_w = self.config.optimizer.lr * mult;
            let lr_v = self.config.variational_lr.unwrap_or(self.config.optimizer.lr) * mult;
            let nll = match self.epoch(&mut opt, Phase::Variational, lr_w, lr_v) {
                Ok(v) => v,
                Err(err) => return Err(self.diverged(err, e + 1, last_good, metrics)),
            };
            let epoch = e + 1;
            if epoch % self.config.eval_every == 0 || epoch == epochs {
                let row = self.metrics_row(epoch, nll)?;
                if !row.elbo.is_finite() {
                    let err = Error::Numeric(format!("variational bound estimate is {}", row.elbo));
                    return Err(self.diverged(err, epoch, last_good, metrics));
                }
                on_row(&row);
                metrics.rows.push(row);
            }
            last_good = self.net.cast::<f32>();
        }

        self.net.clear_caches();
        let network = self.net.cast::<f32>();
        let err = match metrics.last() {
            Some(r) => r.test_error,
            None => test_error(&network, &self.test_x.cast::<f32>(), self.test_y)?,
        };
        let report = SparsityReport::for_network(&network, Some(err))?;
        Ok(TrainOutcome { network, metrics, report })
    }

    fn diverged(&self, err: Error, epoch: usize, last_good: Network<f32>, metrics: MetricsLog) -> TrainError {
        match err {
            Error::Numeric(reason) => {
                TrainError::Diverged { epoch, step: self.step, reason, last_good: Box::new(last_good), metrics }
            }
            other => TrainError::Failed(other),
        }
    }

    /// One pass over the training set; returns the mean minibatch NLL.
    fn epoch(&mut self, opt: &mut Optimizer<T>, phase: Phase, lr_w: f64, lr_v: f64) -> Result<f64> {
        let n = self.train_y.len();
        let m = self.config.batch_size;
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ ORDER_SALT);
        rng.set_stream(self.epoch_counter);
        self.epoch_counter += 1;
        order.shuffle(&mut rng);

        let pretrain = matches!(phase, Phase::Pretrain);
        let decay = if pretrain { self.config.pretrain_weight_decay * n as f64 } else { 0.0 };
        let mut nll_sum = 0.0;
        for batch in order.chunks(m) {
            let xb = self.train_x.gather_rows(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| self.train_y[i]).collect();
            self.net.zero_grad();
            let logits = self.net.forward_train(&xb, self.step)?;
            let (nll, mut grad) = softmax_xent(&logits, &yb)?;
            let scale = T::of(n as f64);
            grad.data_mut().iter_mut().for_each(|g| *g = *g * scale);
            self.net.backward(&grad)?;
            let mut kl_terms = Vec::new();
            if !pretrain {
                for &(layer, s) in &self.kl_scales {
                    if let Some(Layer::Sbp(l)) = self.net.layer_mut(layer) {
                        kl_terms.push(KlTerm { layer, kl: l.kl_sum()?, scale: s });
                        l.add_kl_grads(s)?;
                    }
                }
            }
            let (loss, _) = sgvb_objective(&SgvbLossParts { nll_minibatch: nll, n, m: batch.len(), kl_terms })?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss is {loss}")));
            }
            opt.step(&mut self.net, lr_w, lr_v, decay, pretrain)?;
            for (_, s) in self.net.sbp_layers_mut() {
                s.clamp_params();
            }
            nll_sum += nll * batch.len() as f64;
            self.step += 1;
        }
        Ok(nll_sum / n as f64)
    }

    fn metrics_row(&mut self, epoch: usize, train_nll: f64) -> Result<MetricsRow> {
        self.net.clear_caches();
        let kl_total: f64 = self.net.sbp_layers().map(|(_, s)| s.kl_sum()).sum::<Result<f64>>()?;
        let n = self.train_y.len() as f64;
        Ok(MetricsRow {
            epoch,
            train_nll,
            kl_total,
            elbo: -(n * train_nll + kl_total),
            test_error: test_error(&self.net, &self.test_x, self.test_y)?,
            sparsity: layer_sparsity(&self.net)?,
        })
    }
}
