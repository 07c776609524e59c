//! Physical removal of pruned groups.
//!
//! Compaction runs in two passes. The first folds every noise layer's
//! evaluation multipliers (mean for kept groups, 0 for pruned ones) into the
//! input side of the next dense or convolutional layer and drops the noise
//! layers; this is exact because ReLU and max-pooling commute with
//! nonnegative per-channel scaling. The second pass deletes structure: an
//! output unit of a weight layer whose every downstream feature was scaled
//! by 0 is removed together with the matching inputs of the consumer, and
//! any remaining dead inputs are skipped with a `Select` layer.

use crate::error::{Error, Result};
use crate::net::{Conv2d, Dense, Layer, Network, Real, Select};

/// Operation count for one example under the convention documented on
/// [`Layer::flops`].
pub fn count_flops<T: Real>(net: &Network<T>) -> Result<u64> {
    net.flops()
}

/// Checks that `scales` over an NHWC feature map is constant per channel and
/// returns the per-channel values.
fn per_channel(scales: &[f64], shape: &[usize], what: &str) -> Result<Vec<f64>> {
    let c = *shape.last().unwrap_or(&1);
    let ch: Vec<f64> = scales[..c.min(scales.len())].to_vec();
    if scales.iter().enumerate().any(|(f, &s)| s != ch[f % c]) {
        return Err(Error::UnsupportedPattern(format!(
            "noise groups that vary within a channel cannot be folded through {what} \
             (input shape {shape:?}); use a per-channel pattern there"
        )));
    }
    Ok(ch)
}

struct Folded<T: Real> {
    layers: Vec<Layer<T>>,
    /// For weight layers that received folded scales: per input feature,
    /// whether its multiplier is exactly 0.
    dead: Vec<Option<Vec<bool>>>,
}

fn fold<T: Real>(net: &Network<T>) -> Result<Folded<T>> {
    let shapes = net.shapes();
    let mut layers = Vec::with_capacity(net.layers().len());
    let mut dead = Vec::with_capacity(net.layers().len());
    let mut pending: Option<Vec<f64>> = None;
    for (i, layer) in net.layers().iter().enumerate() {
        let in_shape = &shapes[i];
        let mut l = layer.clone();
        l.clear_cache();
        let mut dead_in = None;
        match &mut l {
            Layer::Sbp(s) => {
                let sc = s.pattern().expand(&s.eval_scales()?);
                pending = Some(match pending.take() {
                    None => sc,
                    Some(p) => p.iter().zip(&sc).map(|(a, b)| a * b).collect(),
                });
                continue;
            }
            Layer::Relu(_) | Layer::Flatten(_) => {}
            Layer::MaxPool(_) => {
                if let Some(sc) = pending.take() {
                    let ch = per_channel(&sc, in_shape, "max-pooling")?;
                    let out_len: usize = shapes[i + 1].iter().product();
                    pending = Some((0..out_len).map(|f| ch[f % ch.len()]).collect());
                }
            }
            Layer::Select(s) => {
                if let Some(sc) = pending.take() {
                    let rows = sc.len() / s.width.max(1);
                    pending = Some((0..rows).flat_map(|r| s.indices.iter().map(move |&j| (r, j))).map(|(r, j)| sc[r * s.width + j]).collect());
                }
            }
            Layer::Dense(d) => {
                if let Some(sc) = pending.take() {
                    for (row, &s) in d.weight.chunks_exact_mut(d.outputs.max(1)).zip(&sc) {
                        row.iter_mut().for_each(|w| *w = T::of(w.f64() * s));
                    }
                    dead_in = Some(sc.iter().map(|&s| s == 0.0).collect());
                }
            }
            Layer::Conv2d(c) => {
                if let Some(sc) = pending.take() {
                    let ch = per_channel(&sc, in_shape, "a convolution")?;
                    let (cin, cout) = (c.geom.in_channels, c.geom.out_channels);
                    for (idx, w) in c.weight.iter_mut().enumerate() {
                        *w = T::of(w.f64() * ch[(idx / cout.max(1)) % cin]);
                    }
                    dead_in = Some(sc.iter().map(|&s| s == 0.0).collect());
                }
            }
        }
        layers.push(l);
        dead.push(dead_in);
    }
    if let Some(sc) = pending {
        if sc.iter().any(|&s| s != 1.0) {
            return Err(Error::UnsupportedPattern(
                "a noise layer after the last weight layer has nothing to fold into".into(),
            ));
        }
    }
    Ok(Folded { layers, dead })
}

/// Index of the weight layer whose output reaches layer `k` through
/// channel-preserving layers only.
fn producer_of<T: Real>(layers: &[Layer<T>], k: usize) -> Option<usize> {
    for j in (0..k).rev() {
        match &layers[j] {
            Layer::Relu(_) | Layer::MaxPool(_) | Layer::Flatten(_) => continue,
            Layer::Dense(_) | Layer::Conv2d(_) => return Some(j),
            Layer::Select(_) | Layer::Sbp(_) => return None,
        }
    }
    None
}

fn out_channels<T: Real>(l: &Layer<T>) -> usize {
    match l {
        Layer::Dense(d) => d.outputs,
        Layer::Conv2d(c) => c.geom.out_channels,
        _ => unreachable!("producers are weight layers"),
    }
}

/// Replaces every noise layer by its evaluation-time effect and deletes
/// pruned structure. The result computes the same logits as
/// `net.forward_eval` up to rounding.
pub fn compact<T: Real>(net: &Network<T>) -> Result<Network<T>> {
    let Folded { layers, dead } = fold(net)?;
    let n = layers.len();

    // Output units to keep, per producer.
    let mut keep_out: Vec<Option<Vec<bool>>> = vec![None; n];
    let mut producer: Vec<Option<usize>> = vec![None; n];
    for k in 0..n {
        let Some(d) = &dead[k] else { continue };
        let Some(p) = producer_of(&layers, k) else { continue };
        let cp = out_channels(&layers[p]);
        let mut alive = vec![false; cp];
        for (f, &is_dead) in d.iter().enumerate() {
            if !is_dead {
                alive[f % cp] = true;
            }
        }
        keep_out[p] = Some(alive);
        producer[k] = Some(p);
    }

    let mut out: Vec<Layer<T>> = Vec::with_capacity(n + 2);
    for (k, layer) in layers.iter().enumerate() {
        let upstream_kept = |unit: usize| match producer[k] {
            Some(p) => keep_out[p].as_ref().map_or(true, |m| m[unit % m.len()]),
            None => true,
        };
        let is_dead = |f: usize| dead[k].as_ref().is_some_and(|d| d[f]);
        match layer {
            Layer::Dense(d) => {
                let (rows, select) = surviving_inputs(d.inputs, &upstream_kept, &is_dead);
                if let Some(s) = select {
                    out.push(Layer::Select(s));
                }
                let cols: Vec<usize> = match &keep_out[k] {
                    Some(m) => (0..d.outputs).filter(|&o| m[o]).collect(),
                    None => (0..d.outputs).collect(),
                };
                let mut w = Vec::with_capacity(rows.len() * cols.len());
                for &r in &rows {
                    w.extend(cols.iter().map(|&c| d.weight[r * d.outputs + c]));
                }
                let b = cols.iter().map(|&c| d.bias[c]).collect();
                out.push(Layer::Dense(Dense::new(rows.len(), cols.len(), w, b)?));
            }
            Layer::Conv2d(c) => {
                let g = c.geom;
                // Convolution inputs die per channel, so feature `ch` (the first
                // spatial position) stands for the whole channel.
                let (chans, select) = surviving_inputs(g.in_channels, &upstream_kept, &is_dead);
                if let Some(s) = select {
                    out.push(Layer::Select(s));
                }
                let filters: Vec<usize> = match &keep_out[k] {
                    Some(m) => (0..g.out_channels).filter(|&o| m[o]).collect(),
                    None => (0..g.out_channels).collect(),
                };
                let mut w = Vec::with_capacity(g.kernel_h * g.kernel_w * chans.len() * filters.len());
                for pos in 0..g.kernel_h * g.kernel_w {
                    for &ci in &chans {
                        let base = (pos * g.in_channels + ci) * g.out_channels;
                        w.extend(filters.iter().map(|&o| c.weight[base + o]));
                    }
                }
                let b = filters.iter().map(|&o| c.bias[o]).collect();
                let geom = crate::net::ConvGeometry { in_channels: chans.len(), out_channels: filters.len(), ..g };
                out.push(Layer::Conv2d(Conv2d::new(geom, w, b)?));
            }
            other => out.push(other.clone()),
        }
    }
    Network::from_layers(net.input_shape().to_vec(), out)
}

/// Of `width` inputs, drops those whose producer unit is removed; of the
/// rest, keeps the live ones, adding a `Select` when some survivors are
/// dead. Returns original indices of live inputs.
fn surviving_inputs(
    width: usize,
    upstream_kept: &dyn Fn(usize) -> bool,
    is_dead: &dyn Fn(usize) -> bool,
) -> (Vec<usize>, Option<Select>) {
    let survivors: Vec<usize> = (0..width).filter(|&f| upstream_kept(f)).collect();
    let live_pos: Vec<usize> = survivors.iter().enumerate().filter(|(_, &f)| !is_dead(f)).map(|(j, _)| j).collect();
    let rows = live_pos.iter().map(|&j| survivors[j]).collect();
    let select = (live_pos.len() < survivors.len())
        .then(|| Select::new(survivors.len(), live_pos).expect("positions index the survivors"));
    (rows, select)
}
