//! Deterministic layers with hand-written backward passes. Activations are
//! NHWC; dense weights are `[inputs, outputs]`, conv weights
//! `[kernel_h, kernel_w, in_channels, out_channels]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::net::real::gemm;
use crate::net::{Real, Tensor};

/// Callback over `(role, values, gradients)` of each trainable array.
pub(crate) type ParamVisitor<'a, T> = dyn FnMut(ParamKind, &mut [T], &mut [T]) + 'a;

/// Role of a trainable array; drives weight decay, freezing and clamping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Mu,
    LogSigma,
}

fn missing_cache(op: &str) -> Error {
    Error::State(format!("{op} backward called without a cached training forward pass"))
}

fn check_grad_shape<T: Real>(gy: &Tensor<T>, want: &[usize], op: &str) -> Result<()> {
    if gy.shape() != want {
        return Err(Error::Shape(format!(
            "{op} backward: gradient shape {:?} does not match output shape {:?}",
            gy.shape(),
            want
        )));
    }
    Ok(())
}

fn with_batch(m: usize, item: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(item.len() + 1);
    s.push(m);
    s.extend_from_slice(item);
    s
}

/// He-uniform initialization, suited to ReLU networks.
fn he_uniform<T: Real>(rng: &mut impl Rng, fan_in: usize, n: usize) -> Vec<T> {
    let limit = (6.0 / fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| T::of(rng.gen_range(-limit..limit))).collect()
}

/// Fully connected layer `y = x·W + b`.
#[derive(Debug, Clone)]
pub struct Dense<T: Real> {
    pub(crate) inputs: usize,
    pub(crate) outputs: usize,
    pub(crate) weight: Vec<T>,
    pub(crate) bias: Vec<T>,
    grad_weight: Vec<T>,
    grad_bias: Vec<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(inputs: usize, outputs: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weight.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::Shape(format!(
                "dense {inputs}→{outputs}: got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            inputs,
            outputs,
            grad_weight: vec![T::zero(); weight.len()],
            grad_bias: vec![T::zero(); outputs],
            weight,
            bias,
            cache: None,
        })
    }

    pub fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Result<Self> {
        let w = he_uniform(rng, inputs, inputs * outputs);
        Self::new(inputs, outputs, w, vec![T::zero(); outputs])
    }

    pub fn weight(&self) -> &[T] {
        &self.weight
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn grad_weight(&self) -> &[T] {
        &self.grad_weight
    }

    pub fn grad_bias(&self) -> &[T] {
        &self.grad_bias
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        if in_shape != [self.inputs] {
            return Err(Error::Shape(format!(
                "dense layer expects {} input features, got shape {:?}",
                self.inputs, in_shape
            )));
        }
        Ok(vec![self.outputs])
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.eval(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.expect_item_shape(&[self.inputs], "dense")?;
        let m = x.batch();
        let mut y = Vec::with_capacity(m * self.outputs);
        for _ in 0..m {
            y.extend_from_slice(&self.bias);
        }
        gemm(false, false, m, self.outputs, self.inputs, T::one(), x.data(), &self.weight, T::one(), &mut y);
        let y = Tensor::from_vec(&[m, self.outputs], y)?;
        y.debug_check_finite("dense")?;
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache("dense"))?;
        let m = x.batch();
        check_grad_shape(gy, &[m, self.outputs], "dense")?;
        let (i, o) = (self.inputs, self.outputs);
        gemm(true, false, i, o, m, T::one(), x.data(), gy.data(), T::one(), &mut self.grad_weight);
        for row in gy.data().chunks_exact(o) {
            for (g, &v) in self.grad_bias.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut gx = vec![T::zero(); m * i];
        gemm(false, true, m, i, o, T::one(), gy.data(), &self.weight, T::zero(), &mut gx);
        Tensor::from_vec(&[m, i], gx)
    }

    pub fn flops(&self) -> u64 {
        2 * (self.inputs * self.outputs) as u64
    }

    pub(crate) fn zero_grad(&mut self) {
        self.grad_weight.iter_mut().for_each(|g| *g = T::zero());
        self.grad_bias.iter_mut().for_each(|g| *g = T::zero());
    }

    pub(crate) fn visit_params(&mut self, f: &mut ParamVisitor<'_, T>) {
        f(ParamKind::Weight, &mut self.weight, &mut self.grad_weight);
        f(ParamKind::Bias, &mut self.bias, &mut self.grad_bias);
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Geometry of a 2-D convolution over NHWC input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels
    }

    /// `[H_out, W_out, C_out]` for an `[H, W, C_in]` input.
    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        let bad = || {
            Error::Shape(format!(
                "conv2d {}x{} ({}→{} channels, stride {}, padding {}) cannot take input {:?}",
                self.kernel_h,
                self.kernel_w,
                self.in_channels,
                self.out_channels,
                self.stride,
                self.padding,
                in_shape
            ))
        };
        let &[h, w, c] = in_shape else { return Err(bad()) };
        if c != self.in_channels
            || h + 2 * self.padding < self.kernel_h
            || w + 2 * self.padding < self.kernel_w
        {
            return Err(bad());
        }
        Ok(vec![
            (h + 2 * self.padding - self.kernel_h) / self.stride + 1,
            (w + 2 * self.padding - self.kernel_w) / self.stride + 1,
            self.out_channels,
        ])
    }
}

#[derive(Debug, Clone)]
struct ConvCache<T> {
    cols: Vec<T>,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
}

/// 2-D cross-correlation with optional zero padding, computed as im2col
/// followed by one matrix product.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Real> {
    pub(crate) geom: ConvGeometry,
    pub(crate) weight: Vec<T>,
    pub(crate) bias: Vec<T>,
    grad_weight: Vec<T>,
    grad_bias: Vec<T>,
    cache: Option<ConvCache<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(geom: ConvGeometry, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        // Zero channel counts are legal: compaction can empty a layer.
        if geom.kernel_h == 0 || geom.kernel_w == 0 || geom.stride == 0 {
            return Err(Error::Shape(format!("degenerate conv2d geometry {geom:?}")));
        }
        if weight.len() != geom.patch_len() * geom.out_channels || bias.len() != geom.out_channels {
            return Err(Error::Shape(format!(
                "conv2d {geom:?}: got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            geom,
            grad_weight: vec![T::zero(); weight.len()],
            grad_bias: vec![T::zero(); bias.len()],
            weight,
            bias,
            cache: None,
        })
    }

    pub fn init(geom: ConvGeometry, rng: &mut impl Rng) -> Result<Self> {
        let w = he_uniform(rng, geom.patch_len(), geom.patch_len() * geom.out_channels);
        Self::new(geom, w, vec![T::zero(); geom.out_channels])
    }

    pub fn geometry(&self) -> ConvGeometry {
        self.geom
    }

    pub fn weight(&self) -> &[T] {
        &self.weight
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn grad_weight(&self) -> &[T] {
        &self.grad_weight
    }

    pub fn grad_bias(&self) -> &[T] {
        &self.grad_bias
    }

    fn im2col(&self, x: &Tensor<T>, out: &[usize]) -> Vec<T> {
        let g = &self.geom;
        let (m, h, w, c) = (x.batch(), x.shape()[1], x.shape()[2], g.in_channels);
        let (ho, wo) = (out[0], out[1]);
        let k = g.patch_len();
        let mut cols = vec![T::zero(); m * ho * wo * k];
        let xd = x.data();
        for n in 0..m {
            for oh in 0..ho {
                for ow in 0..wo {
                    let row = ((n * ho + oh) * wo + ow) * k;
                    for i in 0..g.kernel_h {
                        let ih = (oh * g.stride + i) as isize - g.padding as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for j in 0..g.kernel_w {
                            let iw = (ow * g.stride + j) as isize - g.padding as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            let src = ((n * h + ih as usize) * w + iw as usize) * c;
                            let dst = row + (i * g.kernel_w + j) * c;
                            cols[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], in_shape: &[usize], out: &[usize]) -> Vec<T> {
        let g = &self.geom;
        let (m, h, w, c) = (in_shape[0], in_shape[1], in_shape[2], g.in_channels);
        let (ho, wo) = (out[0], out[1]);
        let k = g.patch_len();
        let mut gx = vec![T::zero(); m * h * w * c];
        for n in 0..m {
            for oh in 0..ho {
                for ow in 0..wo {
                    let row = ((n * ho + oh) * wo + ow) * k;
                    for i in 0..g.kernel_h {
                        let ih = (oh * g.stride + i) as isize - g.padding as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for j in 0..g.kernel_w {
                            let iw = (ow * g.stride + j) as isize - g.padding as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            let dst = ((n * h + ih as usize) * w + iw as usize) * c;
                            let src = row + (i * g.kernel_w + j) * c;
                            for (d, &s) in gx[dst..dst + c].iter_mut().zip(&cols[src..src + c]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, cols) = self.apply(x)?;
        let out = y.item_shape().to_vec();
        self.cache = Some(ConvCache { cols, in_shape: x.shape().to_vec(), out_shape: out });
        Ok(y)
    }

    pub fn eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.apply(x)?.0)
    }

    fn apply(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
        let out = self.geom.out_shape(x.item_shape())?;
        let m = x.batch();
        let rows = m * out[0] * out[1];
        let cols = self.im2col(x, &out);
        let co = self.geom.out_channels;
        let mut y = Vec::with_capacity(rows * co);
        for _ in 0..rows {
            y.extend_from_slice(&self.bias);
        }
        gemm(false, false, rows, co, self.geom.patch_len(), T::one(), &cols, &self.weight, T::one(), &mut y);
        let y = Tensor::from_vec(&with_batch(m, &out), y)?;
        y.debug_check_finite("conv2d")?;
        Ok((y, cols))
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("conv2d"))?;
        let m = cache.in_shape[0];
        let result = (|| {
            check_grad_shape(gy, &with_batch(m, &cache.out_shape), "conv2d")?;
            let rows = m * cache.out_shape[0] * cache.out_shape[1];
            let (k, co) = (self.geom.patch_len(), self.geom.out_channels);
            gemm(true, false, k, co, rows, T::one(), &cache.cols, gy.data(), T::one(), &mut self.grad_weight);
            for row in gy.data().chunks_exact(co) {
                for (g, &v) in self.grad_bias.iter_mut().zip(row) {
                    *g += v;
                }
            }
            let mut gcols = vec![T::zero(); rows * k];
            gemm(false, true, rows, k, co, T::one(), gy.data(), &self.weight, T::zero(), &mut gcols);
            let gx = self.col2im(&gcols, &cache.in_shape, &cache.out_shape);
            Tensor::from_vec(&cache.in_shape, gx)
        })();
        self.cache = Some(cache);
        result
    }

    pub fn flops(&self, in_shape: &[usize]) -> Result<u64> {
        let out = self.geom.out_shape(in_shape)?;
        Ok(2 * (out[0] * out[1] * self.geom.patch_len() * self.geom.out_channels) as u64)
    }

    pub(crate) fn zero_grad(&mut self) {
        self.grad_weight.iter_mut().for_each(|g| *g = T::zero());
        self.grad_bias.iter_mut().for_each(|g| *g = T::zero());
    }

    pub(crate) fn visit_params(&mut self, f: &mut ParamVisitor<'_, T>) {
        f(ParamKind::Weight, &mut self.weight, &mut self.grad_weight);
        f(ParamKind::Bias, &mut self.bias, &mut self.grad_bias);
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Max pooling over `size × size` windows of an `[H, W, C]` input.
#[derive(Debug, Clone)]
pub struct MaxPool {
    pub(crate) size: usize,
    pub(crate) stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool {
    pub fn new(size: usize, stride: usize) -> Result<Self> {
        if size == 0 || stride == 0 {
            return Err(Error::Shape(format!("max-pool size {size} / stride {stride} must be positive")));
        }
        Ok(Self { size, stride, cache: None })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match *in_shape {
            [h, w, c] if h >= self.size && w >= self.size => {
                Ok(vec![(h - self.size) / self.stride + 1, (w - self.size) / self.stride + 1, c])
            }
            _ => Err(Error::Shape(format!("max-pool {} cannot take input {:?}", self.size, in_shape))),
        }
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, argmax) = self.apply(x, true)?;
        self.cache = Some((argmax, x.shape().to_vec()));
        Ok(y)
    }

    pub fn eval<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.apply(x, false)?.0)
    }

    fn apply<T: Real>(&self, x: &Tensor<T>, cache: bool) -> Result<(Tensor<T>, Vec<usize>)> {
        let out = self.out_shape(x.item_shape())?;
        let (m, h, w) = (x.batch(), x.shape()[1], x.shape()[2]);
        let (ho, wo, c) = (out[0], out[1], out[2]);
        let xd = x.data();
        let mut y = Vec::with_capacity(m * ho * wo * c);
        let mut argmax = Vec::with_capacity(if cache { m * ho * wo * c } else { 0 });
        for n in 0..m {
            for oh in 0..ho {
                for ow in 0..wo {
                    for ch in 0..c {
                        let mut best = usize::MAX;
                        let mut best_v = T::neg_infinity();
                        for i in 0..self.size {
                            for j in 0..self.size {
                                let idx = ((n * h + oh * self.stride + i) * w + ow * self.stride + j) * c + ch;
                                // First maximum wins, so ties route gradient deterministically.
                                if best == usize::MAX || xd[idx] > best_v {
                                    best = idx;
                                    best_v = xd[idx];
                                }
                            }
                        }
                        y.push(best_v);
                        if cache {
                            argmax.push(best);
                        }
                    }
                }
            }
        }
        Ok((Tensor::from_vec(&with_batch(m, &out), y)?, argmax))
    }

    pub fn backward<T: Real>(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let (argmax, in_shape) = self.cache.as_ref().ok_or_else(|| missing_cache("max-pool"))?;
        if gy.len() != argmax.len() {
            return Err(Error::Shape(format!(
                "max-pool backward: gradient has {} entries, forward produced {}",
                gy.len(),
                argmax.len()
            )));
        }
        let mut gx = Tensor::zeros(in_shape);
        let gxd = gx.data_mut();
        for (&idx, &g) in argmax.iter().zip(gy.data()) {
            gxd[idx] += g;
        }
        Ok(gx)
    }

    pub fn flops(&self, in_shape: &[usize]) -> Result<u64> {
        Ok(self.out_shape(in_shape)?.iter().product::<usize>() as u64)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Elementwise `max(x, 0)`.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<(Vec<bool>, Vec<usize>)>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.mask = Some((x.data().iter().map(|&v| v > T::zero()).collect(), x.shape().to_vec()));
        self.eval(x)
    }

    pub fn eval<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y: Vec<T> = x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        Tensor::from_vec(x.shape(), y)
    }

    pub fn backward<T: Real>(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let (mask, shape) = self.mask.as_ref().ok_or_else(|| missing_cache("relu"))?;
        check_grad_shape(gy, shape, "relu")?;
        let gx = gy.data().iter().zip(mask).map(|(&g, &on)| if on { g } else { T::zero() }).collect();
        Tensor::from_vec(shape, gx)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.mask = None;
    }
}

/// Collapses everything after the batch axis into one feature axis. NHWC
/// order means feature `f` of a flattened `[H, W, C]` map has channel
/// `f % C`.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    in_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.eval(x)?;
        self.in_shape = Some(x.shape().to_vec());
        Ok(y)
    }

    pub fn eval<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape().is_empty() {
            return Err(Error::Shape("flatten needs a batch axis".into()));
        }
        x.clone().reshape(&[x.batch(), x.item_len()])
    }

    pub fn backward<T: Real>(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.in_shape.as_ref().ok_or_else(|| missing_cache("flatten"))?;
        gy.clone().reshape(shape)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.in_shape = None;
    }
}

/// Keeps the listed positions of the last axis, in order. Compaction inserts
/// it in front of a consumer whose inputs are only partly dead.
#[derive(Debug, Clone)]
pub struct Select {
    pub(crate) width: usize,
    pub(crate) indices: Vec<usize>,
    in_shape: Option<Vec<usize>>,
}

impl Select {
    pub fn new(width: usize, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= width) {
            return Err(Error::Shape(format!("select index {bad} out of range for width {width}")));
        }
        Ok(Self { width, indices, in_shape: None })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match in_shape.split_last() {
            Some((&last, rest)) if last == self.width => {
                let mut s = rest.to_vec();
                s.push(self.indices.len());
                Ok(s)
            }
            _ => Err(Error::Shape(format!(
                "select expects last axis of width {}, got {:?}",
                self.width, in_shape
            ))),
        }
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.eval(x)?;
        self.in_shape = Some(x.shape().to_vec());
        Ok(y)
    }

    pub fn eval<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.out_shape(x.item_shape())?;
        let mut y = Vec::with_capacity(x.len() / self.width * self.indices.len());
        for row in x.data().chunks_exact(self.width) {
            y.extend(self.indices.iter().map(|&i| row[i]));
        }
        Tensor::from_vec(&with_batch(x.batch(), &out), y)
    }

    pub fn backward<T: Real>(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.in_shape.as_ref().ok_or_else(|| missing_cache("select"))?;
        let mut gx = Tensor::zeros(shape);
        let k = self.indices.len();
        if gy.len() * self.width != gx.len() * k {
            return Err(Error::Shape("select backward: gradient size mismatch".into()));
        }
        for (grow, gyrow) in gx.data_mut().chunks_exact_mut(self.width).zip(gy.data().chunks_exact(k.max(1))) {
            for (&i, &g) in self.indices.iter().zip(gyrow) {
                grow[i] += g;
            }
        }
        Ok(gx)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.in_shape = None;
    }
}
