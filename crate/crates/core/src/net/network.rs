use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::layers::{Conv2d, ConvGeometry, Dense, Flatten, MaxPool, ParamKind, Relu, Select};
use crate::net::{Real, Tensor};
use crate::sbp::{GroupSpec, SbpLayer, DEFAULT_A, DEFAULT_B, DEFAULT_THRESHOLD};

fn default_a() -> f64 {
    DEFAULT_A
}

fn default_b() -> f64 {
    DEFAULT_B
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_stride() -> usize {
    1
}

/// Serializable description of one layer. Shapes of shape-preserving
/// layers are inferred from the network input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    Relu,
    Flatten,
    Sbp {
        groups: GroupSpec,
        #[serde(default = "default_a")]
        a: f64,
        #[serde(default = "default_b")]
        b: f64,
        /// `null` in JSON stands for `+∞` (prune everything).
        #[serde(default = "default_threshold", with = "threshold_serde")]
        threshold: f64,
    },
    Select {
        width: usize,
        indices: Vec<usize>,
    },
}

mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Ordered layer list plus the per-example input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

fn sbp_spec(groups: GroupSpec) -> LayerSpec {
    LayerSpec::Sbp { groups, a: DEFAULT_A, b: DEFAULT_B, threshold: DEFAULT_THRESHOLD }
}

impl NetworkSpec {
    /// Multilayer perceptron with a per-feature noise layer in front of every
    /// dense layer (including the input pixels).
    pub fn mlp(inputs: usize, hidden: &[usize], classes: usize) -> Self {
        let mut layers = Vec::new();
        let mut width = inputs;
        for (i, &h) in hidden.iter().chain(std::iter::once(&classes)).enumerate() {
            layers.push(sbp_spec(GroupSpec::PerFeature));
            layers.push(LayerSpec::Dense { inputs: width, outputs: h });
            if i < hidden.len() {
                layers.push(LayerSpec::Relu);
            }
            width = h;
        }
        Self { input_shape: vec![inputs], layers }
    }

    /// 784-500-300-10 perceptron.
    pub fn lenet_500_300() -> Self {
        Self::mlp(784, &[500, 300], 10)
    }

    /// LeNet-5 (20 and 50 filters of 5×5, 500 hidden units) with per-channel
    /// noise after each convolution and two consecutive noise layers between
    /// the last convolution and the first dense layer.
    pub fn lenet5() -> Self {
        let conv = |cin, cout| LayerSpec::Conv2d {
            in_channels: cin,
            out_channels: cout,
            kernel_h: 5,
            kernel_w: 5,
            stride: 1,
            padding: 0,
        };
        let pool = LayerSpec::MaxPool { size: 2, stride: 2 };
        Self {
            input_shape: vec![28, 28, 1],
            layers: vec![
                conv(1, 20),
                sbp_spec(GroupSpec::PerChannel),
                LayerSpec::Relu,
                pool.clone(),
                conv(20, 50),
                sbp_spec(GroupSpec::PerChannel),
                LayerSpec::Relu,
                pool,
                LayerSpec::Flatten,
                sbp_spec(GroupSpec::PerFeature),
                LayerSpec::Dense { inputs: 800, outputs: 500 },
                LayerSpec::Relu,
                sbp_spec(GroupSpec::PerFeature),
                LayerSpec::Dense { inputs: 500, outputs: 10 },
            ],
        }
    }
}

/// A layer with its parameters and training cache.
#[derive(Debug, Clone)]
pub enum Layer<T: Real> {
    Dense(Dense<T>),
    Conv2d(Conv2d<T>),
    MaxPool(MaxPool),
    Relu(Relu),
    Flatten(Flatten),
    Sbp(SbpLayer<T>),
    Select(Select),
}

impl<T: Real> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool(_) => "max_pool",
            Layer::Relu(_) => "relu",
            Layer::Flatten(_) => "flatten",
            Layer::Sbp(_) => "sbp",
            Layer::Select(_) => "select",
        }
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense(d) => d.out_shape(in_shape),
            Layer::Conv2d(c) => c.geom.out_shape(in_shape),
            Layer::MaxPool(p) => p.out_shape(in_shape),
            Layer::Relu(_) => Ok(in_shape.to_vec()),
            Layer::Flatten(_) => Ok(vec![in_shape.iter().product()]),
            Layer::Sbp(s) => {
                if s.pattern().input_shape() != in_shape {
                    return Err(Error::Shape(format!(
                        "sbp layer built for {:?} receives {:?}",
                        s.pattern().input_shape(),
                        in_shape
                    )));
                }
                Ok(in_shape.to_vec())
            }
            Layer::Select(s) => s.out_shape(in_shape),
        }
    }

    /// Operation count for one example, under the convention: dense
    /// `2·I·O`, conv `2·H_out·W_out·C_in·C_out·k_h·k_w`, pooling and ReLU one
    /// per output element, and 0 for noise, flatten and select (pure data
    /// movement or folded away at compaction).
    pub fn flops(&self, in_shape: &[usize]) -> Result<u64> {
        match self {
            Layer::Dense(d) => Ok(d.flops()),
            Layer::Conv2d(c) => c.flops(in_shape),
            Layer::MaxPool(p) => p.flops(in_shape),
            Layer::Relu(_) => Ok(in_shape.iter().product::<usize>() as u64),
            Layer::Flatten(_) | Layer::Sbp(_) | Layer::Select(_) => Ok(0),
        }
    }

    fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense { inputs: d.inputs, outputs: d.outputs },
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                in_channels: c.geom.in_channels,
                out_channels: c.geom.out_channels,
                kernel_h: c.geom.kernel_h,
                kernel_w: c.geom.kernel_w,
                stride: c.geom.stride,
                padding: c.geom.padding,
            },
            Layer::MaxPool(p) => LayerSpec::MaxPool { size: p.size, stride: p.stride },
            Layer::Relu(_) => LayerSpec::Relu,
            Layer::Flatten(_) => LayerSpec::Flatten,
            Layer::Sbp(s) => {
                let (a, b) = s.bounds();
                LayerSpec::Sbp { groups: s.pattern().spec().clone(), a, b, threshold: s.threshold() }
            }
            Layer::Select(s) => LayerSpec::Select { width: s.width, indices: s.indices.clone() },
        }
    }

    fn cast<U: Real>(&self) -> Layer<U> {
        let cv = |v: &[T]| v.iter().map(|x| U::of(x.f64())).collect::<Vec<U>>();
        match self {
            Layer::Dense(d) => Layer::Dense(
                Dense::new(d.inputs, d.outputs, cv(&d.weight), cv(&d.bias)).expect("shape already validated"),
            ),
            Layer::Conv2d(c) => {
                Layer::Conv2d(Conv2d::new(c.geom, cv(&c.weight), cv(&c.bias)).expect("shape already validated"))
            }
            Layer::MaxPool(p) => Layer::MaxPool(MaxPool::new(p.size, p.stride).expect("validated")),
            Layer::Relu(_) => Layer::Relu(Relu::new()),
            Layer::Flatten(_) => Layer::Flatten(Flatten::new()),
            Layer::Sbp(s) => Layer::Sbp(s.cast()),
            Layer::Select(s) => Layer::Select(Select::new(s.width, s.indices.clone()).expect("validated")),
        }
    }

    fn forward(&mut self, x: &Tensor<T>, step: u64) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Conv2d(l) => l.forward(x),
            Layer::MaxPool(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
            Layer::Flatten(l) => l.forward(x),
            Layer::Sbp(l) => l.forward_train(x, step),
            Layer::Select(l) => l.forward(x),
        }
    }

    fn eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(l) => l.eval(x),
            Layer::Conv2d(l) => l.eval(x),
            Layer::MaxPool(l) => l.eval(x),
            Layer::Relu(l) => l.eval(x),
            Layer::Flatten(l) => l.eval(x),
            Layer::Sbp(l) => l.forward_eval(x),
            Layer::Select(l) => l.eval(x),
        }
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(l) => l.backward(gy),
            Layer::Conv2d(l) => l.backward(gy),
            Layer::MaxPool(l) => l.backward(gy),
            Layer::Relu(l) => l.backward(gy),
            Layer::Flatten(l) => l.backward(gy),
            Layer::Sbp(l) => l.backward(gy),
            Layer::Select(l) => l.backward(gy),
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        match self {
            Layer::Dense(l) => l.clear_cache(),
            Layer::Conv2d(l) => l.clear_cache(),
            Layer::MaxPool(l) => l.clear_cache(),
            Layer::Relu(l) => l.clear_cache(),
            Layer::Flatten(l) => l.clear_cache(),
            Layer::Sbp(l) => l.clear_cache(),
            Layer::Select(l) => l.clear_cache(),
        }
    }
}

/// Sequential network over NHWC activations.
#[derive(Debug, Clone)]
pub struct Network<T: Real = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    /// `shapes[i]` is the per-example input shape of layer `i`; the last
    /// entry is the output shape.
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Network<T> {
    /// Assembles a network from built layers, checking that shapes compose.
    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape(format!("network input shape {input_shape:?} is degenerate")));
        }
        let mut shapes = vec![input_shape.clone()];
        for (i, l) in layers.iter().enumerate() {
            let next = l
                .out_shape(&shapes[i])
                .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", l.kind())))?;
            shapes.push(next);
        }
        Ok(Self { input_shape, layers, shapes })
    }

    /// Builds and initializes a network. Weights come from `seed`; each noise
    /// layer's stream is keyed by `(seed, layer index)`.
    pub fn from_spec(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = spec.input_shape.clone();
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, ls) in spec.layers.iter().enumerate() {
            let layer = match ls {
                LayerSpec::Dense { inputs, outputs } => Layer::Dense(Dense::init(*inputs, *outputs, &mut rng)?),
                LayerSpec::Conv2d { in_channels, out_channels, kernel_h, kernel_w, stride, padding } => {
                    Layer::Conv2d(Conv2d::init(
                        ConvGeometry {
                            in_channels: *in_channels,
                            out_channels: *out_channels,
                            kernel_h: *kernel_h,
                            kernel_w: *kernel_w,
                            stride: *stride,
                            padding: *padding,
                        },
                        &mut rng,
                    )?)
                }
                LayerSpec::MaxPool { size, stride } => Layer::MaxPool(MaxPool::new(*size, *stride)?),
                LayerSpec::Relu => Layer::Relu(Relu::new()),
                LayerSpec::Flatten => Layer::Flatten(Flatten::new()),
                LayerSpec::Sbp { groups, a, b, threshold } => {
                    let mut l = SbpLayer::new(groups.build(&shape)?, *a, *b, *threshold)?;
                    l.set_noise_key(seed, i as u64);
                    Layer::Sbp(l)
                }
                LayerSpec::Select { width, indices } => Layer::Select(Select::new(*width, indices.clone())?),
            };
            shape = layer
                .out_shape(&shape)
                .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", layer.kind())))?;
            layers.push(layer);
        }
        Self::from_layers(spec.input_shape.clone(), layers)
    }

    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec { input_shape: self.input_shape.clone(), layers: self.layers.iter().map(Layer::spec).collect() }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("shapes always holds the input shape")
    }

    /// Per-example input shape of every layer, followed by the output shape.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layer_mut(&mut self, i: usize) -> Option<&mut Layer<T>> {
        self.layers.get_mut(i)
    }

    pub fn into_layers(self) -> Vec<Layer<T>> {
        self.layers
    }

    pub fn sbp_layers(&self) -> impl Iterator<Item = (usize, &SbpLayer<T>)> {
        self.layers.iter().enumerate().filter_map(|(i, l)| match l {
            Layer::Sbp(s) => Some((i, s)),
            _ => None,
        })
    }

    pub fn sbp_layers_mut(&mut self) -> impl Iterator<Item = (usize, &mut SbpLayer<T>)> {
        self.layers.iter_mut().enumerate().filter_map(|(i, l)| match l {
            Layer::Sbp(s) => Some((i, s)),
            _ => None,
        })
    }

    /// Training forward pass; caches what backward needs. `step` selects
    /// the noise stream of every noise layer.
    pub fn forward_train(&mut self, x: &Tensor<T>, step: u64) -> Result<Tensor<T>> {
        x.expect_item_shape(&self.input_shape, "network input")?;
        let mut h = x.clone();
        for (i, l) in self.layers.iter_mut().enumerate() {
            h = l.forward(&h, step).map_err(|e| annotate(e, i, l.kind()))?;
        }
        Ok(h)
    }

    /// Deterministic evaluation pass (noise replaced by its masked mean).
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.expect_item_shape(&self.input_shape, "network input")?;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.eval(&h).map_err(|e| annotate(e, i, l.kind()))?;
        }
        Ok(h)
    }

    /// Backpropagates `grad_out` through the cached training pass,
    /// accumulating parameter gradients; returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_out.clone();
        for (i, l) in self.layers.iter_mut().enumerate().rev() {
            g = l.backward(&g).map_err(|e| annotate(e, i, l.kind()))?;
        }
        Ok(g)
    }

    /// Argmax class per example of the evaluation pass, in batches.
    pub fn predict(&self, x: &Tensor<T>, batch: usize) -> Result<Vec<usize>> {
        let n = x.batch();
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + batch.max(1)).min(n);
            let rows: Vec<usize> = (start..end).collect();
            let logits = self.forward_eval(&x.gather_rows(&rows))?;
            let c = logits.item_len();
            out.extend(logits.data().chunks_exact(c).map(argmax));
            start = end;
        }
        Ok(out)
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            match l {
                Layer::Dense(d) => d.zero_grad(),
                Layer::Conv2d(c) => c.zero_grad(),
                Layer::Sbp(s) => s.zero_grad(),
                _ => {}
            }
        }
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// Visits every trainable array with its gradient, in a fixed order.
    pub fn visit_params(&mut self, mut f: impl FnMut(usize, ParamKind, &mut [T], &mut [T])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            let mut g = |k: ParamKind, p: &mut [T], gr: &mut [T]| f(i, k, p, gr);
            match l {
                Layer::Dense(d) => d.visit_params(&mut g),
                Layer::Conv2d(c) => c.visit_params(&mut g),
                Layer::Sbp(s) => s.visit_params(&mut g),
                _ => {}
            }
        }
    }

    /// Total operation count for one example.
    pub fn flops(&self) -> Result<u64> {
        self.layers.iter().zip(&self.shapes).map(|(l, s)| l.flops(s)).sum()
    }

    /// Per-layer operation counts for one example.
    pub fn layer_flops(&self) -> Result<Vec<u64>> {
        self.layers.iter().zip(&self.shapes).map(|(l, s)| l.flops(s)).collect()
    }

    /// Same network in another precision (caches and gradients dropped).
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
            shapes: self.shapes.clone(),
        }
    }
}

fn annotate(e: Error, i: usize, kind: &str) -> Error {
    match e {
        Error::Shape(m) => Error::Shape(format!("layer {i} ({kind}): {m}")),
        Error::Numeric(m) => Error::Numeric(format!("layer {i} ({kind}): {m}")),
        other => other,
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
