//! Sequential networks, mini-batch assembly, SGD and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    argmax_per_sample, Activation, ConvLayer, FullLayer, LayerGrads, LossHead, LossKind,
    PoolLayer, PoolSpec, Targets,
};
use crate::tensor::{DType, Dims, Scalar, Tensor};
use crate::variants::{Executor, Trace, Variant};
use crate::vectorize::{ConvGeometry, PoolBackward, PoolMode};

fn one() -> usize {
    1
}

/// Declarative description of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        kernel: [usize; 2],
        maps: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        activation: Activation,
    },
    Pool {
        window: [usize; 2],
        /// Defaults to the window height (non-overlapping).
        #[serde(default)]
        stride: Option<usize>,
        mode: PoolMode,
        #[serde(default)]
        bias: bool,
        #[serde(default)]
        activation: Activation,
        #[serde(default)]
        backward: PoolBackward,
    },
    Full {
        units: usize,
        #[serde(default)]
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn conv(kernel: usize, maps: usize, activation: Activation) -> Self {
        LayerSpec::Conv {
            kernel: [kernel, kernel],
            maps,
            stride: 1,
            activation,
        }
    }

    pub fn max_pool(window: usize) -> Self {
        LayerSpec::Pool {
            window: [window, window],
            stride: None,
            mode: PoolMode::Max,
            bias: false,
            activation: Activation::Identity,
            backward: PoolBackward::Exact,
        }
    }

    pub fn full(units: usize, activation: Activation) -> Self {
        LayerSpec::Full { units, activation }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Conv { .. } => LayerKind::Conv,
            LayerSpec::Pool { .. } => LayerKind::Pool,
            LayerSpec::Full { .. } => LayerKind::Full,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    Pool,
    Full,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Pool => "pool",
            LayerKind::Full => "full",
        }
    }
}

/// Network architecture: `input` is `[height, width, channels]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub loss: LossKind,
    #[serde(default)]
    pub seed: u64,
}

pub const PRESETS: [&str; 4] = ["scale1-analog", "scale2-mini", "scale3-mini", "denoise"];

impl NetworkSpec {
    pub fn input_dims(&self, batch: usize) -> Dims {
        Dims::new(self.input[0], self.input[1], self.input[2], batch)
    }

    /// Named architectures.
    ///
    /// * `scale1-analog`: LeNet-like, 20/50 conv maps, two hidden FC layers, 10 outputs.
    /// * `scale2-mini`: three conv and three FC layers at stride 1, 100 outputs.
    /// * `scale3-mini`: `scale2-mini` with 1000 outputs.
    /// * `denoise`: three 5x5 conv layers (16/16/1 maps) with an MSE head; see
    ///   [`NetworkSpec::denoise`] for other input sizes.
    pub fn preset(name: &str) -> Result<Self> {
        use Activation::{Identity, Relu};
        let spec = match name {
            "scale1-analog" => NetworkSpec {
                input: [28, 28, 1],
                layers: vec![
                    LayerSpec::conv(5, 20, Relu),
                    LayerSpec::max_pool(2),
                    LayerSpec::conv(5, 50, Relu),
                    LayerSpec::max_pool(2),
                    LayerSpec::full(500, Relu),
                    LayerSpec::full(100, Relu),
                    LayerSpec::full(10, Identity),
                ],
                loss: LossKind::SoftmaxCrossEntropy,
                seed: 1,
            },
            "scale2-mini" | "scale3-mini" => NetworkSpec {
                input: [32, 32, 3],
                layers: vec![
                    LayerSpec::conv(5, 32, Relu),
                    LayerSpec::max_pool(2),
                    LayerSpec::conv(3, 64, Relu),
                    LayerSpec::max_pool(2),
                    LayerSpec::conv(3, 96, Relu),
                    LayerSpec::full(2048, Relu),
                    LayerSpec::full(1024, Relu),
                    LayerSpec::full(if name == "scale2-mini" { 100 } else { 1000 }, Identity),
                ],
                loss: LossKind::SoftmaxCrossEntropy,
                seed: 1,
            },
            "denoise" => NetworkSpec::denoise(32, 32),
            other => return Err(Error::Spec(format!("unknown preset {other:?}"))),
        };
        Ok(spec)
    }

    pub fn denoise(height: usize, width: usize) -> Self {
        NetworkSpec {
            input: [height, width, 1],
            layers: vec![
                LayerSpec::conv(5, 16, Activation::Relu),
                LayerSpec::conv(5, 16, Activation::Relu),
                LayerSpec::conv(5, 1, Activation::Identity),
            ],
            loss: LossKind::MeanSquaredError,
            seed: 1,
        }
    }

    /// Checks that layer shapes chain; returns each layer's per-sample output extents.
    pub fn validate(&self) -> Result<Vec<Dims>> {
        if self.input.iter().any(|&e| e == 0) {
            return Err(Error::Spec(format!("input extents must be positive: {:?}", self.input)));
        }
        if self.layers.is_empty() {
            return Err(Error::Spec("network has no layers".into()));
        }
        let mut cur = self.input_dims(1);
        let mut seen_full = false;
        let mut dims = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let at = |e: Error| Error::Spec(format!("layer {i} ({}): {e}", l.kind().name()));
            cur = match *l {
                LayerSpec::Conv { kernel, maps, stride, .. } => {
                    if seen_full {
                        return Err(Error::Spec(format!("layer {i}: conv after a fully connected layer")));
                    }
                    if maps == 0 {
                        return Err(Error::Spec(format!("layer {i}: conv needs at least one map")));
                    }
                    let g = ConvGeometry::new(cur.height, cur.width, cur.channels, (kernel[0], kernel[1]), stride)
                        .map_err(at)?;
                    Dims::new(g.out_h(), g.out_w(), maps, 1)
                }
                LayerSpec::Pool { window, stride, mode, .. } => {
                    if seen_full {
                        return Err(Error::Spec(format!("layer {i}: pool after a fully connected layer")));
                    }
                    let g = crate::vectorize::PoolGeometry::new(
                        cur,
                        (window[0], window[1]),
                        stride.unwrap_or(window[0]),
                        mode,
                    )
                    .map_err(at)?;
                    g.output_dims()
                }
                LayerSpec::Full { units, .. } => {
                    if units == 0 {
                        return Err(Error::Spec(format!("layer {i}: full layer needs at least one unit")));
                    }
                    seen_full = true;
                    Dims::new(1, 1, units, 1)
                }
            };
            dims.push(cur);
        }
        Ok(dims)
    }

    /// Total number of trainable parameters.
    pub fn parameter_count(&self) -> Result<usize> {
        let dims = self.validate()?;
        let mut prev = self.input_dims(1);
        let mut total = 0;
        for (l, d) in self.layers.iter().zip(&dims) {
            total += match *l {
                LayerSpec::Conv { kernel, maps, .. } => maps * (kernel[0] * kernel[1] * prev.channels + 1),
                LayerSpec::Pool { bias, .. } => {
                    if bias {
                        prev.channels
                    } else {
                        0
                    }
                }
                LayerSpec::Full { units, .. } => units * (prev.sample_len() + 1),
            };
            prev = *d;
        }
        Ok(total)
    }
}

/// One instantiated layer.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv(ConvLayer<T>),
    Pool(PoolLayer<T>),
    Full(FullLayer<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::Pool(_) => LayerKind::Pool,
            Layer::Full(_) => LayerKind::Full,
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Layer::Conv(l) => l.activation,
            Layer::Pool(l) => l.activation,
            Layer::Full(l) => l.activation,
        }
    }

    /// `(weights, bias)`; empty slices when absent.
    pub fn params(&self) -> (&[T], &[T]) {
        match self {
            Layer::Conv(l) => (l.weights.data(), &l.bias),
            Layer::Pool(l) => (&[], l.bias.as_deref().unwrap_or(&[])),
            Layer::Full(l) => (l.weights.data(), &l.bias),
        }
    }

    pub fn params_mut(&mut self) -> (&mut [T], &mut [T]) {
        match self {
            Layer::Conv(l) => (l.weights.data_mut(), &mut l.bias),
            Layer::Pool(l) => (&mut [], l.bias.as_deref_mut().unwrap_or(&mut [])),
            Layer::Full(l) => (l.weights.data_mut(), &mut l.bias),
        }
    }

    pub fn zero_grads(&self) -> LayerGrads<T> {
        let (w, b) = self.params();
        LayerGrads::zeros_like(w.len(), b.len())
    }
}

/// Per-layer parameter gradients for a whole network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_for(net: &Network<T>) -> Self {
        Gradients {
            layers: net.layers.iter().map(Layer::zero_grads).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }

    /// All gradient values, layer by layer, weights before bias.
    pub fn flatten(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(&g.bias).copied())
            .collect()
    }
}

/// A network: architecture plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer<T>>,
    pub loss: LossHead,
}

impl<T: Scalar> Network<T> {
    /// Validates `spec` and initializes parameters from `spec.seed`.
    pub fn build(spec: &NetworkSpec) -> Result<Self> {
        let dims = spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut cur = spec.input_dims(1);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (l, out) in spec.layers.iter().zip(&dims) {
            layers.push(match *l {
                LayerSpec::Conv { kernel, maps, stride, activation } => {
                    let g = ConvGeometry::new(cur.height, cur.width, cur.channels, (kernel[0], kernel[1]), stride)?;
                    Layer::Conv(ConvLayer::init(g, maps, activation, &mut rng))
                }
                LayerSpec::Pool { window, stride, mode, bias, activation, backward } => {
                    let ps = PoolSpec {
                        window: (window[0], window[1]),
                        stride: stride.unwrap_or(window[0]),
                        mode,
                        backward,
                    };
                    let b = bias.then(|| vec![T::zero(); cur.channels]);
                    Layer::Pool(PoolLayer::new(ps, cur, b, activation)?)
                }
                LayerSpec::Full { units, activation } => {
                    Layer::Full(FullLayer::init(cur.sample_len(), units, activation, &mut rng))
                }
            });
            cur = *out;
        }
        Ok(Network {
            spec: spec.clone(),
            layers,
            loss: LossHead::new(spec.loss),
        })
    }

    pub fn input_dims(&self, batch: usize) -> Dims {
        self.spec.input_dims(batch)
    }

    pub fn output_dims(&self, batch: usize) -> Dims {
        match self.layers.last() {
            Some(Layer::Conv(l)) => l.output_dims(batch),
            Some(Layer::Pool(l)) => l.output_dims(batch),
            Some(Layer::Full(l)) => Dims::new(1, 1, l.units(), batch),
            None => self.input_dims(batch),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.params().0.len() + l.params().1.len()).sum()
    }

    /// Every parameter value, layer by layer, weights before bias.
    pub fn flat_params(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| {
                let (w, b) = l.params();
                w.iter().chain(b).copied().collect::<Vec<_>>()
            })
            .collect()
    }

    /// Mutable access to parameter `index` in [`Network::flat_params`] order.
    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut T> {
        for l in &mut self.layers {
            let (w, b) = l.params_mut();
            if index < w.len() {
                return Some(&mut w[index]);
            }
            index -= w.len();
            if index < b.len() {
                return Some(&mut b[index]);
            }
            index -= b.len();
        }
        None
    }
}

/// Stacks samples of identical shape into one batch tensor; their patch
/// matrices then sit side by side, sample by sample.
pub fn assemble_batch<T: Scalar>(samples: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Geometry("cannot assemble an empty batch".into()))?;
    let d = first.dims();
    let mut data = Vec::with_capacity(d.len() * samples.len());
    let mut batch = 0;
    for s in samples {
        let sd = s.dims();
        if sd.with_batch(1) != d.with_batch(1) {
            return Err(Error::shape("assemble_batch", s.shape(), first.shape()));
        }
        data.extend_from_slice(s.data());
        batch += sd.batch;
    }
    Tensor::from_dims(d.with_batch(batch), data)
}

/// Gathers batch items `indices` (in that order).
pub fn select_samples<T: Scalar>(t: &Tensor<T>, indices: &[usize]) -> Result<Tensor<T>> {
    let d = t.dims();
    let n = d.sample_len();
    let mut data = Vec::with_capacity(n * indices.len());
    for &i in indices {
        if i >= d.batch {
            return Err(Error::Bounds {
                what: "sample index",
                index: i,
                len: d.batch,
            });
        }
        data.extend_from_slice(&t.data()[i * n..(i + 1) * n]);
    }
    Tensor::from_dims(d.with_batch(indices.len()), data)
}

pub fn select_targets<T: Scalar>(targets: &Targets<T>, indices: &[usize]) -> Result<Targets<T>> {
    match targets {
        Targets::Classes(c) => indices
            .iter()
            .map(|&i| {
                c.get(i).copied().ok_or(Error::Bounds {
                    what: "target index",
                    index: i,
                    len: c.len(),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Targets::Classes),
        Targets::Values(t) => Ok(Targets::Values(select_samples(t, indices)?)),
    }
}

/// Batched forward pass keeping every activation (fully vectorized path).
pub fn forward<T: Scalar>(net: &Network<T>, batch: &Tensor<T>) -> Result<Trace<T>> {
    Executor::new(Variant::Imp6).forward_trace(net, batch)
}

/// Loss and batch-mean parameter gradients for a trace produced by [`forward`].
pub fn backward<T: Scalar>(
    net: &Network<T>,
    trace: &Trace<T>,
    targets: &Targets<T>,
) -> Result<(T, Gradients<T>)> {
    let exec = Executor::new(Variant::Imp6);
    let out = trace.output();
    let loss = net.loss.loss(out, targets)?;
    let grad = net.loss.gradient(out, targets)?;
    let (_, grads) = exec.backward_trace(net, trace, grad)?;
    Ok((loss, grads))
}

/// Plain SGD update `w <- w - lr * g`.
pub fn sgd_step<T: Scalar>(net: &mut Network<T>, grads: &Gradients<T>, learning_rate: f64) {
    let lr = T::from_f64(learning_rate);
    for (l, g) in net.layers.iter_mut().zip(&grads.layers) {
        let (w, b) = l.params_mut();
        for (p, &d) in w.iter_mut().zip(&g.weights) {
            *p = *p - lr * d;
        }
        for (p, &d) in b.iter_mut().zip(&g.bias) {
            *p = *p - lr * d;
        }
    }
}

/// SGD with classical momentum: `v <- μ v + g`, `w <- w - lr v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Gradients<T>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(net: &Network<T>, learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: Gradients::zeros_for(net),
        }
    }

    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>) {
        if self.momentum == 0.0 {
            sgd_step(net, grads, self.learning_rate);
            return;
        }
        let mu = T::from_f64(self.momentum);
        for (v, g) in self.velocity.layers.iter_mut().zip(&grads.layers) {
            for (a, &d) in v.weights.iter_mut().zip(&g.weights) {
                *a = mu * *a + d;
            }
            for (a, &d) in v.bias.iter_mut().zip(&g.bias) {
                *a = mu * *a + d;
            }
        }
        sgd_step(net, &self.velocity, self.learning_rate);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub precision: DType,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 50,
            epochs: 10,
            precision: DType::F32,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mini-batch trainer; shuffles with a seeded permutation each epoch.
pub struct Trainer<'e, T> {
    pub config: TrainConfig,
    executor: &'e Executor,
    sgd: Sgd<T>,
    epoch: usize,
}

impl<'e, T: Scalar> Trainer<'e, T> {
    pub fn new(net: &Network<T>, config: TrainConfig, executor: &'e Executor) -> Result<Self> {
        config.validate()?;
        let sgd = Sgd::new(net, config.learning_rate, config.momentum);
        Ok(Trainer {
            config,
            executor,
            sgd,
            epoch: 0,
        })
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    /// One pass over the data; returns the mean batch loss.
    pub fn train_epoch(&mut self, net: &mut Network<T>, images: &Tensor<T>, targets: &Targets<T>) -> Result<f64> {
        let n = images.dims().batch;
        if targets.len() != n {
            return Err(Error::shape("train targets", &[targets.len()], &[n]));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(self.epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (bi, idx) in order.chunks(self.config.batch_size).enumerate() {
            let x = select_samples(images, idx)?;
            let y = select_targets(targets, idx)?;
            let out = self.executor.run_batch(net, &x, Some(&y))?;
            let loss = out.loss.expect("targets given").as_f64();
            if !loss.is_finite() {
                let trace = self.executor.forward_trace(net, &x)?;
                let layer = trace.first_non_finite().unwrap_or(net.layers.len() - 1);
                return Err(Error::Diverged {
                    epoch: self.epoch,
                    batch: bi,
                    layer,
                    kind: net.layers[layer].kind().name(),
                });
            }
            self.sgd.step(net, out.gradients.as_ref().expect("targets given"));
            total += loss;
            batches += 1;
        }
        self.epoch += 1;
        Ok(total / batches.max(1) as f64)
    }
}

/// Runs `config.epochs` epochs; returns the mean loss of each.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    images: &Tensor<T>,
    targets: &Targets<T>,
    config: &TrainConfig,
    executor: &Executor,
) -> Result<Vec<f64>> {
    let mut trainer = Trainer::new(net, config.clone(), executor)?;
    (0..config.epochs)
        .map(|_| trainer.train_epoch(net, images, targets))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prediction<T> {
    Classes(Vec<usize>),
    Values(Tensor<T>),
}

/// Class indices for cross-entropy heads, raw outputs otherwise.
pub fn predict<T: Scalar>(net: &Network<T>, batch: &Tensor<T>, executor: &Executor) -> Result<Prediction<T>> {
    let out = executor.forward(net, batch)?;
    Ok(match net.loss.kind {
        LossKind::SoftmaxCrossEntropy => Prediction::Classes(argmax_per_sample(&out)),
        LossKind::MeanSquaredError => Prediction::Values(out),
    })
}

/// Fraction of samples whose predicted class matches `labels`, evaluated in chunks.
pub fn accuracy<T: Scalar>(
    net: &Network<T>,
    images: &Tensor<T>,
    labels: &[usize],
    executor: &Executor,
    chunk: usize,
) -> Result<f64> {
    let n = images.dims().batch;
    if labels.len() != n {
        return Err(Error::shape("accuracy labels", &[labels.len()], &[n]));
    }
    let mut correct = 0;
    let idx: Vec<usize> = (0..n).collect();
    for part in idx.chunks(chunk.max(1)) {
        let x = select_samples(images, part)?;
        let out = executor.forward(net, &x)?;
        correct += argmax_per_sample(&out)
            .iter()
            .zip(part)
            .filter(|&(&p, &i)| p == labels[i])
            .count();
    }
    Ok(correct as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            let spec = NetworkSpec::preset(name).unwrap();
            spec.validate().unwrap();
        }
        let s1 = NetworkSpec::preset("scale1-analog").unwrap().validate().unwrap();
        assert_eq!(s1[3], Dims::new(4, 4, 50, 1));
        assert!(NetworkSpec::preset("nope").is_err());
    }

    #[test]
    fn mini_presets_are_about_a_tenth_of_the_originals() {
        let p2 = NetworkSpec::preset("scale2-mini").unwrap().parameter_count().unwrap();
        let p3 = NetworkSpec::preset("scale3-mini").unwrap().parameter_count().unwrap();
        assert!((4_000_000..8_000_000).contains(&p2), "{p2}");
        assert!(p3 > p2 && p3 < 10_000_000, "{p3}");
    }

    #[test]
    fn validation_reports_bad_chains() {
        let mut spec = NetworkSpec::preset("scale1-analog").unwrap();
        spec.layers.insert(5, LayerSpec::conv(3, 4, Activation::Relu));
        assert!(spec.validate().is_err());
        let spec = NetworkSpec {
            input: [4, 4, 1],
            layers: vec![LayerSpec::conv(5, 2, Activation::Relu)],
            loss: LossKind::MeanSquaredError,
            seed: 0,
        };
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("layer 0"), "{err}");
    }

    #[test]
    fn parameter_count_matches_built_network() {
        for name in ["scale1-analog", "denoise"] {
            let spec = NetworkSpec::preset(name).unwrap();
            let net = Network::<f32>::build(&spec).unwrap();
            assert_eq!(net.parameter_count(), spec.parameter_count().unwrap());
        }
    }

    #[test]
    fn build_is_seeded() {
        let spec = NetworkSpec::preset("scale1-analog").unwrap();
        let a = Network::<f64>::build(&spec).unwrap();
        let b = Network::<f64>::build(&spec).unwrap();
        assert_eq!(a, b);
        let c = Network::<f64>::build(&NetworkSpec { seed: 2, ..spec }).unwrap();
        assert_ne!(a.flat_params(), c.flat_params());
    }

    #[test]
    fn sgd_single_parameter() {
        let spec = NetworkSpec {
            input: [1, 1, 1],
            layers: vec![LayerSpec::full(1, Activation::Identity)],
            loss: LossKind::MeanSquaredError,
            seed: 0,
        };
        let mut net = Network::<f64>::build(&spec).unwrap();
        if let Layer::Full(l) = &mut net.layers[0] {
            l.weights = Matrix::new(1, 1, vec![1.0]).unwrap();
        }
        let grads = Gradients {
            layers: vec![LayerGrads {
                weights: vec![2.0],
                bias: vec![0.0],
            }],
        };
        let mut sgd = Sgd::new(&net, 0.1, 0.0);
        sgd.step(&mut net, &grads);
        assert!((net.flat_params()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates() {
        let spec = NetworkSpec {
            input: [1, 1, 1],
            layers: vec![LayerSpec::full(1, Activation::Identity)],
            loss: LossKind::MeanSquaredError,
            seed: 0,
        };
        let mut net = Network::<f64>::build(&spec).unwrap();
        let w0 = net.flat_params()[0];
        let grads = Gradients {
            layers: vec![LayerGrads {
                weights: vec![1.0],
                bias: vec![0.0],
            }],
        };
        let mut sgd = Sgd::new(&net, 0.1, 0.5);
        sgd.step(&mut net, &grads);
        sgd.step(&mut net, &grads);
        // v1 = 1, v2 = 1.5
        assert!((net.flat_params()[0] - (w0 - 0.25)).abs() < 1e-12);
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { momentum: 1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn assemble_rejects_mixed_shapes() {
        let a = Tensor::<f64>::zeros(Dims::new(3, 3, 1, 1));
        let b = Tensor::<f64>::zeros(Dims::new(3, 2, 1, 1));
        assert!(assemble_batch(&[a.clone(), b]).is_err());
        assert!(assemble_batch::<f64>(&[]).is_err());
        assert_eq!(assemble_batch(&[a.clone()]).unwrap(), a);
    }

    #[test]
    fn spec_json_rejects_unknown_keys() {
        let ok = r#"{"input":[4,4,1],"layers":[{"type":"conv","kernel":[3,3],"maps":2,"activation":"relu"}],"loss":"mean-squared-error"}"#;
        serde_json::from_str::<NetworkSpec>(ok).unwrap();
        let bad = r#"{"input":[4,4,1],"layers":[{"type":"conv","kernel":[3,3],"maps":2,"colour":1}],"loss":"mean-squared-error"}"#;
        assert!(serde_json::from_str::<NetworkSpec>(bad).is_err());
    }
}
