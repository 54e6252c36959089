//! The six-step vectorization ladder behind one execution interface.
//!
//! | variant | FC | conv | pool | feature-map patchification | batch |
//! |---------|----|------|------|----------------------------|-------|
//! | Imp-1   | x  |      |      |                            |       |
//! | Imp-2   | x  |      |      |                            | x (parallel per-sample loop) |
//! | Imp-3   | x  | x    |      |                            |       |
//! | Imp-4   | x  | x    | x    |                            |       |
//! | Imp-5   | x  | x    | x    | x                          |       |
//! | Imp-6   | x  | x    | x    | x                          | x     |
//!
//! Without conv vectorization, convolution runs as nested scalar loops.
//! Conv without feature-map patchification unrolls every input channel on
//! its own and combines the per-channel patch matrices; with it, the whole
//! multichannel input is unrolled at once. Without pool vectorization,
//! pooling scans each window with scalar loops; with it, a precomputed index
//! map drives one accumulation over every channel. Without batch
//! vectorization samples run one at a time (Imp-2 maps them concurrently);
//! with it, the whole batch goes through each layer as one patch matrix.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{conv_rows_to_tensor, conv_tensor_to_rows, ConvLayer, LayerGrads, PoolLayer, Targets};
use crate::network::{assemble_batch, Gradients, Layer, Network};
use crate::tensor::{matmul, matmul_nt, matmul_tn, IndexMap, Matrix, Scalar, Tensor};
use crate::vectorize::{
    col2im_map, col2im_with_map, im2col_with, pool_backward_with, pool_forward_with, ArgIndex,
    ConvGeometry, PatchGeometry, PatchMatrix, PoolBackward, PoolGeometry, PoolMaps, PoolMode,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Imp1,
    Imp2,
    Imp3,
    Imp4,
    Imp5,
    Imp6,
}

/// Which elements a variant vectorizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Features {
    pub fc: bool,
    pub conv: bool,
    pub pool: bool,
    pub featmap: bool,
    pub batch: bool,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Imp1,
        Variant::Imp2,
        Variant::Imp3,
        Variant::Imp4,
        Variant::Imp5,
        Variant::Imp6,
    ];

    pub fn features(self) -> Features {
        let f = |conv, pool, featmap, batch| Features {
            fc: true,
            conv,
            pool,
            featmap,
            batch,
        };
        match self {
            Variant::Imp1 => f(false, false, false, false),
            Variant::Imp2 => f(false, false, false, true),
            Variant::Imp3 => f(true, false, false, false),
            Variant::Imp4 => f(true, true, false, false),
            Variant::Imp5 => f(true, true, true, false),
            Variant::Imp6 => f(true, true, true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Imp1 => "imp1",
            Variant::Imp2 => "imp2",
            Variant::Imp3 => "imp3",
            Variant::Imp4 => "imp4",
            Variant::Imp5 => "imp5",
            Variant::Imp6 => "imp6",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s) || format!("imp-{}", &v.name()[3..]) == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected imp1..imp6)")))
    }
}

/// The eight timed components: {conv, pool, full, other} x {forward, backward}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Component {
    ConvF,
    ConvB,
    PoolF,
    PoolB,
    FullF,
    FullB,
    OtherF,
    OtherB,
}

impl Component {
    pub const ALL: [Component; 8] = [
        Component::ConvF,
        Component::ConvB,
        Component::PoolF,
        Component::PoolB,
        Component::FullF,
        Component::FullB,
        Component::OtherF,
        Component::OtherB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::ConvF => "conv_f",
            Component::ConvB => "conv_b",
            Component::PoolF => "pool_f",
            Component::PoolB => "pool_b",
            Component::FullF => "full_f",
            Component::FullB => "full_b",
            Component::OtherF => "other_f",
            Component::OtherB => "other_b",
        }
    }
}

/// Accumulated wall time per component. Safe to share across threads.
#[derive(Debug, Default)]
pub struct Profiler {
    nanos: [AtomicU64; 8],
}

impl Profiler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, c: Component, d: Duration) {
        self.nanos[c as usize].fetch_add(d.as_nanos() as u64, Ordering::Relaxed);
    }

    pub fn reset(&self) {
        for n in &self.nanos {
            n.store(0, Ordering::Relaxed);
        }
    }

    /// Seconds per component in [`Component::ALL`] order.
    pub fn snapshot(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (o, n) in out.iter_mut().zip(&self.nanos) {
            *o = n.load(Ordering::Relaxed) as f64 * 1e-9;
        }
        out
    }
}

/// Per-layer state kept from the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub enum LayerCache<T> {
    /// Unrolled input of a vectorized conv layer.
    Patches(PatchMatrix<T>),
    /// One single-channel patch matrix per input channel.
    ChannelPatches(Vec<PatchMatrix<T>>),
    /// Max-pool winners of a vectorized pool layer.
    ArgMax(ArgIndex),
    /// Loop kernels and FC layers re-read the layer input.
    Input,
}

/// Activations of one forward pass: `activations[0]` is the input,
/// `activations[i + 1]` the output of layer `i`.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    pub activations: Vec<Tensor<T>>,
    pub caches: Vec<LayerCache<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.activations.last().expect("trace holds the input")
    }

    /// Index of the first layer whose output holds a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.activations[1..].iter().position(|a| !a.is_finite())
    }
}

/// Result of [`Executor::run_batch`].
#[derive(Clone, Debug)]
pub struct BatchOutput<T> {
    pub output: Tensor<T>,
    pub loss: Option<T>,
    pub gradients: Option<Gradients<T>>,
}

#[derive(Default)]
struct MapCache {
    col2im: HashMap<PatchGeometry, Arc<IndexMap>>,
    pool: HashMap<PoolGeometry, Arc<PoolMaps>>,
}

/// Runs networks with the kernels of one ladder variant.
///
/// Index maps are built on first use per geometry and reused afterwards.
pub struct Executor {
    variant: Variant,
    features: Features,
    maps: Mutex<MapCache>,
    profiler: Option<Arc<Profiler>>,
}

impl Executor {
    pub fn new(variant: Variant) -> Self {
        Executor {
            variant,
            features: variant.features(),
            maps: Mutex::new(MapCache::default()),
            profiler: None,
        }
    }

    pub fn with_profiler(mut self, profiler: Arc<Profiler>) -> Self {
        self.profiler = Some(profiler);
        self
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn features(&self) -> Features {
        self.features
    }

    #[inline]
    fn timed<R>(&self, c: Component, f: impl FnOnce() -> R) -> R {
        match &self.profiler {
            None => f(),
            Some(p) => {
                let start = Instant::now();
                let r = f();
                p.record(c, start.elapsed());
                r
            }
        }
    }

    fn col2im_map(&self, geom: PatchGeometry) -> Arc<IndexMap> {
        let mut cache = self.maps.lock().expect("map cache poisoned");
        cache
            .col2im
            .entry(geom)
            .or_insert_with(|| Arc::new(col2im_map(&geom)))
            .clone()
    }

    fn pool_maps(&self, geom: PoolGeometry) -> Arc<PoolMaps> {
        let mut cache = self.maps.lock().expect("map cache poisoned");
        cache
            .pool
            .entry(geom)
            .or_insert_with(|| Arc::new(PoolMaps::new(&geom)))
            .clone()
    }

    /// Forward through every layer with the batch taken as given.
    pub fn forward_trace<T: Scalar>(&self, net: &Network<T>, batch: &Tensor<T>) -> Result<Trace<T>> {
        let d = batch.dims();
        if d.with_batch(1) != net.input_dims(1) {
            return Err(Error::shape("network input", batch.shape(), &net.input_dims(d.batch).to_shape()));
        }
        let mut activations = Vec::with_capacity(net.layers.len() + 1);
        let mut caches = Vec::with_capacity(net.layers.len());
        activations.push(batch.clone());
        for layer in &net.layers {
            let input = activations.last().expect("non-empty");
            let (out, cache) = self.layer_forward(layer, input)?;
            activations.push(out);
            caches.push(cache);
        }
        Ok(Trace { activations, caches })
    }

    /// Backpropagates `grad_output` (gradient of the loss with respect to the
    /// network output) through `trace`. Returns the input gradient and the
    /// parameter gradients.
    pub fn backward_trace<T: Scalar>(
        &self,
        net: &Network<T>,
        trace: &Trace<T>,
        grad_output: Tensor<T>,
    ) -> Result<(Tensor<T>, Gradients<T>)> {
        let (gi, grads) = self.backward_inner(net, trace, grad_output, true)?;
        Ok((gi.expect("input gradient requested"), grads))
    }

    fn backward_inner<T: Scalar>(
        &self,
        net: &Network<T>,
        trace: &Trace<T>,
        grad_output: Tensor<T>,
        input_grad: bool,
    ) -> Result<(Option<Tensor<T>>, Gradients<T>)> {
        if trace.caches.len() != net.layers.len() {
            return Err(Error::Geometry("trace was recorded for another network".into()));
        }
        let mut grad = Some(grad_output);
        let mut layers = vec![LayerGrads::default(); net.layers.len()];
        for i in (0..net.layers.len()).rev() {
            let g = grad.take().expect("set by the layer above");
            let (gi, lg) = self.layer_backward(
                &net.layers[i],
                &trace.activations[i],
                &trace.activations[i + 1],
                &trace.caches[i],
                &g,
                i > 0 || input_grad,
            )?;
            layers[i] = lg;
            grad = gi;
        }
        Ok((grad, Gradients { layers }))
    }

    fn layer_forward<T: Scalar>(&self, layer: &Layer<T>, input: &Tensor<T>) -> Result<(Tensor<T>, LayerCache<T>)> {
        let (mut out, cache) = match layer {
            Layer::Conv(l) => self.timed(Component::ConvF, || -> Result<_> {
                if !self.features.conv {
                    return Ok((loops::conv_forward_pre(l, input)?, LayerCache::Input));
                }
                if !self.features.featmap {
                    let parts = per_channel::patchify(input, l.geometry)?;
                    return Ok((per_channel::conv_forward_pre(l, &parts)?, LayerCache::ChannelPatches(parts)));
                }
                let patches = im2col_with(input, l.geometry)?;
                Ok((l.forward_pre(&patches)?, LayerCache::Patches(patches)))
            })?,
            Layer::Pool(l) => self.timed(Component::PoolF, || -> Result<_> {
                if !self.features.pool {
                    return Ok((loops::pool_forward_pre(l, input)?, LayerCache::Input));
                }
                let geom = l.geometry(input.dims().batch);
                let maps = self.pool_maps(geom);
                let (mut out, arg) = pool_forward_with(input, &geom, &maps)?;
                l.add_bias(&mut out);
                Ok((out, LayerCache::ArgMax(arg)))
            })?,
            Layer::Full(l) => (
                self.timed(Component::FullF, || l.forward_pre(input))?,
                LayerCache::Input,
            ),
        };
        self.timed(Component::OtherF, || layer.activation().forward_in_place(&mut out));
        Ok((out, cache))
    }

    fn layer_backward<T: Scalar>(
        &self,
        layer: &Layer<T>,
        input: &Tensor<T>,
        output: &Tensor<T>,
        cache: &LayerCache<T>,
        grad_out: &Tensor<T>,
        need_input: bool,
    ) -> Result<(Option<Tensor<T>>, LayerGrads<T>)> {
        let grad_pre = self.timed(Component::OtherB, || layer.activation().backward(grad_out, output))?;
        let grads = |w: Matrix<T>, b: Vec<T>| LayerGrads { weights: w.into_data(), bias: b };
        match (layer, cache) {
            (Layer::Conv(l), LayerCache::Input) => self.timed(Component::ConvB, || {
                let (gi, gw, gb) = loops::conv_backward_pre(l, input, &grad_pre, need_input)?;
                Ok((gi, grads(gw, gb)))
            }),
            (Layer::Conv(l), LayerCache::ChannelPatches(parts)) => self.timed(Component::ConvB, || {
                let (gi, gw, gb) =
                    per_channel::conv_backward_pre(l, parts, &grad_pre, need_input, |g| self.col2im_map(g))?;
                Ok((gi, grads(gw, gb)))
            }),
            (Layer::Conv(l), LayerCache::Patches(p)) => self.timed(Component::ConvB, || {
                let expect = l.output_dims(p.geometry.batch);
                if grad_pre.dims() != expect {
                    return Err(Error::shape("conv backward", grad_pre.shape(), &expect.to_shape()));
                }
                let g = conv_tensor_to_rows(&grad_pre);
                let gw = matmul_nt(&g, &p.mat)?;
                let gb = row_sums(&g);
                let gi = if need_input {
                    let gp = matmul_tn(&l.weights, &g)?;
                    Some(col2im_with_map(&gp, &p.geometry, &self.col2im_map(p.geometry))?)
                } else {
                    None
                };
                Ok((gi, grads(gw, gb)))
            }),
            (Layer::Pool(l), LayerCache::Input) => self.timed(Component::PoolB, || {
                let gi = need_input.then(|| loops::pool_backward_pre(l, input, &grad_pre)).transpose()?;
                Ok((gi, LayerGrads { weights: Vec::new(), bias: l.bias_grad(&grad_pre) }))
            }),
            (Layer::Pool(l), LayerCache::ArgMax(arg)) => self.timed(Component::PoolB, || {
                let gi = if need_input {
                    let geom = l.geometry(grad_pre.dims().batch);
                    let maps = self.pool_maps(geom);
                    Some(pool_backward_with(&grad_pre, &geom, arg, l.spec.backward, &maps)?)
                } else {
                    None
                };
                Ok((gi, LayerGrads { weights: Vec::new(), bias: l.bias_grad(&grad_pre) }))
            }),
            (Layer::Full(l), LayerCache::Input) => self.timed(Component::FullB, || {
                let g = l.backward_pre(&grad_pre, input)?;
                Ok((need_input.then_some(g.input), grads(g.weights, g.bias)))
            }),
            _ => Err(Error::Geometry("layer cache does not match layer kind".into())),
        }
    }

    /// Forward only.
    pub fn forward<T: Scalar>(&self, net: &Network<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run_batch(net, batch, None)?.output)
    }

    /// Runs one batch: outputs, and with `targets` also the batch-mean loss
    /// and parameter gradients.
    pub fn run_batch<T: Scalar>(
        &self,
        net: &Network<T>,
        batch: &Tensor<T>,
        targets: Option<&Targets<T>>,
    ) -> Result<BatchOutput<T>> {
        let n = batch.dims().batch;
        if let Some(t) = targets {
            if t.len() != n {
                return Err(Error::shape("batch targets", &[t.len()], &[n]));
            }
        }
        if self.features.batch && self.variant != Variant::Imp2 {
            return self.run_whole(net, batch, targets);
        }
        let one = |b: usize| -> Result<SampleResult<T>> {
            let x = self.timed(Component::OtherF, || batch.sample(b))?;
            let t = targets.map(|t| t.sample(b)).transpose()?;
            self.run_sample(net, &x, t.as_ref(), n)
        };
        let results: Vec<SampleResult<T>> = if self.variant == Variant::Imp2 {
            (0..n).into_par_iter().map(one).collect::<Result<_>>()?
        } else {
            (0..n).map(one).collect::<Result<_>>()?
        };
        let output = self.timed(Component::OtherF, || {
            assemble_batch(&results.iter().map(|r| r.output.clone()).collect::<Vec<_>>())
        })?;
        if targets.is_none() {
            return Ok(BatchOutput {
                output,
                loss: None,
                gradients: None,
            });
        }
        let (loss, gradients) = self.timed(Component::OtherB, || {
            let mut grads = Gradients::zeros_for(net);
            let mut loss = T::zero();
            for r in &results {
                loss = loss + r.loss.expect("targets given");
                grads.add_assign(r.gradients.as_ref().expect("targets given"));
            }
            (loss, grads)
        });
        Ok(BatchOutput {
            output,
            loss: Some(loss),
            gradients: Some(gradients),
        })
    }

    fn run_whole<T: Scalar>(
        &self,
        net: &Network<T>,
        batch: &Tensor<T>,
        targets: Option<&Targets<T>>,
    ) -> Result<BatchOutput<T>> {
        let trace = self.forward_trace(net, batch)?;
        let Some(targets) = targets else {
            return Ok(BatchOutput {
                output: trace.output().clone(),
                loss: None,
                gradients: None,
            });
        };
        let loss = self.timed(Component::OtherF, || net.loss.loss(trace.output(), targets))?;
        let grad = self.timed(Component::OtherB, || net.loss.gradient(trace.output(), targets))?;
        let (_, gradients) = self.backward_inner(net, &trace, grad, false)?;
        Ok(BatchOutput {
            output: trace.output().clone(),
            loss: Some(loss),
            gradients: Some(gradients),
        })
    }

    /// One sample of a batch of `batch_len`; loss and gradients carry the
    /// `1 / batch_len` batch-mean factor.
    fn run_sample<T: Scalar>(
        &self,
        net: &Network<T>,
        x: &Tensor<T>,
        target: Option<&Targets<T>>,
        batch_len: usize,
    ) -> Result<SampleResult<T>> {
        let trace = self.forward_trace(net, x)?;
        let Some(target) = target else {
            return Ok(SampleResult {
                output: trace.output().clone(),
                loss: None,
                gradients: None,
            });
        };
        let scale = T::one() / T::from_f64(batch_len as f64);
        let loss = self.timed(Component::OtherF, || net.loss.loss(trace.output(), target))? * scale;
        let grad = self.timed(Component::OtherB, || {
            net.loss.gradient(trace.output(), target).map(|g| g.map(|v| v * scale))
        })?;
        let (_, gradients) = self.backward_inner(net, &trace, grad, false)?;
        Ok(SampleResult {
            output: trace.output().clone(),
            loss: Some(loss),
            gradients: Some(gradients),
        })
    }
}

struct SampleResult<T> {
    output: Tensor<T>,
    loss: Option<T>,
    gradients: Option<Gradients<T>>,
}

fn row_sums<T: Scalar>(g: &Matrix<T>) -> Vec<T> {
    (0..g.rows()).map(|r| g.row(r).iter().fold(T::zero(), |a, &v| a + v)).collect()
}

/// Builds the multichannel patch matrix one channel at a time: unroll each
/// channel plane separately, then stack the per-channel blocks.
pub fn featmap_patchify_per_channel<T: Scalar>(f: &Tensor<T>, geom: ConvGeometry) -> Result<PatchMatrix<T>> {
    let parts = per_channel::patchify(f, geom)?;
    let full = geom.batched(f.dims().batch);
    let mut data = Vec::with_capacity(full.rows() * full.cols());
    for p in &parts {
        data.extend_from_slice(p.mat.data());
    }
    PatchMatrix::new(Matrix::new(full.rows(), full.cols(), data)?, full)
}

/// Convolution assembled from single-channel patch matrices: each channel
/// is unrolled on its own, multiplied by its slice of the kernels, and the
/// per-channel products are summed.
pub mod per_channel {
    use super::*;

    /// One single-channel patch matrix per input channel.
    pub fn patchify<T: Scalar>(f: &Tensor<T>, geom: ConvGeometry) -> Result<Vec<PatchMatrix<T>>> {
        let d = f.dims();
        if d.with_batch(1) != geom.input_dims(1) {
            return Err(Error::shape("per-channel patchify", f.shape(), &geom.input_dims(d.batch).to_shape()));
        }
        let single = geom.single_channel();
        let plane = d.plane();
        (0..geom.channels)
            .map(|c| {
                let mut channel = Vec::with_capacity(plane * d.batch);
                for b in 0..d.batch {
                    let src = d.index(0, 0, c, b);
                    channel.extend_from_slice(&f.data()[src..src + plane]);
                }
                im2col_with(&Tensor::from_dims(single.input_dims(d.batch), channel)?, single)
            })
            .collect()
    }

    /// Columns `c * kh * kw ..` of the kernel matrix: every kernel's slice on channel `c`.
    fn kernel_slice<T: Scalar>(w: &Matrix<T>, c: usize, len: usize) -> Matrix<T> {
        let mut data = Vec::with_capacity(w.rows() * len);
        for r in 0..w.rows() {
            data.extend_from_slice(&w.row(r)[c * len..(c + 1) * len]);
        }
        Matrix::new(w.rows(), len, data).expect("slice shape")
    }

    fn check<T: Scalar>(l: &ConvLayer<T>, parts: &[PatchMatrix<T>]) -> Result<usize> {
        let single = l.geometry.single_channel();
        if parts.len() != l.geometry.channels || parts.iter().any(|p| p.geometry.conv != single) {
            return Err(Error::Geometry("per-channel patches built for another layer".into()));
        }
        let batch = parts[0].geometry.batch;
        if parts.iter().any(|p| p.geometry.batch != batch) {
            return Err(Error::Geometry("per-channel patches disagree on batch size".into()));
        }
        Ok(batch)
    }

    pub fn conv_forward_pre<T: Scalar>(l: &ConvLayer<T>, parts: &[PatchMatrix<T>]) -> Result<Tensor<T>> {
        let batch = check(l, parts)?;
        let kk = l.geometry.kernel_h * l.geometry.kernel_w;
        let mut y = Matrix::zeros(l.maps(), parts[0].mat.cols());
        for (c, p) in parts.iter().enumerate() {
            let yc = matmul(&kernel_slice(&l.weights, c, kk), &p.mat)?;
            for (a, &b) in y.data_mut().iter_mut().zip(yc.data()) {
                *a = *a + b;
            }
        }
        Ok(conv_rows_to_tensor(&y, &l.bias, l.output_dims(batch)))
    }

    /// `(∂f, ∂W, ∂b)`; the input gradient folds each channel's patch
    /// gradient with the single-channel col2im map from `map_for`.
    pub fn conv_backward_pre<T: Scalar>(
        l: &ConvLayer<T>,
        parts: &[PatchMatrix<T>],
        grad_pre: &Tensor<T>,
        need_input: bool,
        map_for: impl Fn(PatchGeometry) -> Arc<IndexMap>,
    ) -> Result<(Option<Tensor<T>>, Matrix<T>, Vec<T>)> {
        let batch = check(l, parts)?;
        let expect = l.output_dims(batch);
        if grad_pre.dims() != expect {
            return Err(Error::shape("conv backward", grad_pre.shape(), &expect.to_shape()));
        }
        let g = conv_tensor_to_rows(grad_pre);
        let kk = l.geometry.kernel_h * l.geometry.kernel_w;
        let len = l.geometry.patch_len();
        let mut gw = Matrix::zeros(l.maps(), len);
        let d = l.geometry.input_dims(batch);
        let plane = d.plane();
        let mut gi = need_input.then(|| vec![T::zero(); d.len()]);
        for (c, p) in parts.iter().enumerate() {
            let gwc = matmul_nt(&g, &p.mat)?;
            for r in 0..l.maps() {
                gw.data_mut()[r * len + c * kk..r * len + (c + 1) * kk].copy_from_slice(gwc.row(r));
            }
            if let Some(gi) = gi.as_mut() {
                let gp = matmul_tn(&kernel_slice(&l.weights, c, kk), &g)?;
                let folded = col2im_with_map(&gp, &p.geometry, &map_for(p.geometry))?;
                for b in 0..batch {
                    let dst = d.index(0, 0, c, b);
                    gi[dst..dst + plane].copy_from_slice(&folded.data()[b * plane..(b + 1) * plane]);
                }
            }
        }
        let gi = gi.map(|v| Tensor::from_dims(d, v)).transpose()?;
        Ok((gi, gw, row_sums(&g)))
    }
}

/// Scalar nested-loop kernels, one element at a time through the bounds
/// checked accessors. Same contracts as the vectorized kernels.
pub mod loops {
    use super::*;

    /// `W * f + b` by direct sliding-window loops.
    pub fn conv_forward_pre<T: Scalar>(l: &ConvLayer<T>, f: &Tensor<T>) -> Result<Tensor<T>> {
        let g = l.geometry;
        let d = f.dims();
        if d.with_batch(1) != g.input_dims(1) {
            return Err(Error::shape("conv loop forward", f.shape(), &g.input_dims(d.batch).to_shape()));
        }
        let od = l.output_dims(d.batch);
        let mut out = Tensor::zeros(od);
        for b in 0..d.batch {
            for k in 0..l.maps() {
                for y in 0..od.height {
                    for x in 0..od.width {
                        let mut acc = T::zero();
                        for c in 0..g.channels {
                            for i in 0..g.kernel_h {
                                for j in 0..g.kernel_w {
                                    let w = l.weights.get(k, (c * g.kernel_h + i) * g.kernel_w + j);
                                    acc = acc + w * f.at(y * g.stride + i, x * g.stride + j, c, b);
                                }
                            }
                        }
                        let idx = od.index(y, x, k, b);
                        out.data_mut()[idx] = acc + l.bias[k];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Gradients from the pre-activation gradient: `(∂f, ∂W, ∂b)`.
    pub fn conv_backward_pre<T: Scalar>(
        l: &ConvLayer<T>,
        f: &Tensor<T>,
        grad_pre: &Tensor<T>,
        need_input: bool,
    ) -> Result<(Option<Tensor<T>>, Matrix<T>, Vec<T>)> {
        let g = l.geometry;
        let d = f.dims();
        let od = l.output_dims(d.batch);
        if grad_pre.dims() != od {
            return Err(Error::shape("conv loop backward", grad_pre.shape(), &od.to_shape()));
        }
        let mut gi = Tensor::zeros(d);
        let mut gw = Matrix::zeros(l.maps(), g.patch_len());
        let mut gb = vec![T::zero(); l.maps()];
        for k in 0..l.maps() {
            for b in 0..d.batch {
                for y in 0..od.height {
                    for x in 0..od.width {
                        let go = grad_pre.at(y, x, k, b);
                        gb[k] = gb[k] + go;
                        for c in 0..g.channels {
                            for i in 0..g.kernel_h {
                                for j in 0..g.kernel_w {
                                    let r = (c * g.kernel_h + i) * g.kernel_w + j;
                                    let (fy, fx) = (y * g.stride + i, x * g.stride + j);
                                    let wi = k * g.patch_len() + r;
                                    gw.data_mut()[wi] = gw.data()[wi] + go * f.at(fy, fx, c, b);
                                    if need_input {
                                        let ii = d.index(fy, fx, c, b);
                                        gi.data_mut()[ii] = gi.data()[ii] + go * l.weights.get(k, r);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok((need_input.then_some(gi), gw, gb))
    }

    /// Window-by-window pooling plus bias (no activation).
    pub fn pool_forward_pre<T: Scalar>(l: &PoolLayer<T>, f: &Tensor<T>) -> Result<Tensor<T>> {
        let geom = l.geometry(f.dims().batch);
        if f.dims() != geom.input_dims() {
            return Err(Error::shape("pool loop forward", f.shape(), &geom.input_dims().to_shape()));
        }
        let od = geom.output_dims();
        let mut out = Tensor::zeros(od);
        let s = geom.stride;
        let inv = T::one() / T::from_f64(geom.window_len() as f64);
        for b in 0..od.batch {
            for c in 0..od.channels {
                for y in 0..od.height {
                    for x in 0..od.width {
                        let mut acc = match geom.mode {
                            PoolMode::Max => T::neg_infinity(),
                            PoolMode::Avg => T::zero(),
                        };
                        for i in 0..geom.window_h {
                            for j in 0..geom.window_w {
                                let v = f.at(y * s + i, x * s + j, c, b);
                                acc = match geom.mode {
                                    PoolMode::Max => {
                                        if v > acc {
                                            v
                                        } else {
                                            acc
                                        }
                                    }
                                    PoolMode::Avg => acc + v,
                                };
                            }
                        }
                        if geom.mode == PoolMode::Avg {
                            acc = acc * inv;
                        }
                        if let Some(bias) = &l.bias {
                            acc = acc + bias[c];
                        }
                        let idx = od.index(y, x, c, b);
                        out.data_mut()[idx] = acc;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Routes the pre-activation gradient back through each window; max
    /// pooling re-scans the window for its (first) maximum.
    pub fn pool_backward_pre<T: Scalar>(l: &PoolLayer<T>, f: &Tensor<T>, grad_pre: &Tensor<T>) -> Result<Tensor<T>> {
        let geom = l.geometry(f.dims().batch);
        let od = geom.output_dims();
        if grad_pre.dims() != od {
            return Err(Error::shape("pool loop backward", grad_pre.shape(), &od.to_shape()));
        }
        let d = geom.input_dims();
        let mut gi = Tensor::zeros(d);
        let s = geom.stride;
        let share = T::one() / T::from_f64(geom.window_len() as f64);
        for b in 0..od.batch {
            for c in 0..od.channels {
                for y in 0..od.height {
                    for x in 0..od.width {
                        let go = grad_pre.at(y, x, c, b);
                        match (l.spec.backward, geom.mode) {
                            (PoolBackward::Exact, PoolMode::Max) => {
                                let (mut bi, mut bj) = (0, 0);
                                let mut best = f.at(y * s, x * s, c, b);
                                for i in 0..geom.window_h {
                                    for j in 0..geom.window_w {
                                        let v = f.at(y * s + i, x * s + j, c, b);
                                        if v > best {
                                            best = v;
                                            bi = i;
                                            bj = j;
                                        }
                                    }
                                }
                                let ii = d.index(y * s + bi, x * s + bj, c, b);
                                gi.data_mut()[ii] = gi.data()[ii] + go;
                            }
                            (mode, pool) => {
                                let v = if mode == PoolBackward::Exact && pool == PoolMode::Avg {
                                    go * share
                                } else {
                                    go
                                };
                                for i in 0..geom.window_h {
                                    for j in 0..geom.window_w {
                                        let ii = d.index(y * s + i, x * s + j, c, b);
                                        gi.data_mut()[ii] = gi.data()[ii] + v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(gi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;
    use crate::vectorize::im2col;

    #[test]
    fn feature_table() {
        let rows: Vec<[bool; 5]> = Variant::ALL
            .iter()
            .map(|v| {
                let f = v.features();
                [f.fc, f.conv, f.pool, f.featmap, f.batch]
            })
            .collect();
        assert_eq!(
            rows,
            vec![
                [true, false, false, false, false],
                [true, false, false, false, true],
                [true, true, false, false, false],
                [true, true, true, false, false],
                [true, true, true, true, false],
                [true, true, true, true, true],
            ]
        );
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("Imp-3".parse::<Variant>().unwrap(), Variant::Imp3);
        assert!("imp7".parse::<Variant>().is_err());
    }

    #[test]
    fn per_channel_patchify_shape_and_single_channel() {
        let f = Tensor::<f64>::from_fn(Dims::new(3, 3, 3, 1), |i| i as f64);
        let g = ConvGeometry::new(3, 3, 3, (2, 2), 1).unwrap();
        let p = featmap_patchify_per_channel(&f, g).unwrap();
        assert_eq!(p.mat.shape(), [12, 4]);
        let f1 = Tensor::<f64>::from_fn(Dims::new(4, 4, 1, 2), |i| i as f64);
        let g1 = ConvGeometry::new(4, 4, 1, (2, 2), 1).unwrap();
        assert_eq!(featmap_patchify_per_channel(&f1, g1).unwrap(), im2col(&f1, (2, 2), 1).unwrap());
    }

    #[test]
    fn loop_conv_averaging_and_identity() {
        let g = ConvGeometry::new(2, 2, 1, (2, 2), 1).unwrap();
        let l = ConvLayer::new(Matrix::new(1, 4, vec![0.25; 4]).unwrap(), vec![0.0], g, crate::layers::Activation::Identity).unwrap();
        let f = Tensor::from_dims(Dims::new(2, 2, 1, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(loops::conv_forward_pre(&l, &f).unwrap().data(), &[2.5]);

        let g = ConvGeometry::new(2, 2, 1, (1, 1), 1).unwrap();
        let l = ConvLayer::new(Matrix::new(1, 1, vec![1.0]).unwrap(), vec![0.0], g, crate::layers::Activation::Identity).unwrap();
        assert_eq!(loops::conv_forward_pre(&l, &f).unwrap(), f);
    }

    #[test]
    fn profiler_accumulates() {
        let p = Profiler::new();
        p.record(Component::FullB, Duration::from_millis(3));
        p.record(Component::FullB, Duration::from_millis(2));
        let s = p.snapshot();
        assert!((s[Component::FullB as usize] - 0.005).abs() < 1e-12);
        p.reset();
        assert_eq!(p.snapshot(), [0.0; 8]);
    }
}
