//! Convolution, pooling and fully connected layers with hand-written
//! backward passes, plus activations and loss heads.
//!
//! Every layer computes `σ(linear(x) + b)`. The `*_pre` methods expose the
//! affine part on its own so that executors can time and swap kernels
//! independently of the nonlinearity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matmul_nt, matmul_tn, Dims, Matrix, Scalar, Tensor};
use crate::vectorize::{
    col2im, im2col_with, pool_backward, pool_forward, ArgIndex, ConvGeometry, PatchMatrix,
    PoolBackward, PoolGeometry, PoolMode,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > T::zero() {
                    z
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => T::one() / (T::one() + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at the pre-activation `z`. ReLU's derivative at 0 is 0.
    pub fn derivative<T: Scalar>(self, z: T) -> T {
        self.derivative_from_output(self.apply(z))
    }

    /// Derivative expressed through the activation's output `y = σ(z)`.
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
        }
    }

    pub fn forward<T: Scalar>(self, z: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Identity => z.clone(),
            _ => z.map(|v| self.apply(v)),
        }
    }

    /// In-place variant of [`Activation::forward`].
    pub fn forward_in_place<T: Scalar>(self, z: &mut Tensor<T>) {
        if self != Activation::Identity {
            z.data_mut().iter_mut().for_each(|v| *v = self.apply(*v));
        }
    }

    /// Gradient with respect to the pre-activation, given the gradient
    /// with respect to the output and the output itself.
    pub fn backward<T: Scalar>(self, grad_out: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.shape() != output.shape() {
            return Err(Error::shape("activation backward", grad_out.shape(), output.shape()));
        }
        if self == Activation::Identity {
            return Ok(grad_out.clone());
        }
        let data = grad_out
            .data()
            .iter()
            .zip(output.data())
            .map(|(&g, &y)| g * self.derivative_from_output(y))
            .collect();
        Tensor::new(grad_out.shape().to_vec(), data)
    }
}

/// Uniform initialization on `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
pub fn init_uniform<T: Scalar>(rng: &mut impl Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| T::from_f64(rng.random_range(-a..=a))).collect()
}

/// Parameter gradients of one layer; empty vectors for absent parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerGrads<T> {
    pub fn zeros_like(weights: usize, bias: usize) -> Self {
        LayerGrads {
            weights: vec![T::zero(); weights],
            bias: vec![T::zero(); bias],
        }
    }

    pub fn add_assign(&mut self, other: &LayerGrads<T>) {
        for (a, &b) in self.weights.iter_mut().zip(&other.weights) {
            *a = *a + b;
        }
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a = *a + b;
        }
    }
}

/// Reorders a `K x (B * P)` conv product into the tensor layout `(P, K, B)`
/// and adds the per-map bias.
pub(crate) fn conv_rows_to_tensor<T: Scalar>(
    y: &Matrix<T>,
    bias: &[T],
    out_dims: Dims,
) -> Tensor<T> {
    let (k, p, b) = (out_dims.channels, out_dims.plane(), out_dims.batch);
    let mut out = vec![T::zero(); out_dims.len()];
    for m in 0..k {
        let row = y.row(m);
        for s in 0..b {
            let dst = &mut out[(s * k + m) * p..(s * k + m + 1) * p];
            for (d, &v) in dst.iter_mut().zip(&row[s * p..(s + 1) * p]) {
                *d = v + bias[m];
            }
        }
    }
    Tensor::from_dims(out_dims, out).expect("dims match")
}

/// Inverse reordering of [`conv_rows_to_tensor`] (without bias).
pub(crate) fn conv_tensor_to_rows<T: Scalar>(g: &Tensor<T>) -> Matrix<T> {
    let d = g.dims();
    let (k, p, b) = (d.channels, d.plane(), d.batch);
    let mut rows = vec![T::zero(); d.len()];
    for s in 0..b {
        for m in 0..k {
            let src = &g.data()[(s * k + m) * p..(s * k + m + 1) * p];
            rows[m * b * p + s * p..m * b * p + (s + 1) * p].copy_from_slice(src);
        }
    }
    Matrix::new(k, b * p, rows).expect("dims match")
}

/// Convolution layer: row `i` of `weights` is the flattened kernel `w_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
    pub geometry: ConvGeometry,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    pub patches: PatchMatrix<T>,
    pub output: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(
        weights: Matrix<T>,
        bias: Vec<T>,
        geometry: ConvGeometry,
        activation: Activation,
    ) -> Result<Self> {
        if weights.cols() != geometry.patch_len() {
            return Err(Error::shape(
                "ConvLayer weights",
                &weights.shape(),
                &[weights.rows(), geometry.patch_len()],
            ));
        }
        if bias.len() != weights.rows() {
            return Err(Error::shape("ConvLayer bias", &[bias.len()], &[weights.rows()]));
        }
        Ok(ConvLayer {
            weights,
            bias,
            geometry,
            activation,
        })
    }

    pub fn init(geometry: ConvGeometry, maps: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let fan_in = geometry.patch_len();
        let fan_out = maps * geometry.kernel_h * geometry.kernel_w;
        let w = init_uniform(rng, fan_in, fan_out, maps * fan_in);
        ConvLayer {
            weights: Matrix::new(maps, fan_in, w).expect("positive extents"),
            bias: vec![T::zero(); maps],
            geometry,
            activation,
        }
    }

    pub fn maps(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dims(&self, batch: usize) -> Dims {
        Dims::new(self.geometry.out_h(), self.geometry.out_w(), self.maps(), batch)
    }

    /// `W · Φ + b`, reshaped to the output tensor layout.
    pub fn forward_pre(&self, patches: &PatchMatrix<T>) -> Result<Tensor<T>> {
        if patches.geometry.conv != self.geometry {
            return Err(Error::Geometry("patch matrix built for another layer".into()));
        }
        let y = crate::tensor::matmul(&self.weights, &patches.mat)?;
        Ok(conv_rows_to_tensor(&y, &self.bias, self.output_dims(patches.geometry.batch)))
    }

    /// From the pre-activation gradient: `(∂Φ, ∂W, ∂b)` with
    /// `∂W = G Φᵀ`, `∂b = row sums of G` and `∂Φ = Wᵀ G`.
    pub fn backward_pre(
        &self,
        grad_pre: &Tensor<T>,
        patches: &PatchMatrix<T>,
    ) -> Result<(Matrix<T>, Matrix<T>, Vec<T>)> {
        let expect = self.output_dims(patches.geometry.batch);
        if grad_pre.dims() != expect {
            return Err(Error::shape("conv backward", grad_pre.shape(), &expect.to_shape()));
        }
        let g = conv_tensor_to_rows(grad_pre);
        let grad_w = matmul_nt(&g, &patches.mat)?;
        let grad_b = (0..g.rows())
            .map(|r| g.row(r).iter().fold(T::zero(), |a, &v| a + v))
            .collect();
        let grad_patches = matmul_tn(&self.weights, &g)?;
        Ok((grad_patches, grad_w, grad_b))
    }

    pub fn forward(&self, f: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let patches = im2col_with(f, self.geometry)?;
        let mut out = self.forward_pre(&patches)?;
        self.activation.forward_in_place(&mut out);
        Ok((
            out.clone(),
            ConvCache {
                patches,
                output: out,
            },
        ))
    }

    pub fn backward(&self, grad_out: &Tensor<T>, cache: &ConvCache<T>) -> Result<ConvGrads<T>> {
        let grad_pre = self.activation.backward(grad_out, &cache.output)?;
        let (grad_patches, weights, bias) = self.backward_pre(&grad_pre, &cache.patches)?;
        Ok(ConvGrads {
            input: col2im(&grad_patches, &cache.patches.geometry)?,
            weights,
            bias,
        })
    }
}

/// Fully connected layer, `weights` is `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct FullLayer<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct FullGrads<T> {
    pub input: Tensor<T>,
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> FullLayer<T> {
    pub fn new(weights: Matrix<T>, bias: Vec<T>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::shape("FullLayer bias", &[bias.len()], &[weights.rows()]));
        }
        Ok(FullLayer {
            weights,
            bias,
            activation,
        })
    }

    pub fn init(fan_in: usize, units: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let w = init_uniform(rng, fan_in, units, units * fan_in);
        FullLayer {
            weights: Matrix::new(units, fan_in, w).expect("positive extents"),
            bias: vec![T::zero(); units],
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn units(&self) -> usize {
        self.weights.rows()
    }

    fn input_matrix(&self, x: &Tensor<T>) -> Result<Matrix<T>> {
        let d = x.dims();
        if d.sample_len() != self.fan_in() {
            return Err(Error::shape("full layer input", x.shape(), &[self.fan_in()]));
        }
        Matrix::new(d.batch, self.fan_in(), x.data().to_vec())
    }

    /// `X Wᵀ + b` with one sample per row of `X`; output is `[1, 1, out, B]`.
    pub fn forward_pre(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let xm = self.input_matrix(x)?;
        let mut y = matmul_nt(&xm, &self.weights)?;
        let units = self.units();
        for row in y.data_mut().chunks_mut(units) {
            for (v, &b) in row.iter_mut().zip(&self.bias) {
                *v = *v + b;
            }
        }
        Tensor::from_dims(Dims::new(1, 1, units, xm.rows()), y.into_data())
    }

    /// From the pre-activation gradient `G` (`B x out`): `∂X = G W`,
    /// `∂W = Gᵀ X`, `∂b = column sums of G`.
    pub fn backward_pre(&self, grad_pre: &Tensor<T>, x: &Tensor<T>) -> Result<FullGrads<T>> {
        let xm = self.input_matrix(x)?;
        let gd = grad_pre.dims();
        if gd.sample_len() != self.units() || gd.batch != xm.rows() {
            return Err(Error::shape(
                "full backward",
                grad_pre.shape(),
                &[1, 1, self.units(), xm.rows()],
            ));
        }
        let g = Matrix::new(gd.batch, self.units(), grad_pre.data().to_vec())?;
        let dx = crate::tensor::matmul(&g, &self.weights)?;
        let weights = matmul_tn(&g, &xm)?;
        let mut bias = vec![T::zero(); self.units()];
        for row in g.data().chunks(self.units()) {
            for (b, &v) in bias.iter_mut().zip(row) {
                *b = *b + v;
            }
        }
        Ok(FullGrads {
            input: Tensor::new(x.shape().to_vec(), dx.into_data())?,
            weights,
            bias,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = self.forward_pre(x)?;
        self.activation.forward_in_place(&mut y);
        Ok(y)
    }

    pub fn backward(&self, grad_out: &Tensor<T>, x: &Tensor<T>, output: &Tensor<T>) -> Result<FullGrads<T>> {
        let grad_pre = self.activation.backward(grad_out, output)?;
        self.backward_pre(&grad_pre, x)
    }
}

/// Batch-independent pooling configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: (usize, usize),
    pub stride: usize,
    pub mode: PoolMode,
    #[serde(default)]
    pub backward: PoolBackward,
}

/// Pooling layer `σ(φ_p(f) + b)`; bias and σ are off unless configured.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolLayer<T> {
    pub spec: PoolSpec,
    pub input: Dims,
    pub bias: Option<Vec<T>>,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct PoolCache<T> {
    pub arg: ArgIndex,
    pub output: Tensor<T>,
}

impl<T: Scalar> PoolLayer<T> {
    /// `input` carries the per-sample extents; its batch field is ignored.
    pub fn new(spec: PoolSpec, input: Dims, bias: Option<Vec<T>>, activation: Activation) -> Result<Self> {
        let input = input.with_batch(1);
        PoolGeometry::new(input, spec.window, spec.stride, spec.mode)?;
        if let Some(b) = &bias {
            if b.len() != input.channels {
                return Err(Error::shape("PoolLayer bias", &[b.len()], &[input.channels]));
            }
        }
        Ok(PoolLayer {
            spec,
            input,
            bias,
            activation,
        })
    }

    pub fn geometry(&self, batch: usize) -> PoolGeometry {
        PoolGeometry::new(self.input.with_batch(batch), self.spec.window, self.spec.stride, self.spec.mode)
            .expect("validated at construction")
    }

    pub fn output_dims(&self, batch: usize) -> Dims {
        self.geometry(batch).output_dims()
    }

    pub fn channels(&self) -> usize {
        self.input.channels
    }

    /// Adds the per-channel bias, if any, in place.
    pub fn add_bias(&self, t: &mut Tensor<T>) {
        if let Some(bias) = &self.bias {
            let d = t.dims();
            let p = d.plane();
            for (i, chunk) in t.data_mut().chunks_mut(p).enumerate() {
                let b = bias[i % d.channels];
                chunk.iter_mut().for_each(|v| *v = *v + b);
            }
        }
    }

    /// Bias gradient from the pre-activation gradient.
    pub fn bias_grad(&self, grad_pre: &Tensor<T>) -> Vec<T> {
        if self.bias.is_none() {
            return Vec::new();
        }
        let d = grad_pre.dims();
        let mut g = vec![T::zero(); d.channels];
        for (i, chunk) in grad_pre.data().chunks(d.plane()).enumerate() {
            g[i % d.channels] = chunk.iter().fold(g[i % d.channels], |a, &v| a + v);
        }
        g
    }

    pub fn forward(&self, f: &Tensor<T>) -> Result<(Tensor<T>, PoolCache<T>)> {
        let geom = self.geometry(f.dims().batch);
        let (mut out, arg) = pool_forward(f, &geom)?;
        self.add_bias(&mut out);
        self.activation.forward_in_place(&mut out);
        Ok((out.clone(), PoolCache { arg, output: out }))
    }

    /// Returns the input gradient and the bias gradient (empty without bias).
    pub fn backward(&self, grad_out: &Tensor<T>, cache: &PoolCache<T>) -> Result<(Tensor<T>, Vec<T>)> {
        let grad_pre = self.activation.backward(grad_out, &cache.output)?;
        let geom = self.geometry(grad_pre.dims().batch);
        let grad_in = pool_backward(&grad_pre, &geom, &cache.arg, self.spec.backward)?;
        Ok((grad_in, self.bias_grad(&grad_pre)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    SoftmaxCrossEntropy,
    MeanSquaredError,
}

/// Training targets for one batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets<T> {
    Classes(Vec<usize>),
    Values(Tensor<T>),
}

impl<T: Scalar> Targets<T> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(t) => t.dims().batch,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, b: usize) -> Result<Targets<T>> {
        match self {
            Targets::Classes(c) => c
                .get(b)
                .map(|&k| Targets::Classes(vec![k]))
                .ok_or(Error::Bounds {
                    what: "target sample",
                    index: b,
                    len: c.len(),
                }),
            Targets::Values(t) => Ok(Targets::Values(t.sample(b)?)),
        }
    }
}

/// Loss head; softmax is folded into the cross-entropy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossHead {
    pub kind: LossKind,
}

impl LossHead {
    pub fn new(kind: LossKind) -> Self {
        LossHead { kind }
    }

    fn check<T: Scalar>(&self, pred: &Tensor<T>, targets: &Targets<T>) -> Result<()> {
        let d = pred.dims();
        match (self.kind, targets) {
            (LossKind::SoftmaxCrossEntropy, Targets::Classes(c)) => {
                if c.len() != d.batch {
                    return Err(Error::shape("cross-entropy targets", &[c.len()], &[d.batch]));
                }
                if let Some(&bad) = c.iter().find(|&&k| k >= d.sample_len()) {
                    return Err(Error::Bounds {
                        what: "class index",
                        index: bad,
                        len: d.sample_len(),
                    });
                }
                Ok(())
            }
            (LossKind::MeanSquaredError, Targets::Values(t)) => {
                if t.dims() != d {
                    return Err(Error::shape("mse targets", t.shape(), pred.shape()));
                }
                Ok(())
            }
            _ => Err(Error::Spec("target kind does not match loss head".into())),
        }
    }

    /// Batch-mean loss.
    pub fn loss<T: Scalar>(&self, pred: &Tensor<T>, targets: &Targets<T>) -> Result<T> {
        self.check(pred, targets)?;
        let d = pred.dims();
        match targets {
            Targets::Classes(classes) => {
                let n = d.sample_len();
                let total = pred
                    .data()
                    .chunks(n)
                    .zip(classes)
                    .map(|(z, &k)| log_sum_exp(z) - z[k])
                    .fold(T::zero(), |a, v| a + v);
                Ok(total / T::from_f64(d.batch as f64))
            }
            Targets::Values(t) => {
                let sq = pred
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&p, &y)| (p - y) * (p - y))
                    .fold(T::zero(), |a, v| a + v);
                Ok(sq / T::from_f64(pred.len() as f64))
            }
        }
    }

    /// Exact gradient of [`LossHead::loss`] with respect to `pred`.
    pub fn gradient<T: Scalar>(&self, pred: &Tensor<T>, targets: &Targets<T>) -> Result<Tensor<T>> {
        self.check(pred, targets)?;
        let d = pred.dims();
        let data = match targets {
            Targets::Classes(classes) => {
                let n = d.sample_len();
                let inv_b = T::one() / T::from_f64(d.batch as f64);
                let mut g = Vec::with_capacity(pred.len());
                for (z, &k) in pred.data().chunks(n).zip(classes) {
                    let lse = log_sum_exp(z);
                    for (i, &v) in z.iter().enumerate() {
                        let p = (v - lse).exp();
                        let y = if i == k { T::one() } else { T::zero() };
                        g.push((p - y) * inv_b);
                    }
                }
                g
            }
            Targets::Values(t) => {
                let scale = T::from_f64(2.0) / T::from_f64(pred.len() as f64);
                pred.data().iter().zip(t.data()).map(|(&p, &y)| (p - y) * scale).collect()
            }
        };
        Tensor::new(pred.shape().to_vec(), data)
    }
}

fn log_sum_exp<T: Scalar>(z: &[T]) -> T {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let s = z.iter().fold(T::zero(), |a, &v| a + (v - m).exp());
    m + s.ln()
}

/// Index of the largest element of each sample; ties go to the lowest index.
pub fn argmax_per_sample<T: Scalar>(t: &Tensor<T>) -> Vec<usize> {
    let n = t.dims().sample_len();
    t.data()
        .chunks(n)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(h: usize, w: usize, vals: &[f64]) -> Tensor<f64> {
        Tensor::from_dims(Dims::new(h, w, 1, 1), vals.to_vec()).unwrap()
    }

    #[test]
    fn relu_derivative_convention() {
        assert_eq!(Activation::Relu.derivative(2.0f64), 1.0);
        assert_eq!(Activation::Relu.derivative(-2.0f64), 0.0);
        assert_eq!(Activation::Relu.derivative(0.0f64), 0.0);
    }

    #[test]
    fn conv_picks_top_left() {
        let geom = ConvGeometry::new(3, 3, 1, (2, 2), 1).unwrap();
        let layer = ConvLayer::new(
            Matrix::new(1, 4, vec![1.0, 0.0, 0.0, 0.0]).unwrap(),
            vec![0.0],
            geom,
            Activation::Identity,
        )
        .unwrap();
        let f = t(3, 3, &(1..=9).map(f64::from).collect::<Vec<_>>());
        let (out, _) = layer.forward(&f).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 4.0, 5.0]);
    }

    #[test]
    fn conv_averaging_kernel() {
        let geom = ConvGeometry::new(2, 2, 1, (2, 2), 1).unwrap();
        let layer = ConvLayer::new(Matrix::new(1, 4, vec![0.25; 4]).unwrap(), vec![0.0], geom, Activation::Identity).unwrap();
        let (out, _) = layer.forward(&t(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(out.data(), &[2.5]);
    }

    #[test]
    fn conv_zero_gradient() {
        let geom = ConvGeometry::new(4, 4, 2, (2, 2), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = ConvLayer::<f64>::init(geom, 3, Activation::Tanh, &mut rng);
        let f = Tensor::from_fn(Dims::new(4, 4, 2, 2), |i| (i as f64 * 0.37).sin());
        let (out, cache) = layer.forward(&f).unwrap();
        let g = layer.backward(&Tensor::zeros(out.dims()), &cache).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_one_by_one_weight_grad_is_inner_product() {
        let geom = ConvGeometry::new(2, 2, 1, (1, 1), 1).unwrap();
        let layer = ConvLayer::new(Matrix::new(1, 1, vec![0.7]).unwrap(), vec![0.0], geom, Activation::Identity).unwrap();
        let f = t(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let (_, cache) = layer.forward(&f).unwrap();
        let g = layer.backward(&t(2, 2, &[0.5, -1.0, 2.0, 0.25]), &cache).unwrap();
        // 0.5*1 - 1*2 + 2*3 + 0.25*4
        assert_eq!(g.weights.data(), &[5.5]);
        assert_eq!(g.bias, vec![1.75]);
        assert_eq!(g.input.data(), &[0.35, -0.7, 1.4, 0.175]);
    }

    #[test]
    fn conv_rejects_mismatched_weights() {
        let geom = ConvGeometry::new(3, 3, 2, (2, 2), 1).unwrap();
        assert!(ConvLayer::new(Matrix::<f64>::zeros(1, 4), vec![0.0], geom, Activation::Relu).is_err());
        assert!(ConvLayer::new(Matrix::<f64>::zeros(1, 8), vec![0.0; 2], geom, Activation::Relu).is_err());
    }

    #[test]
    fn full_identity_weights() {
        let layer = FullLayer::new(Matrix::identity(2), vec![1.0, 1.0], Activation::Identity).unwrap();
        let x = Tensor::new(vec![1, 1, 2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(layer.forward(&x).unwrap().data(), &[4.0, 5.0]);
    }

    #[test]
    fn pool_layer_without_bias_is_plain_pooling() {
        let spec = PoolSpec {
            window: (2, 2),
            stride: 2,
            mode: PoolMode::Max,
            backward: PoolBackward::Exact,
        };
        let layer = PoolLayer::<f64>::new(spec, Dims::new(4, 4, 1, 1), None, Activation::Identity).unwrap();
        let f = t(4, 4, &(1..=16).map(f64::from).collect::<Vec<_>>());
        let (out, _) = layer.forward(&f).unwrap();
        let (expect, _) = pool_forward(&f, &layer.geometry(1)).unwrap();
        assert_eq!(out, expect);
        assert!(PoolLayer::<f64>::new(spec, Dims::new(4, 4, 2, 1), Some(vec![0.0]), Activation::Identity).is_err());
    }

    #[test]
    fn uniform_softmax_loss() {
        let head = LossHead::new(LossKind::SoftmaxCrossEntropy);
        let z = Tensor::<f64>::zeros(Dims::new(1, 1, 10, 1));
        for k in [0, 3, 9] {
            let l = head.loss(&z, &Targets::Classes(vec![k])).unwrap();
            assert!((l - 10f64.ln()).abs() < 1e-12);
        }
        assert!(matches!(
            head.loss(&z, &Targets::Classes(vec![10])),
            Err(Error::Bounds { index: 10, .. })
        ));
    }

    #[test]
    fn mse_of_identical_is_zero() {
        let head = LossHead::new(LossKind::MeanSquaredError);
        let p = Tensor::<f64>::from_fn(Dims::new(2, 2, 1, 2), |i| i as f64);
        assert_eq!(head.loss(&p, &Targets::Values(p.clone())).unwrap(), 0.0);
        assert!(head.gradient(&p, &Targets::Values(p.clone())).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn argmax_ties_lowest() {
        let z = Tensor::new(vec![1, 1, 3, 2], vec![0.1, 2.0, -1.0, 1.0, 1.0, 0.5]).unwrap();
        assert_eq!(argmax_per_sample(&z), vec![1, 0]);
    }
}
