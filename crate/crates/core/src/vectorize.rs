//! Vectorization operators: convolution unrolling (im2col), its many-to-one
//! adjoint (col2im), and index-map driven pooling.
//!
//! Patch matrices have one row per kernel tap and one column per output
//! position. Row `r = c * kh * kw + i * kw + j` holds tap `(i, j)` of
//! channel `c`; column `q = b * out_h * out_w + y * out_w + x` is output
//! position `(y, x)` of batch item `b`. A multichannel input is unrolled in
//! one pass, so the result for `C` channels is the vertical stack of the
//! `C` single-channel patch matrices; no zero-filled redundant columns are
//! ever materialized.
//!
//! Only valid convolution is supported: an output position exists only
//! where the whole kernel lies inside the input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    accumulate_by_index, max_by_group, Dims, IndexMap, Matrix, Reducer, Scalar,
    Tensor,
};

/// Batch-independent convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn new(
        in_h: usize,
        in_w: usize,
        channels: usize,
        kernel: (usize, usize),
        stride: usize,
    ) -> Result<Self> {
        let (kernel_h, kernel_w) = kernel;
        if in_h == 0 || in_w == 0 || channels == 0 || kernel_h == 0 || kernel_w == 0 {
            return Err(Error::Geometry("extents must be positive".into()));
        }
        if stride == 0 {
            return Err(Error::Geometry("stride must be at least 1".into()));
        }
        if kernel_h > in_h || kernel_w > in_w {
            return Err(Error::Geometry(format!(
                "kernel {kernel_h}x{kernel_w} larger than input {in_h}x{in_w}"
            )));
        }
        Ok(ConvGeometry {
            in_h,
            in_w,
            channels,
            kernel_h,
            kernel_w,
            stride,
        })
    }

    pub fn out_h(&self) -> usize {
        (self.in_h - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w - self.kernel_w) / self.stride + 1
    }

    pub fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Length of one flattened receptive field (`kh * kw * C`).
    pub fn patch_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.channels
    }

    pub fn input_dims(&self, batch: usize) -> Dims {
        Dims::new(self.in_h, self.in_w, self.channels, batch)
    }

    pub fn batched(self, batch: usize) -> PatchGeometry {
        PatchGeometry { conv: self, batch }
    }

    /// Same spatial geometry restricted to one channel.
    pub fn single_channel(self) -> Self {
        ConvGeometry {
            channels: 1,
            ..self
        }
    }
}

/// Convolution geometry together with the batch size it was unrolled for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PatchGeometry {
    pub conv: ConvGeometry,
    pub batch: usize,
}

impl PatchGeometry {
    pub fn rows(&self) -> usize {
        self.conv.patch_len()
    }

    pub fn cols(&self) -> usize {
        self.conv.out_plane() * self.batch
    }

    pub fn input_dims(&self) -> Dims {
        self.conv.input_dims(self.batch)
    }
}

/// Unrolled input: one flattened receptive field per column.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchMatrix<T> {
    pub mat: Matrix<T>,
    pub geometry: PatchGeometry,
}

impl<T: Scalar> PatchMatrix<T> {
    pub fn new(mat: Matrix<T>, geometry: PatchGeometry) -> Result<Self> {
        if mat.shape() != [geometry.rows(), geometry.cols()] {
            return Err(Error::shape(
                "PatchMatrix::new",
                &mat.shape(),
                &[geometry.rows(), geometry.cols()],
            ));
        }
        Ok(PatchMatrix { mat, geometry })
    }
}

/// Unrolls `f` (all channels and batch items at once) into a patch matrix.
pub fn im2col<T: Scalar>(
    f: &Tensor<T>,
    kernel: (usize, usize),
    stride: usize,
) -> Result<PatchMatrix<T>> {
    let d = f.dims();
    let conv = ConvGeometry::new(d.height, d.width, d.channels, kernel, stride)?;
    im2col_with(f, conv)
}

/// [`im2col`] against a known geometry; the batch size is taken from `f`.
pub fn im2col_with<T: Scalar>(f: &Tensor<T>, conv: ConvGeometry) -> Result<PatchMatrix<T>> {
    let d = f.dims();
    if d.with_batch(1) != conv.input_dims(1) {
        return Err(Error::shape(
            "im2col",
            f.shape(),
            &conv.input_dims(d.batch).to_shape(),
        ));
    }
    let geometry = conv.batched(d.batch);
    let (oh, ow, s) = (conv.out_h(), conv.out_w(), conv.stride);
    let cols = geometry.cols();
    let src = f.data();
    let mut data = vec![T::zero(); geometry.rows() * cols];
    let mut row = 0;
    for c in 0..conv.channels {
        for i in 0..conv.kernel_h {
            for j in 0..conv.kernel_w {
                let out_row = &mut data[row * cols..(row + 1) * cols];
                for b in 0..d.batch {
                    for y in 0..oh {
                        let base = d.index(y * s + i, j, c, b);
                        let dst = &mut out_row[b * oh * ow + y * ow..b * oh * ow + (y + 1) * ow];
                        if s == 1 {
                            dst.copy_from_slice(&src[base..base + ow]);
                        } else {
                            for (x, v) in dst.iter_mut().enumerate() {
                                *v = src[base + x * s];
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
    Ok(PatchMatrix {
        mat: Matrix::new(geometry.rows(), cols, data)?,
        geometry,
    })
}

/// Index map sending every patch-matrix entry (linear, row-major) to the
/// input position it was copied from.
pub fn col2im_map(geometry: &PatchGeometry) -> IndexMap {
    let conv = geometry.conv;
    let d = geometry.input_dims();
    let (oh, ow, s) = (conv.out_h(), conv.out_w(), conv.stride);
    let total = geometry.rows() * geometry.cols();
    let mut targets = Vec::with_capacity(total);
    for c in 0..conv.channels {
        for i in 0..conv.kernel_h {
            for j in 0..conv.kernel_w {
                for b in 0..geometry.batch {
                    for y in 0..oh {
                        for x in 0..ow {
                            targets.push(d.index(y * s + i, x * s + j, c, b));
                        }
                    }
                }
            }
        }
    }
    IndexMap::from_parts((0..total).collect(), targets, total, d.len())
}

/// Adjoint of [`im2col`]: every input position receives the sum of the
/// gradient entries at all places where it was copied.
pub fn col2im<T: Scalar>(g: &Matrix<T>, geometry: &PatchGeometry) -> Result<Tensor<T>> {
    col2im_with_map(g, geometry, &col2im_map(geometry))
}

pub fn col2im_with_map<T: Scalar>(
    g: &Matrix<T>,
    geometry: &PatchGeometry,
    map: &IndexMap,
) -> Result<Tensor<T>> {
    if g.shape() != [geometry.rows(), geometry.cols()] {
        return Err(Error::shape(
            "col2im",
            &g.shape(),
            &[geometry.rows(), geometry.cols()],
        ));
    }
    if map.source_len() != g.data().len() || map.target_len() != geometry.input_dims().len() {
        return Err(Error::Geometry("col2im map built for another geometry".into()));
    }
    let data = accumulate_by_index(g.data(), map, Reducer::Sum)?;
    Tensor::from_dims(geometry.input_dims(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Avg,
}

/// How pooling gradients are routed back to the input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolBackward {
    /// True gradient: uniform share for average pooling, argmax routing for max pooling.
    #[default]
    Exact,
    /// Nearest-neighbour upscaling: every input cell of a window receives
    /// the window's gradient, unscaled.
    PaperNn,
}

/// Pooling geometry over a whole `(H, W, C, B)` tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PoolGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub batch: usize,
    pub window_h: usize,
    pub window_w: usize,
    pub stride: usize,
    pub mode: PoolMode,
}

impl PoolGeometry {
    pub fn new(input: Dims, window: (usize, usize), stride: usize, mode: PoolMode) -> Result<Self> {
        let (window_h, window_w) = window;
        if window_h == 0 || window_w == 0 || stride == 0 {
            return Err(Error::Geometry("pool window and stride must be positive".into()));
        }
        if window_h > input.height || window_w > input.width {
            return Err(Error::Geometry(format!(
                "pool window {window_h}x{window_w} exceeds input {}x{}",
                input.height, input.width
            )));
        }
        Ok(PoolGeometry {
            in_h: input.height,
            in_w: input.width,
            channels: input.channels,
            batch: input.batch,
            window_h,
            window_w,
            stride,
            mode,
        })
    }

    pub fn out_h(&self) -> usize {
        (self.in_h - self.window_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w - self.window_w) / self.stride + 1
    }

    pub fn window_len(&self) -> usize {
        self.window_h * self.window_w
    }

    pub fn is_overlapping(&self) -> bool {
        self.stride < self.window_h || self.stride < self.window_w
    }

    pub fn input_dims(&self) -> Dims {
        Dims::new(self.in_h, self.in_w, self.channels, self.batch)
    }

    pub fn output_dims(&self) -> Dims {
        Dims::new(self.out_h(), self.out_w(), self.channels, self.batch)
    }

    pub fn with_batch(self, batch: usize) -> Self {
        PoolGeometry { batch, ..self }
    }
}

/// Pairs every (input element, covering window) with that window's output
/// index. Overlapping windows duplicate their shared inputs, one pair per
/// covering window. Pairs are grouped by output, each group in row-major
/// window order.
pub fn build_pool_map(geom: &PoolGeometry) -> IndexMap {
    let din = geom.input_dims();
    let (oh, ow, s) = (geom.out_h(), geom.out_w(), geom.stride);
    let n = oh * ow * geom.channels * geom.batch * geom.window_len();
    let mut sources = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut t = 0;
    for b in 0..geom.batch {
        for c in 0..geom.channels {
            for y in 0..oh {
                for x in 0..ow {
                    for i in 0..geom.window_h {
                        for j in 0..geom.window_w {
                            sources.push(din.index(y * s + i, x * s + j, c, b));
                            targets.push(t);
                        }
                    }
                    t += 1;
                }
            }
        }
    }
    IndexMap::from_parts(sources, targets, din.len(), t)
}

/// A pooling map and its transpose, built once per geometry.
#[derive(Clone, Debug)]
pub struct PoolMaps {
    pub forward: IndexMap,
    pub backward: IndexMap,
}

impl PoolMaps {
    pub fn new(geom: &PoolGeometry) -> Self {
        let forward = build_pool_map(geom);
        let backward = forward.transpose();
        PoolMaps { forward, backward }
    }
}

/// Per output cell, the input position that won the max (empty for average pooling).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ArgIndex(pub Vec<usize>);

pub fn pool_forward<T: Scalar>(f: &Tensor<T>, geom: &PoolGeometry) -> Result<(Tensor<T>, ArgIndex)> {
    pool_forward_with(f, geom, &PoolMaps::new(geom))
}

pub fn pool_forward_with<T: Scalar>(
    f: &Tensor<T>,
    geom: &PoolGeometry,
    maps: &PoolMaps,
) -> Result<(Tensor<T>, ArgIndex)> {
    if f.dims() != geom.input_dims() {
        return Err(Error::shape("pool_forward", f.shape(), &geom.input_dims().to_shape()));
    }
    match geom.mode {
        PoolMode::Avg => {
            let out = accumulate_by_index(f.data(), &maps.forward, Reducer::Mean)?;
            Ok((Tensor::from_dims(geom.output_dims(), out)?, ArgIndex::default()))
        }
        PoolMode::Max => {
            if maps.forward.source_len() != f.len() {
                return Err(Error::Geometry("pool map built for another geometry".into()));
            }
            // Pool maps never have empty groups.
            let (out, arg) = max_by_group(f.data(), &maps.forward);
            Ok((Tensor::from_dims(geom.output_dims(), out)?, ArgIndex(arg)))
        }
    }
}

pub fn pool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    geom: &PoolGeometry,
    arg: &ArgIndex,
    mode: PoolBackward,
) -> Result<Tensor<T>> {
    pool_backward_with(grad_out, geom, arg, mode, &PoolMaps::new(geom))
}

pub fn pool_backward_with<T: Scalar>(
    grad_out: &Tensor<T>,
    geom: &PoolGeometry,
    arg: &ArgIndex,
    mode: PoolBackward,
    maps: &PoolMaps,
) -> Result<Tensor<T>> {
    if grad_out.dims() != geom.output_dims() {
        return Err(Error::shape(
            "pool_backward",
            grad_out.shape(),
            &geom.output_dims().to_shape(),
        ));
    }
    let din = geom.input_dims();
    let data = match (mode, geom.mode) {
        (PoolBackward::PaperNn, _) => {
            accumulate_by_index(grad_out.data(), &maps.backward, Reducer::Sum)?
        }
        (PoolBackward::Exact, PoolMode::Avg) => {
            let scale = T::one() / T::from_f64(geom.window_len() as f64);
            let shared: Vec<T> = grad_out.data().iter().map(|&g| g * scale).collect();
            accumulate_by_index(&shared, &maps.backward, Reducer::Sum)?
        }
        (PoolBackward::Exact, PoolMode::Max) => {
            if arg.0.len() != grad_out.len() {
                return Err(Error::shape("pool_backward argmax", &[arg.0.len()], &[grad_out.len()]));
            }
            if let Some(&bad) = arg.0.iter().find(|&&a| a >= din.len()) {
                return Err(Error::Bounds {
                    what: "pool argmax",
                    index: bad,
                    len: din.len(),
                });
            }
            let mut out = vec![T::zero(); din.len()];
            for (&a, &g) in arg.0.iter().zip(grad_out.data()) {
                out[a] = out[a] + g;
            }
            out
        }
    };
    Tensor::from_dims(din, data)
}
