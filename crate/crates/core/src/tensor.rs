//! Dense tensors, matrices and the three primitive operator families the
//! rest of the crate reduces to: matrix products, element-wise maps and
//! indexed accumulation.
//!
//! Linear layout is fixed for every operator in the crate: row-major within
//! an image plane, then channels, then batch. For a tensor of extents
//! `(H, W, C, B)` the element `(h, w, c, b)` lives at
//! `((b * C + c) * H + h) * W + w`.

use std::collections::HashSet;
use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage precision tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl std::str::FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "single" => Ok(DType::F32),
            "f64" | "double" => Ok(DType::F64),
            other => Err(Error::Config(format!("unknown precision {other:?}"))),
        }
    }
}

/// Real scalar usable as tensor element.
pub trait Scalar:
    Float + Debug + Display + Default + Sum + Send + Sync + 'static
{
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one value from the front of `bytes`, which must hold at least
    /// `DTYPE.byte_width()` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// `c = a * b` for an `m x k` by `k x n` product given as strided views;
    /// `c` is row-major `m x n` and is overwritten.
    ///
    /// # Safety
    /// Every index `i * rs + j * cs` addressed by the strides must lie inside
    /// the corresponding buffer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(m: usize, k: usize, n: usize, a: *const Self, rsa: isize, csa: isize, b: *const Self, rsb: isize, csb: isize, c: *mut Self);
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }

    unsafe fn gemm(m: usize, k: usize, n: usize, a: *const Self, rsa: isize, csa: isize, b: *const Self, rsb: isize, csb: isize, c: *mut Self) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 0.0, c, n as isize, 1);
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }

    unsafe fn gemm(m: usize, k: usize, n: usize, a: *const Self, rsa: isize, csa: isize, b: *const Self, rsb: isize, csb: isize, c: *mut Self) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 0.0, c, n as isize, 1);
    }
}

/// Extents of a (height, width, channels, batch) tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub batch: usize,
}

impl Dims {
    pub const fn new(height: usize, width: usize, channels: usize, batch: usize) -> Self {
        Dims {
            height,
            width,
            channels,
            batch,
        }
    }

    pub fn len(&self) -> usize {
        self.plane() * self.channels * self.batch
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn sample_len(&self) -> usize {
        self.plane() * self.channels
    }

    #[inline]
    pub fn index(&self, h: usize, w: usize, c: usize, b: usize) -> usize {
        ((b * self.channels + c) * self.height + h) * self.width + w
    }

    pub fn with_batch(self, batch: usize) -> Self {
        Dims { batch, ..self }
    }

    pub fn to_shape(self) -> Vec<usize> {
        vec![self.height, self.width, self.channels, self.batch]
    }
}

/// Dense n-dimensional real array (up to four axes: height, width, channels, batch).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 || shape.iter().any(|&e| e == 0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::InvalidShape(shape.to_vec()))
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(Error::shape("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Tensor {
            shape: dims.to_shape(),
            data: vec![T::zero(); dims.len()],
        }
    }

    pub fn from_dims(dims: Dims, data: Vec<T>) -> Result<Self> {
        Tensor::new(dims.to_shape(), data)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize) -> T) -> Self {
        Tensor {
            shape: dims.to_shape(),
            data: (0..dims.len()).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Extents padded to four axes with trailing ones.
    pub fn dims(&self) -> Dims {
        let e = |i: usize| self.shape.get(i).copied().unwrap_or(1);
        Dims::new(e(0), e(1), e(2), e(3))
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    /// Bounds-checked element access by `(h, w, c, b)`.
    pub fn at(&self, h: usize, w: usize, c: usize, b: usize) -> T {
        let d = self.dims();
        assert!(
            h < d.height && w < d.width && c < d.channels && b < d.batch,
            "index ({h}, {w}, {c}, {b}) outside {d:?}"
        );
        self.data[d.index(h, w, c, b)]
    }

    /// Same data, new shape; elements are never reordered.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        let len = check_shape(new_shape)?;
        if len != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, new_shape));
        }
        Ok(Tensor {
            shape: new_shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Batch item `b` as a `[H, W, C, 1]` tensor.
    pub fn sample(&self, b: usize) -> Result<Self> {
        let d = self.dims();
        if b >= d.batch {
            return Err(Error::Bounds {
                what: "batch sample",
                index: b,
                len: d.batch,
            });
        }
        let n = d.sample_len();
        Ok(Tensor {
            shape: d.with_batch(1).to_shape(),
            data: self.data[b * n..(b + 1) * n].to_vec(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Applies `f` independently to every element.
pub fn map_elementwise<T: Scalar>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    t.map(f)
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidShape(vec![rows, cols]));
        }
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::shape("Matrix::new", &[rows, cols], &[data.len()]));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Geometry("ragged rows".into()));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = vec![T::zero(); self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }
}

const ROW_BLOCK: usize = 64;
const PAR_THRESHOLD: usize = 1 << 18;

/// Strided view of a `rows x cols` operand: element `(i, j)` sits at
/// `i * rs + j * cs`.
#[derive(Clone, Copy)]
struct View<'a, T> {
    data: &'a [T],
    rs: usize,
    cs: usize,
}

/// `a * b` over fixed 64-row blocks of the output. Each block is one GEMM
/// call, so the result is identical whether the blocks run on one thread or
/// many.
fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: View<T>, b: View<T>) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    if n == 1 {
        gemv(k, a, b.data, b.rs, &mut out);
        return out;
    }
    if m == 1 {
        let at = View { data: b.data, rs: b.cs, cs: b.rs };
        gemv(k, at, a.data, a.cs, &mut out);
        return out;
    }
    if k == 1 {
        for (i, row) in out.chunks_mut(n).enumerate() {
            let ai = a.data[i * a.rs];
            for (j, o) in row.iter_mut().enumerate() {
                *o = ai * b.data[j * b.cs];
            }
        }
        return out;
    }
    let block = |blk: usize, o: &mut [T]| {
        let rows = o.len() / n;
        let row0 = blk * ROW_BLOCK;
        debug_assert!((row0 + rows - 1) * a.rs + (k - 1) * a.cs < a.data.len());
        debug_assert!((k - 1) * b.rs + (n - 1) * b.cs < b.data.len());
        // SAFETY: callers check the operand shapes, so every strided index of
        // rows row0..row0+rows of `a`, all of `b` and the block of `out` is in bounds.
        unsafe {
            T::gemm(
                rows,
                k,
                n,
                a.data.as_ptr().add(row0 * a.rs),
                a.rs as isize,
                a.cs as isize,
                b.data.as_ptr(),
                b.rs as isize,
                b.cs as isize,
                o.as_mut_ptr(),
            )
        }
    };
    if m > ROW_BLOCK && m.saturating_mul(k).saturating_mul(n) >= PAR_THRESHOLD {
        out.par_chunks_mut(ROW_BLOCK * n).enumerate().for_each(|(i, o)| block(i, o));
    } else {
        out.chunks_mut(ROW_BLOCK * n).enumerate().for_each(|(i, o)| block(i, o));
    }
    out
}

fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let tail: T = xc.remainder().iter().zip(yc.remainder()).map(|(&p, &q)| p * q).sum();
    for (p, q) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] = acc[l] + p[l] * q[l];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

/// `out = a * x` for an `m x k` view `a` and a length-`k` vector read with
/// stride `xs`. Rows are split into fixed blocks, as in [`gemm`].
fn gemv<T: Scalar>(k: usize, a: View<T>, x: &[T], xs: usize, out: &mut [T]) {
    let xv: Vec<T> = (0..k).map(|p| x[p * xs]).collect();
    let m = out.len();
    let block = |blk: usize, o: &mut [T]| {
        let row0 = blk * ROW_BLOCK * 16;
        if a.cs == 1 {
            for (i, v) in o.iter_mut().enumerate() {
                let r = (row0 + i) * a.rs;
                *v = dot(&a.data[r..r + k], &xv);
            }
        } else if a.rs == 1 {
            let len = o.len();
            for (p, &xp) in xv.iter().enumerate() {
                let col = &a.data[p * a.cs + row0..p * a.cs + row0 + len];
                for (v, &c) in o.iter_mut().zip(col) {
                    *v = *v + xp * c;
                }
            }
        } else {
            for (i, v) in o.iter_mut().enumerate() {
                *v = (0..k).map(|p| a.data[(row0 + i) * a.rs + p * a.cs] * xv[p]).sum();
            }
        }
    };
    if m.saturating_mul(k) >= PAR_THRESHOLD {
        out.par_chunks_mut(ROW_BLOCK * 16).enumerate().for_each(|(i, o)| block(i, o));
    } else {
        out.chunks_mut(ROW_BLOCK * 16).enumerate().for_each(|(i, o)| block(i, o));
    }
}

/// Matrix product `a * b`.
///
/// The output is computed in fixed row blocks, so the result does not depend
/// on the number of worker threads.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", &a.shape(), &b.shape()));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let data = gemm(m, k, n, View { data: &a.data, rs: k, cs: 1 }, View { data: &b.data, rs: n, cs: 1 });
    Ok(Matrix { rows: m, cols: n, data })
}

/// `aᵀ * b` without materializing the transpose.
pub fn matmul_tn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows != b.rows {
        return Err(Error::shape("matmul_tn", &a.shape(), &b.shape()));
    }
    let (k, m, n) = (a.rows, a.cols, b.cols);
    let data = gemm(m, k, n, View { data: &a.data, rs: 1, cs: m }, View { data: &b.data, rs: n, cs: 1 });
    Ok(Matrix { rows: m, cols: n, data })
}

/// `a * bᵀ` without materializing the transpose.
pub fn matmul_nt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return Err(Error::shape("matmul_nt", &a.shape(), &b.shape()));
    }
    let (m, k, n) = (a.rows, a.cols, b.rows);
    let data = gemm(m, k, n, View { data: &a.data, rs: k, cs: 1 }, View { data: &b.data, rs: 1, cs: k });
    Ok(Matrix { rows: m, cols: n, data })
}

/// Many-to-one (or one-to-many) pairing of source positions with target
/// positions, the driver of pooling, col2im and unpooling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMap {
    source_index: Vec<usize>,
    target_index: Vec<usize>,
    source_len: usize,
    target_len: usize,
    /// Sources regrouped by target (stable): target `t` owns
    /// `grouped[offsets[t]..offsets[t + 1]]`.
    offsets: Vec<usize>,
    grouped: Vec<usize>,
}

fn group_by_target(source_index: &[usize], target_index: &[usize], target_len: usize) -> (Vec<usize>, Vec<usize>) {
    let mut offsets = vec![0usize; target_len + 1];
    for &t in target_index {
        offsets[t + 1] += 1;
    }
    for t in 0..target_len {
        offsets[t + 1] += offsets[t];
    }
    let mut next = offsets.clone();
    let mut grouped = vec![0usize; source_index.len()];
    for (&s, &t) in source_index.iter().zip(target_index) {
        grouped[next[t]] = s;
        next[t] += 1;
    }
    (offsets, grouped)
}

impl IndexMap {
    /// Validates ranges and pair uniqueness.
    pub fn new(
        source_index: Vec<usize>,
        target_index: Vec<usize>,
        source_len: usize,
        target_len: usize,
    ) -> Result<Self> {
        if source_index.len() != target_index.len() {
            return Err(Error::IndexMap(format!(
                "{} sources but {} targets",
                source_index.len(),
                target_index.len()
            )));
        }
        if target_len == 0 {
            return Err(Error::IndexMap("target_len must be positive".into()));
        }
        if let Some(&s) = source_index.iter().find(|&&s| s >= source_len) {
            return Err(Error::Bounds {
                what: "index map source",
                index: s,
                len: source_len,
            });
        }
        if let Some(&t) = target_index.iter().find(|&&t| t >= target_len) {
            return Err(Error::Bounds {
                what: "index map target",
                index: t,
                len: target_len,
            });
        }
        let mut seen = HashSet::with_capacity(source_index.len());
        for pair in source_index.iter().zip(&target_index) {
            if !seen.insert(pair) {
                return Err(Error::IndexMap(format!("duplicate pair {pair:?}")));
            }
        }
        Ok(Self::from_parts(source_index, target_index, source_len, target_len))
    }

    /// Builder-side constructor; callers guarantee the invariants.
    pub(crate) fn from_parts(
        source_index: Vec<usize>,
        target_index: Vec<usize>,
        source_len: usize,
        target_len: usize,
    ) -> Self {
        debug_assert_eq!(source_index.len(), target_index.len());
        debug_assert!(source_index.iter().all(|&s| s < source_len));
        debug_assert!(target_index.iter().all(|&t| t < target_len));
        let (offsets, grouped) = group_by_target(&source_index, &target_index, target_len);
        IndexMap {
            source_index,
            target_index,
            source_len,
            target_len,
            offsets,
            grouped,
        }
    }

    /// Sources of target `t`, in pair order.
    #[inline]
    pub fn sources_of(&self, t: usize) -> &[usize] {
        &self.grouped[self.offsets[t]..self.offsets[t + 1]]
    }

    pub fn len(&self) -> usize {
        self.source_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_index.is_empty()
    }

    pub fn source_index(&self) -> &[usize] {
        &self.source_index
    }

    pub fn target_index(&self) -> &[usize] {
        &self.target_index
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.source_index
            .iter()
            .copied()
            .zip(self.target_index.iter().copied())
    }

    /// Swaps the roles of sources and targets.
    pub fn transpose(&self) -> Self {
        Self::from_parts(
            self.target_index.clone(),
            self.source_index.clone(),
            self.target_len,
            self.source_len,
        )
    }

    /// Number of sources mapped to each target.
    pub fn bucket_sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reducer {
    Sum,
    Max,
    Mean,
}

/// `out[t] = reduce { values[s] : (s, t) in map }`.
///
/// Empty buckets yield zero for every reducer.
pub fn accumulate_by_index<T: Scalar>(
    values: &[T],
    map: &IndexMap,
    reducer: Reducer,
) -> Result<Vec<T>> {
    if values.len() != map.source_len {
        return Err(Error::shape(
            "accumulate_by_index",
            &[values.len()],
            &[map.source_len],
        ));
    }
    let gather = |t: usize| map.sources_of(t).iter().fold(T::zero(), |acc, &i| acc + values[i]);
    match reducer {
        Reducer::Sum => Ok((0..map.target_len).map(gather).collect()),
        Reducer::Mean => Ok((0..map.target_len)
            .map(|t| {
                let n = map.sources_of(t).len();
                if n == 0 {
                    T::zero()
                } else {
                    gather(t) / T::from_f64(n as f64)
                }
            })
            .collect()),
        Reducer::Max => Ok(accumulate_max_with_arg(values, map)?.0),
    }
}

/// Max reduction that also reports, per target, the winning source.
/// Ties go to the lowest source index; empty buckets yield `(0, None)`.
pub fn accumulate_max_with_arg<T: Scalar>(
    values: &[T],
    map: &IndexMap,
) -> Result<(Vec<T>, Vec<Option<usize>>)> {
    if values.len() != map.source_len {
        return Err(Error::shape(
            "accumulate_max_with_arg",
            &[values.len()],
            &[map.source_len],
        ));
    }
    let (out, arg) = max_by_group(values, map);
    Ok((out, arg.into_iter().map(|a| (a != usize::MAX).then_some(a)).collect()))
}

/// Unchecked core of [`accumulate_max_with_arg`]; empty groups report
/// `usize::MAX` as their winner.
pub(crate) fn max_by_group<T: Scalar>(values: &[T], map: &IndexMap) -> (Vec<T>, Vec<usize>) {
    let mut out = Vec::with_capacity(map.target_len);
    let mut arg = Vec::with_capacity(map.target_len);
    for t in 0..map.target_len {
        let Some((&first, rest)) = map.sources_of(t).split_first() else {
            out.push(T::zero());
            arg.push(usize::MAX);
            continue;
        };
        let (mut best, mut at) = (values[first], first);
        for &i in rest {
            let v = values[i];
            if v > best || (v == best && i < at) {
                best = v;
                at = i;
            }
        }
        out.push(best);
        arg.push(at);
    }
    (out, arg)
}

/// Same data, new shape.
pub fn reshape<T: Scalar>(t: &Tensor<T>, new_shape: &[usize]) -> Result<Tensor<T>> {
    t.reshape(new_shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let b = m(&[&[3.0], &[4.0]]);
        assert_eq!(matmul(&Matrix::identity(2), &b).unwrap(), b);
    }

    #[test]
    fn matmul_by_hand() {
        let out = matmul(&m(&[&[1.0, 2.0], &[3.0, 4.0]]), &m(&[&[5.0], &[6.0]])).unwrap();
        assert_eq!(out.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let b = m(&[&[1.0, -2.0, 3.5], &[0.25, 9.0, -1.0]]);
        let out = matmul(&Matrix::zeros(3, 2), &b).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.shape(), [3, 3]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::<f64>::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = Matrix::new(3, 5, (0..15).map(|v| v as f64 * 0.5 - 2.0).collect()).unwrap();
        let b = Matrix::new(3, 4, (0..12).map(|v| (v as f64).sin()).collect()).unwrap();
        let tn = matmul_tn(&a, &b).unwrap();
        let expect = matmul(&a.transpose(), &b).unwrap();
        for (x, y) in tn.data().iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = Matrix::new(4, 5, (0..20).map(|v| (v as f64).cos()).collect()).unwrap();
        let nt = matmul_nt(&a, &c).unwrap();
        let expect = matmul(&a, &c.transpose()).unwrap();
        for (x, y) in nt.data().iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn elementwise_maps() {
        let t = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(map_elementwise(&t, |v: f64| v.max(0.0)).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(map_elementwise(&t, |v| v), t);
        let z = Tensor::new(vec![2, 2], vec![0.0f64; 4]).unwrap();
        let s = map_elementwise(&z, |v| 1.0 / (1.0 + (-v).exp()));
        assert!(s.data().iter().all(|&v| v == 0.5));
        assert_eq!(s.shape(), z.shape());
    }

    #[test]
    fn accumulate_examples() {
        let sum = IndexMap::new(vec![0, 1, 2], vec![0, 0, 1], 3, 2).unwrap();
        assert_eq!(
            accumulate_by_index(&[1.0, 2.0, 3.0], &sum, Reducer::Sum).unwrap(),
            vec![3.0, 3.0]
        );
        let max = IndexMap::new(vec![0, 1, 2], vec![1, 1, 0], 3, 2).unwrap();
        assert_eq!(
            accumulate_by_index(&[5.0, 2.0, 7.0], &max, Reducer::Max).unwrap(),
            vec![7.0, 5.0]
        );
        let sparse = IndexMap::new(vec![0], vec![0], 1, 2).unwrap();
        assert_eq!(
            accumulate_by_index(&[1.0], &sparse, Reducer::Sum).unwrap(),
            vec![1.0, 0.0]
        );
        assert_eq!(
            accumulate_by_index(&[1.0], &sparse, Reducer::Max).unwrap(),
            vec![1.0, 0.0]
        );
        let mean = IndexMap::new(vec![0, 1, 2], vec![0, 0, 0], 3, 1).unwrap();
        assert_eq!(
            accumulate_by_index(&[1.0, 2.0, 6.0], &mean, Reducer::Mean).unwrap(),
            vec![3.0]
        );
    }

    #[test]
    fn max_ties_pick_lowest_source() {
        let map = IndexMap::new(vec![3, 1, 2], vec![0, 0, 0], 4, 1).unwrap();
        let (v, arg) = accumulate_max_with_arg(&[0.0, 5.0, 1.0, 5.0], &map).unwrap();
        assert_eq!(v, vec![5.0]);
        assert_eq!(arg, vec![Some(1)]);
    }

    #[test]
    fn index_map_rejects_bad_input() {
        assert!(matches!(
            IndexMap::new(vec![0, 3], vec![0, 0], 3, 1),
            Err(Error::Bounds { index: 3, .. })
        ));
        assert!(matches!(
            IndexMap::new(vec![0], vec![2], 1, 2),
            Err(Error::Bounds { index: 2, .. })
        ));
        assert!(IndexMap::new(vec![1, 1], vec![0, 0], 2, 1).is_err());
        let map = IndexMap::new(vec![0], vec![0], 2, 1).unwrap();
        assert!(accumulate_by_index(&[1.0], &map, Reducer::Sum).is_err());
    }

    #[test]
    fn reshape_keeps_linear_order() {
        let t = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = reshape(&t, &[2, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert_eq!(r.shape(), &[2, 2]);
        assert_eq!(reshape(&r, &[4]).unwrap(), t);
        let six = Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        let r = six.reshape(&[3, 2]).unwrap();
        assert_eq!(r.data(), six.data());
        assert!(six.reshape(&[4, 2]).is_err());
    }

    #[test]
    fn tensor_rejects_invalid_shapes() {
        assert!(Tensor::<f64>::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![1, 1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn linear_index_layout() {
        let d = Dims::new(2, 3, 2, 2);
        let t = Tensor::<f64>::from_fn(d, |i| i as f64);
        assert_eq!(t.at(1, 2, 0, 0), 5.0);
        assert_eq!(t.at(0, 0, 1, 0), 6.0);
        assert_eq!(t.at(0, 0, 0, 1), 12.0);
        assert_eq!(t.sample(1).unwrap().data()[0], 12.0);
    }
}
