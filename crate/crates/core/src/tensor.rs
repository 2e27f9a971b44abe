//! Dense row-major `f32` tensors and the handful of operations the attention
//! and backbone code is built from.
//!
//! Every operation materializes its result; there are no strided views.
//! Allocations are reported to [`crate::counters`] so benchmarks can observe
//! the peak number of live tensor bytes.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::counters;
use crate::error::{Error, Result};

pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidShape {
                op: "Tensor::new",
                shape: shape.to_vec(),
                reason: "axis sizes must be positive".into(),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                op: "Tensor::new",
                shape: shape.to_vec(),
                reason: format!("expected {numel} elements, got {}", data.len()),
            });
        }
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        counters::track_alloc(data.len() * std::mem::size_of::<f32>());
        Self { shape, data }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; numel])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    /// Builds a tensor by evaluating `f` at every flat (row-major) index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f32) -> Self {
        let numel: usize = shape.iter().product();
        Self::from_parts(shape.to_vec(), (0..numel).map(f).collect())
    }

    pub fn randn(shape: &[usize], std: f32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::randn_with(shape, std, &mut rng)
    }

    pub fn randn_with(shape: &[usize], std: f32, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0f32, std).expect("std must be finite and non-negative");
        Self::from_fn(shape, |_| normal.sample(rng))
    }

    /// Samples uniformly from `[low, high)`.
    pub fn rand_uniform(shape: &[usize], low: f32, high: f32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new(low, high).expect("low < high");
        Self::from_fn(shape, |_| dist.sample(&mut rng))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn size_bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f32>()
    }

    pub fn into_vec(mut self) -> Vec<f32> {
        let data = std::mem::take(&mut self.data);
        counters::track_free(data.len() * std::mem::size_of::<f32>());
        data
    }

    /// Resolves a possibly negative axis index.
    fn axis(&self, op: &'static str, axis: isize) -> Result<usize> {
        let rank = self.rank() as isize;
        let resolved = if axis < 0 { axis + rank } else { axis };
        if resolved < 0 || resolved >= rank {
            return Err(Error::InvalidShape {
                op,
                shape: self.shape.clone(),
                reason: format!("axis {axis} out of range"),
            });
        }
        Ok(resolved as usize)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let mut t = self;
        t.shape = shape.to_vec();
        Ok(t)
    }

    /// Swaps two axes, materializing the permuted data.
    pub fn transpose(&self, a: isize, b: isize) -> Result<Tensor> {
        let a = self.axis("transpose", a)?;
        let b = self.axis("transpose", b)?;
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        perm.swap(a, b);
        Ok(self.permute_unchecked(&perm))
    }

    fn permute_unchecked(&self, perm: &[usize]) -> Tensor {
        let rank = self.rank();
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let in_strides = strides(&self.shape);
        // Stride in the source for each output axis.
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();

        // Fast path: the innermost two axes are swapped on a batch of matrices.
        if rank >= 2 && perm[..rank - 2].iter().enumerate().all(|(i, &p)| i == p) && perm[rank - 2] == rank - 1 {
            let rows = self.shape[rank - 2];
            let cols = self.shape[rank - 1];
            let batch = self.numel() / (rows * cols);
            let mut out = vec![0.0f32; self.numel()];
            for bi in 0..batch {
                let src = &self.data[bi * rows * cols..(bi + 1) * rows * cols];
                let dst = &mut out[bi * rows * cols..(bi + 1) * rows * cols];
                transpose_2d(src, dst, rows, cols);
            }
            return Tensor::from_parts(out_shape, out);
        }

        let mut out = Vec::with_capacity(self.numel());
        let mut index = vec![0usize; rank];
        let mut offset = 0usize;
        for _ in 0..self.numel() {
            out.push(self.data[offset]);
            for ax in (0..rank).rev() {
                index[ax] += 1;
                offset += src_strides[ax];
                if index[ax] < out_shape[ax] {
                    break;
                }
                offset -= src_strides[ax] * out_shape[ax];
                index[ax] = 0;
            }
        }
        Tensor::from_parts(out_shape, out)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Splits along `axis` into `parts` equally sized tensors.
    pub fn chunk(&self, axis: isize, parts: usize) -> Result<Vec<Tensor>> {
        let axis = self.axis("chunk", axis)?;
        let len = self.shape[axis];
        if parts == 0 || !len.is_multiple_of(parts) {
            return Err(Error::Divisibility { op: "chunk", value: len, divisor: parts });
        }
        let piece = len / parts;
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut shape = self.shape.clone();
        shape[axis] = piece;
        Ok((0..parts)
            .map(|p| {
                let mut data = Vec::with_capacity(outer * piece * inner);
                for o in 0..outer {
                    let start = (o * len + p * piece) * inner;
                    data.extend_from_slice(&self.data[start..start + piece * inner]);
                }
                Tensor::from_parts(shape.clone(), data)
            })
            .collect())
    }

    /// Concatenates along an existing axis. Inverse of [`Tensor::chunk`].
    pub fn cat(tensors: &[Tensor], axis: isize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::DegenerateInput("cat of zero tensors".into()))?;
        let axis = first.axis("cat", axis)?;
        for t in tensors {
            let same_rank = t.rank() == first.rank();
            let same_other = same_rank
                && t.shape.iter().zip(&first.shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same_other {
                return Err(Error::ShapeMismatch {
                    op: "cat",
                    lhs: first.shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total: usize = tensors.iter().map(|t| t.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for t in tensors {
                let block = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Tensor::from_parts(shape, data))
    }

    /// Stacks equally shaped tensors along a new axis inserted at `axis`.
    pub fn stack(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::DegenerateInput("stack of zero tensors".into()))?;
        if axis > first.rank() {
            return Err(Error::InvalidShape {
                op: "stack",
                shape: first.shape.clone(),
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut expanded = first.shape.clone();
        expanded.insert(axis, 1);
        let views = tensors
            .iter()
            .map(|t| {
                if t.shape != first.shape {
                    return Err(Error::ShapeMismatch {
                        op: "stack",
                        lhs: first.shape.clone(),
                        rhs: t.shape.clone(),
                    });
                }
                t.clone().reshape(&expanded)
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::cat(&views, axis as isize)
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_lastdim(&self) -> Tensor {
        let cols = *self.shape.last().expect("rank >= 1");
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(cols) {
            softmax_in_place(row);
        }
        out
    }

    /// Layer normalization over the last axis with per-feature scale and shift.
    pub fn layer_norm_lastdim(&self, scale: &[f32], shift: &[f32], eps: f32) -> Result<Tensor> {
        let cols = *self.shape.last().expect("rank >= 1");
        if scale.len() != cols || shift.len() != cols {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape.clone(),
                rhs: vec![scale.len()],
            });
        }
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(cols) {
            let mean = row.iter().sum::<f32>() / cols as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / cols as f32;
            let inv = 1.0 / (var + eps).sqrt();
            for ((v, g), b) in row.iter_mut().zip(scale).zip(shift) {
                *v = (*v - mean) * inv * g + b;
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        Tensor::from_parts(self.shape.clone(), self.data.clone())
    }
}

impl Drop for Tensor {
    fn drop(&mut self) {
        counters::track_free(self.data.len() * std::mem::size_of::<f32>());
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        let head = &self.data[..self.data.len().min(PREVIEW)];
        write!(f, "Tensor{:?} {:?}", self.shape, head)?;
        if self.data.len() > PREVIEW {
            write!(f, "..")?;
        }
        Ok(())
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

pub(crate) fn transpose_2d(src: &[f32], dst: &mut [f32], rows: usize, cols: usize) {
    const TILE: usize = 32;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// `out[m×p] += a[m×k] · b[k×p]`, all row-major.
pub(crate) fn gemm_acc(m: usize, k: usize, p: usize, a: &[f32], b: &[f32], out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(out.len(), m * p);
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(p)) {
        for (&a_ik, b_row) in a_row.iter().zip(b.chunks_exact(p)) {
            for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                *o += a_ik * b_kj;
            }
        }
    }
}

/// Batched matrix product over the last two axes with leading-axis broadcasting.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mismatch = || Error::ShapeMismatch { op: "matmul", lhs: a.shape.clone(), rhs: b.shape.clone() };
    if a.rank() < 2 || b.rank() < 2 {
        return Err(mismatch());
    }
    let (m, k) = (a.shape[a.rank() - 2], a.shape[a.rank() - 1]);
    let (k2, p) = (b.shape[b.rank() - 2], b.shape[b.rank() - 1]);
    if k != k2 {
        return Err(mismatch());
    }

    let a_batch = &a.shape[..a.rank() - 2];
    let b_batch = &b.shape[..b.rank() - 2];
    let rank = a_batch.len().max(b_batch.len());
    let pad = |s: &[usize]| {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (a_batch, b_batch) = (pad(a_batch), pad(b_batch));
    let mut batch = Vec::with_capacity(rank);
    for (&x, &y) in a_batch.iter().zip(&b_batch) {
        match (x, y) {
            _ if x == y => batch.push(x),
            (1, _) => batch.push(y),
            (_, 1) => batch.push(x),
            _ => return Err(mismatch()),
        }
    }

    let n_batch: usize = batch.iter().product();
    let a_strides = strides(&a_batch);
    let b_strides = strides(&b_batch);
    let mut out = vec![0.0f32; n_batch * m * p];
    let mut index = vec![0usize; rank];
    for bi in 0..n_batch {
        let mut rem = bi;
        for ax in (0..rank).rev() {
            index[ax] = rem % batch[ax];
            rem /= batch[ax];
        }
        let a_off: usize = (0..rank).map(|ax| if a_batch[ax] == 1 { 0 } else { index[ax] * a_strides[ax] }).sum();
        let b_off: usize = (0..rank).map(|ax| if b_batch[ax] == 1 { 0 } else { index[ax] * b_strides[ax] }).sum();
        gemm_acc(
            m,
            k,
            p,
            &a.data[a_off * m * k..(a_off + 1) * m * k],
            &b.data[b_off * k * p..(b_off + 1) * k * p],
            &mut out[bi * m * p..(bi + 1) * m * p],
        );
    }
    let mut shape = batch;
    shape.extend([m, p]);
    Ok(Tensor::from_parts(shape, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2dParams {
    /// Stride 1, dense, "same" padding for kernel size `k`.
    pub fn same(k: usize) -> Self {
        Self { stride: 1, padding: k / 2, groups: 1 }
    }
}

/// 2D cross-correlation. `x` is `[B, C, H, W]`, `w` is `[O, C/groups, k, k]`.
pub fn conv2d(x: &Tensor, w: &Tensor, params: Conv2dParams) -> Result<Tensor> {
    let mismatch = || Error::ShapeMismatch { op: "conv2d", lhs: x.shape.clone(), rhs: w.shape.clone() };
    if x.rank() != 4 || w.rank() != 4 {
        return Err(mismatch());
    }
    let [b, c, h, wd] = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
    let [o, cg, k, k2] = [w.shape[0], w.shape[1], w.shape[2], w.shape[3]];
    let Conv2dParams { stride, padding, groups } = params;
    if groups == 0 || c % groups != 0 {
        return Err(Error::Divisibility { op: "conv2d channels", value: c, divisor: groups });
    }
    if o % groups != 0 {
        return Err(Error::Divisibility { op: "conv2d output channels", value: o, divisor: groups });
    }
    if cg != c / groups || k != k2 {
        return Err(mismatch());
    }
    if k % 2 == 0 {
        return Err(Error::InvalidShape { op: "conv2d", shape: w.shape.clone(), reason: "kernel size must be odd".into() });
    }
    if stride == 0 || h + 2 * padding < k || wd + 2 * padding < k {
        return Err(mismatch());
    }
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (wd + 2 * padding - k) / stride + 1;
    let og = o / groups;
    let mut out = vec![0.0f32; b * o * oh * ow];

    let pointwise = k == 1 && stride == 1 && padding == 0;
    let depthwise = cg == 1 && og == 1;
    let mut cols = Vec::new();
    for bi in 0..b {
        for g in 0..groups {
            let x_g = &x.data[(bi * c + g * cg) * h * wd..(bi * c + (g + 1) * cg) * h * wd];
            let w_g = &w.data[g * og * cg * k * k..(g + 1) * og * cg * k * k];
            let out_g = &mut out[(bi * o + g * og) * oh * ow..(bi * o + (g + 1) * og) * oh * ow];
            if pointwise {
                gemm_acc(og, cg, oh * ow, w_g, x_g, out_g);
            } else if depthwise {
                depthwise_plane(x_g, w_g, out_g, h, wd, k, stride, padding, oh, ow);
            } else {
                im2col(x_g, cg, h, wd, k, stride, padding, oh, ow, &mut cols);
                gemm_acc(og, cg * k * k, oh * ow, w_g, &cols, out_g);
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, o, oh, ow], out))
}

#[allow(clippy::too_many_arguments)]
fn depthwise_plane(
    x: &[f32],
    w: &[f32],
    out: &mut [f32],
    h: usize,
    wd: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) {
    for oy in 0..oh {
        for ky in 0..k {
            let iy = (oy * stride + ky) as isize - pad as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let x_row = &x[iy as usize * wd..(iy as usize + 1) * wd];
            let out_row = &mut out[oy * ow..(oy + 1) * ow];
            for kx in 0..k {
                let wv = w[ky * k + kx];
                for (ox, o) in out_row.iter_mut().enumerate() {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix >= 0 && (ix as usize) < wd {
                        *o += wv * x_row[ix as usize];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    channels: usize,
    h: usize,
    wd: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut Vec<f32>,
) {
    cols.clear();
    cols.resize(channels * k * k * oh * ow, 0.0);
    for ci in 0..channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < wd {
                            dst[oy * ow + ox] = x[(ci * h + iy as usize) * wd + ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adaptive average pooling of `[B, C, H, W]` to `[B, C, out_h, out_w]`.
/// Requires the output grid to divide the input evenly.
pub fn adaptive_avg_pool2d(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(Error::InvalidShape { op: "adaptive_avg_pool2d", shape: x.shape.clone(), reason: "expected rank 4".into() });
    }
    let [b, c, h, w] = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
    if out_h == 0 || h % out_h != 0 {
        return Err(Error::Divisibility { op: "adaptive_avg_pool2d height", value: h, divisor: out_h });
    }
    if out_w == 0 || w % out_w != 0 {
        return Err(Error::Divisibility { op: "adaptive_avg_pool2d width", value: w, divisor: out_w });
    }
    let (kh, kw) = (h / out_h, w / out_w);
    let inv = 1.0 / (kh * kw) as f32;
    let mut out = vec![0.0f32; b * c * out_h * out_w];
    for (plane, out_plane) in x.data.chunks_exact(h * w).zip(out.chunks_exact_mut(out_h * out_w)) {
        for y in 0..h {
            let out_row = &mut out_plane[(y / kh) * out_w..(y / kh + 1) * out_w];
            for (xi, v) in plane[y * w..(y + 1) * w].iter().enumerate() {
                out_row[xi / kw] += v;
            }
        }
        for v in out_plane.iter_mut() {
            *v *= inv;
        }
    }
    Ok(Tensor::from_parts(vec![b, c, out_h, out_w], out))
}
