//! Full-scene adaptive window aggregation.
//!
//! A token sequence serialized row-major from an `H × W` feature map is
//! compressed into a short key sequence whose length follows the feature-map
//! height. With `F = H / P_l`, token `p` belongs to residue class `p mod F`;
//! key token `i` is the mean over the `P_l` consecutive residue classes
//! starting at `i · P_l`, giving `F / P_l` base keys. A secondary `fold`
//! then averages groups of adjacent keys.
//!
//! [`pool_aggregate_baseline`] is the pooled-key alternative: restore the
//! feature map, adaptive-average-pool to a fixed grid, and re-serialize.

use serde::Serialize;

use crate::counters;
use crate::error::{Error, Result};
use crate::tensor::{adaptive_avg_pool2d, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct PatchGeometry {
    pub feat_h: usize,
    pub feat_w: usize,
    pub patch_l: usize,
    pub patch_w: usize,
    pub fold: usize,
}

impl PatchGeometry {
    pub fn new(feat_h: usize, feat_w: usize, patch_l: usize, patch_w: usize, fold: usize) -> Result<Self> {
        let geometry = Self { feat_h, feat_w, patch_l, patch_w, fold };
        geometry.validate()?;
        Ok(geometry)
    }

    /// Square map with square 1×1 patches and the given fold.
    pub fn square(side: usize, fold: usize) -> Result<Self> {
        Self::new(side, side, 1, 1, fold)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { feat_h, feat_w, patch_l, patch_w, fold } = *self;
        if [feat_h, feat_w, patch_l, patch_w, fold].contains(&0) {
            return Err(Error::Geometry(format!("all fields must be positive: {self:?}")));
        }
        if feat_h % patch_l != 0 {
            return Err(Error::Geometry(format!("feature height {feat_h} not divisible by patch length {patch_l}")));
        }
        if feat_w % patch_w != 0 {
            return Err(Error::Geometry(format!("feature width {feat_w} not divisible by patch width {patch_w}")));
        }
        let windows = feat_h / patch_l;
        if windows % patch_l != 0 {
            return Err(Error::Geometry(format!("window count {windows} not divisible by patch length {patch_l}")));
        }
        let base = windows / patch_l;
        if base % fold != 0 {
            return Err(Error::Geometry(format!("base key length {base} not divisible by fold {fold}")));
        }
        Ok(())
    }

    /// `N = H · W`, one token per pixel.
    pub fn num_tokens(&self) -> usize {
        self.feat_h * self.feat_w
    }

    /// `F = H / P_l`, the number of residue classes.
    pub fn windows(&self) -> usize {
        self.feat_h / self.patch_l
    }

    /// Key length before folding, `F / P_l`.
    pub fn base_key_len(&self) -> usize {
        self.windows() / self.patch_l
    }

    /// Final key length `n`.
    pub fn key_len(&self) -> usize {
        self.base_key_len() / self.fold
    }

    /// Same geometry with the fold lowered to the largest divisor of the base
    /// key length that does not exceed the requested fold.
    pub fn with_fitted_fold(mut self, requested: usize) -> Self {
        let base = self.base_key_len();
        self.fold = (1..=requested.max(1)).rev().find(|f| base.is_multiple_of(*f)).unwrap_or(1);
        self
    }
}

/// A serialized patch sequence `[B, N, D]` with the geometry it came from.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    tokens: Tensor,
    geometry: PatchGeometry,
}

impl TokenBatch {
    pub fn new(tokens: Tensor, geometry: PatchGeometry) -> Result<Self> {
        geometry.validate()?;
        if tokens.rank() != 3 {
            return Err(Error::InvalidShape {
                op: "TokenBatch::new",
                shape: tokens.shape().to_vec(),
                reason: "expected [batch, tokens, channels]".into(),
            });
        }
        if tokens.shape()[1] != geometry.num_tokens() {
            return Err(Error::InvalidShape {
                op: "TokenBatch::new",
                shape: tokens.shape().to_vec(),
                reason: format!(
                    "token count must equal {}×{} = {}",
                    geometry.feat_h,
                    geometry.feat_w,
                    geometry.num_tokens()
                ),
            });
        }
        Ok(Self { tokens, geometry })
    }

    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }

    pub fn geometry(&self) -> PatchGeometry {
        self.geometry
    }

    pub fn batch(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channels(&self) -> usize {
        self.tokens.shape()[2]
    }

    pub fn into_tokens(self) -> Tensor {
        self.tokens
    }

    /// Same geometry, new token values of identical shape.
    pub fn with_tokens(&self, tokens: Tensor) -> Result<Self> {
        Self::new(tokens, self.geometry)
    }
}

/// Aggregates `[B, N, D]` tokens into `[B, n, D]` key tokens.
///
/// Reads every input element exactly once: for each block of `F` consecutive
/// tokens, token `j` of the block is added into key `j / (P_l · fold)`.
pub fn fawa_aggregate(input: &TokenBatch) -> Result<Tensor> {
    counters::record_fawa_call();
    let geometry = input.geometry();
    let (batch, n_tokens, dim) = (input.batch(), input.len(), input.channels());
    let windows = geometry.windows();
    if n_tokens < windows {
        return Err(Error::DegenerateInput(format!("{n_tokens} tokens cannot fill {windows} windows")));
    }
    let key_len = geometry.key_len();
    let per_key = geometry.patch_l * geometry.fold;
    let blocks = n_tokens / windows;

    let mut out = vec![0.0f32; batch * key_len * dim];
    for (src, dst) in input
        .tokens()
        .data()
        .chunks_exact(n_tokens * dim)
        .zip(out.chunks_exact_mut(key_len * dim))
    {
        for block in src.chunks_exact(windows * dim) {
            for (j, token) in block.chunks_exact(dim).enumerate() {
                let key = &mut dst[(j / per_key) * dim..(j / per_key + 1) * dim];
                for (k, t) in key.iter_mut().zip(token) {
                    *k += t;
                }
            }
            #[cfg(debug_assertions)]
            counters::record_fawa_elements(block.len());
        }
    }
    let inv = 1.0 / (blocks * per_key) as f32;
    for v in &mut out {
        *v *= inv;
    }
    Tensor::new(&[batch, key_len, dim], out)
}

/// Side of the pooling grid for `out_tokens`, which must be a perfect square
/// whose root divides both feature-map sides.
fn pool_side(geometry: &PatchGeometry, out_tokens: usize) -> Result<usize> {
    let side = (out_tokens as f64).sqrt().round() as usize;
    if side == 0 || side * side != out_tokens {
        return Err(Error::Config(format!("pooled token count {out_tokens} is not a perfect square")));
    }
    if !geometry.feat_h.is_multiple_of(side) {
        return Err(Error::Divisibility { op: "pool height", value: geometry.feat_h, divisor: side });
    }
    if !geometry.feat_w.is_multiple_of(side) {
        return Err(Error::Divisibility { op: "pool width", value: geometry.feat_w, divisor: side });
    }
    Ok(side)
}

/// Pooled-key baseline: `[B, N, D]` → map `[B, D, H, W]` → pool → `[B, g², D]`.
pub fn pool_aggregate_baseline(input: &TokenBatch, out_tokens: usize) -> Result<Tensor> {
    let geometry = input.geometry();
    let side = pool_side(&geometry, out_tokens)?;
    let (batch, dim) = (input.batch(), input.channels());
    let map = input
        .tokens()
        .transpose(1, 2)?
        .reshape(&[batch, dim, geometry.feat_h, geometry.feat_w])?;
    let pooled = adaptive_avg_pool2d(&map, side, side)?;
    pooled.reshape(&[batch, dim, out_tokens])?.transpose(1, 2)
}

/// The square pooling grid whose token count is closest to `key_len`
/// among grids dividing both sides; ties go to the smaller grid.
pub fn matched_pool_tokens(geometry: &PatchGeometry, key_len: usize) -> usize {
    (1..=geometry.feat_h.min(geometry.feat_w))
        .filter(|g| geometry.feat_h.is_multiple_of(*g) && geometry.feat_w.is_multiple_of(*g))
        .map(|g| g * g)
        .min_by_key(|&t| (t.abs_diff(key_len), t))
        .unwrap_or(1)
}
