//! Multi-head attention operators.
//!
//! * [`fwa_attention`]: queries attend to a short key sequence produced by
//!   [`fawa_aggregate`], re-projected by a per-layer 1×1 map into keys and
//!   values, with ReLU weighting ([`drelu`]) in place of softmax. The
//!   aggregated sequence can be carried between stacked layers in a
//!   [`KeyCache`] so aggregation runs once per block.
//! * [`mhsa_baseline`]: standard softmax self-attention, quadratic in `N`.
//! * [`pooled_key_attention_baseline`]: softmax attention against keys and
//!   values pooled to a fixed token count.
//!
//! Heads split the channel axis into contiguous `head_dim` slices. Score
//! matrices are formed one `(batch, head)` pair at a time.

use serde::Serialize;

use crate::counters;
use crate::error::{Error, Result};
use crate::fawa::{fawa_aggregate, pool_aggregate_baseline, PatchGeometry, TokenBatch};
use crate::layers::{Linear, Parameters};
use crate::tensor::{gemm_acc, softmax_in_place, transpose_2d, Tensor};

pub const DEFAULT_DP: f32 = 0.5;
pub const DEFAULT_EPS: f32 = 1e-6;
pub const DEFAULT_HEADS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FwaConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub dp: f32,
    pub eps: f32,
    pub geometry: PatchGeometry,
}

impl FwaConfig {
    pub fn new(model_dim: usize, heads: usize, geometry: PatchGeometry) -> Result<Self> {
        if heads == 0 || !model_dim.is_multiple_of(heads) {
            return Err(Error::Divisibility { op: "FwaConfig model_dim", value: model_dim, divisor: heads });
        }
        let cfg = Self { heads, head_dim: model_dim / heads, dp: DEFAULT_DP, eps: DEFAULT_EPS, geometry };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_dp(mut self, dp: f32, eps: f32) -> Result<Self> {
        self.dp = dp;
        self.eps = eps;
        self.validate()?;
        Ok(self)
    }

    pub fn model_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 {
            return Err(Error::Config("heads and head_dim must be positive".into()));
        }
        if !self.dp.is_finite() || !self.eps.is_finite() || self.dp + self.eps <= 0.0 {
            return Err(Error::Config(format!("dp + eps must be positive, got {} + {}", self.dp, self.eps)));
        }
        self.geometry.validate()
    }
}

/// What a cached aggregation is valid for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheFingerprint {
    pub geometry: PatchGeometry,
    pub batch: usize,
    pub channels: usize,
}

impl CacheFingerprint {
    fn of(tokens: &TokenBatch) -> Self {
        Self { geometry: tokens.geometry(), batch: tokens.batch(), channels: tokens.channels() }
    }

    fn describe(&self) -> String {
        let g = self.geometry;
        format!(
            "batch {} × {} channels on {}×{} (patch {}×{}, fold {})",
            self.batch, self.channels, g.feat_h, g.feat_w, g.patch_w, g.patch_l, g.fold
        )
    }
}

/// Aggregated key sequence shared by the stacked layers of one block.
#[derive(Debug, Clone)]
pub struct KeyCache {
    aggregated: Tensor,
    fingerprint: CacheFingerprint,
}

impl KeyCache {
    /// Runs [`fawa_aggregate`] on `tokens` and stores the result.
    pub fn build(tokens: &TokenBatch) -> Result<Self> {
        Ok(Self { aggregated: fawa_aggregate(tokens)?, fingerprint: CacheFingerprint::of(tokens) })
    }

    pub fn aggregated(&self) -> &Tensor {
        &self.aggregated
    }

    pub fn fingerprint(&self) -> CacheFingerprint {
        self.fingerprint
    }

    pub fn check(&self, tokens: &TokenBatch) -> Result<()> {
        let found = CacheFingerprint::of(tokens);
        if found != self.fingerprint {
            return Err(Error::CacheMismatch { expected: self.fingerprint.describe(), found: found.describe() });
        }
        Ok(())
    }
}

/// `relu(x) / ((dp + eps) · key_len)`, elementwise over a score tensor whose
/// last axis has length `key_len`.
pub fn drelu(scores: &Tensor, key_len: usize, cfg: &FwaConfig) -> Result<Tensor> {
    if key_len == 0 {
        return Err(Error::DegenerateInput("key length must be positive".into()));
    }
    if scores.shape().last() != Some(&key_len) {
        return Err(Error::ShapeMismatch { op: "drelu", lhs: scores.shape().to_vec(), rhs: vec![key_len] });
    }
    let inv = drelu_factor(key_len, cfg);
    Ok(scores.map(|v| v.max(0.0) * inv))
}

fn drelu_factor(key_len: usize, cfg: &FwaConfig) -> f32 {
    1.0 / ((cfg.dp + cfg.eps) * key_len as f32)
}

#[derive(Debug, Clone)]
pub struct FwaWeights {
    /// `D → D` query projection.
    pub query: Linear,
    /// `D → 2D` 1×1 map over aggregated tokens, split into keys then values.
    pub key_value: Linear,
}

impl FwaWeights {
    pub fn init(model_dim: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        Self {
            query: Linear::init_unit(model_dim, model_dim, rng),
            key_value: Linear::init_unit(model_dim, 2 * model_dim, rng),
        }
    }
}

impl Parameters for FwaWeights {
    fn param_count(&self) -> usize {
        self.query.param_count() + self.key_value.param_count()
    }
}

#[derive(Debug, Clone)]
pub struct MhsaWeights {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

impl MhsaWeights {
    pub fn init(model_dim: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        Self {
            query: Linear::init_unit(model_dim, model_dim, rng),
            key: Linear::init_unit(model_dim, model_dim, rng),
            value: Linear::init_unit(model_dim, model_dim, rng),
        }
    }
}

impl Parameters for MhsaWeights {
    fn param_count(&self) -> usize {
        self.query.param_count() + self.key.param_count() + self.value.param_count()
    }
}

#[derive(Debug, Clone, Copy)]
enum Weighting {
    Softmax,
    Relu { factor: f32 },
}

/// Copies channels `[head·hd, (head+1)·hd)` of every token of one batch item.
fn gather_head(x: &[f32], tokens: usize, dim: usize, head: usize, hd: usize, out: &mut Vec<f32>) {
    out.clear();
    for t in 0..tokens {
        out.extend_from_slice(&x[t * dim + head * hd..t * dim + (head + 1) * hd]);
    }
}

/// Core of every operator here: `weights(Q·Kᵀ/√hd) · V` per head.
///
/// `q` is `[B, N, D]`, `k` and `v` are `[B, n, D]`. Returns `[B, N, D]`.
fn multi_head(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, weighting: Weighting) -> Result<Tensor> {
    let (batch, n_q, dim) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let n_k = k.shape()[1];
    if k.shape() != v.shape() || k.shape()[0] != batch || k.shape()[2] != dim {
        return Err(Error::ShapeMismatch { op: "attention", lhs: q.shape().to_vec(), rhs: k.shape().to_vec() });
    }
    if heads == 0 || dim % heads != 0 {
        return Err(Error::Divisibility { op: "attention heads", value: dim, divisor: heads });
    }
    let hd = dim / heads;
    let scale = 1.0 / (hd as f32).sqrt();

    let mut out = Tensor::zeros(&[batch, n_q, dim]);
    let mut scores = Tensor::zeros(&[n_q, n_k]);
    let (mut q_h, mut k_h, mut v_h) = (Vec::new(), Vec::new(), Vec::new());
    let mut k_t = vec![0.0f32; hd * n_k];
    let mut o_h = vec![0.0f32; n_q * hd];
    for b in 0..batch {
        let q_b = &q.data()[b * n_q * dim..(b + 1) * n_q * dim];
        let k_b = &k.data()[b * n_k * dim..(b + 1) * n_k * dim];
        let v_b = &v.data()[b * n_k * dim..(b + 1) * n_k * dim];
        for h in 0..heads {
            gather_head(q_b, n_q, dim, h, hd, &mut q_h);
            gather_head(k_b, n_k, dim, h, hd, &mut k_h);
            gather_head(v_b, n_k, dim, h, hd, &mut v_h);
            transpose_2d(&k_h, &mut k_t, n_k, hd);

            let s = scores.data_mut();
            s.fill(0.0);
            gemm_acc(n_q, hd, n_k, &q_h, &k_t, s);
            counters::record_score_macs(n_q * n_k * hd);
            match weighting {
                Weighting::Softmax => {
                    for row in s.chunks_exact_mut(n_k) {
                        for x in row.iter_mut() {
                            *x *= scale;
                        }
                        softmax_in_place(row);
                    }
                }
                Weighting::Relu { factor } => {
                    let f = scale * factor;
                    for x in s.iter_mut() {
                        *x = x.max(0.0) * f;
                    }
                }
            }

            o_h.fill(0.0);
            gemm_acc(n_q, n_k, hd, s, &v_h, &mut o_h);
            let out_b = &mut out.data_mut()[b * n_q * dim..(b + 1) * n_q * dim];
            for (t, row) in o_h.chunks_exact(hd).enumerate() {
                out_b[t * dim + h * hd..t * dim + (h + 1) * hd].copy_from_slice(row);
            }
        }
    }
    Ok(out)
}

/// Scaled scores `Q·Kᵀ/√hd` for every head, `[B, heads, N, n]`.
pub fn scaled_scores(q: &Tensor, k: &Tensor, heads: usize) -> Result<Tensor> {
    if q.rank() != 3 || k.rank() != 3 || q.shape()[0] != k.shape()[0] || q.shape()[2] != k.shape()[2] {
        return Err(Error::ShapeMismatch { op: "scaled_scores", lhs: q.shape().to_vec(), rhs: k.shape().to_vec() });
    }
    let (batch, n_q, dim) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let n_k = k.shape()[1];
    if heads == 0 || dim % heads != 0 {
        return Err(Error::Divisibility { op: "attention heads", value: dim, divisor: heads });
    }
    let hd = dim / heads;
    let scale = 1.0 / (hd as f32).sqrt();
    let mut out = Tensor::zeros(&[batch, heads, n_q, n_k]);
    let (mut q_h, mut k_h) = (Vec::new(), Vec::new());
    let mut k_t = vec![0.0f32; hd * n_k];
    for b in 0..batch {
        for h in 0..heads {
            gather_head(&q.data()[b * n_q * dim..(b + 1) * n_q * dim], n_q, dim, h, hd, &mut q_h);
            gather_head(&k.data()[b * n_k * dim..(b + 1) * n_k * dim], n_k, dim, h, hd, &mut k_h);
            transpose_2d(&k_h, &mut k_t, n_k, hd);
            let dst = &mut out.data_mut()[(b * heads + h) * n_q * n_k..(b * heads + h + 1) * n_q * n_k];
            gemm_acc(n_q, hd, n_k, &q_h, &k_t, dst);
            for x in dst.iter_mut() {
                *x *= scale;
            }
        }
    }
    Ok(out)
}

/// Fast window attention over `query_tokens`.
///
/// Without a cache the key sequence is aggregated from `query_tokens` and a
/// new cache is returned. With a cache, aggregation is skipped and the cached
/// sequence is re-projected through this layer's `key_value` map. The cache
/// must have been built for the same batch size, channel count and geometry.
pub fn fwa_attention(
    query_tokens: &TokenBatch,
    cfg: &FwaConfig,
    cache: Option<&KeyCache>,
    weights: &FwaWeights,
) -> Result<(Tensor, KeyCache)> {
    cfg.validate()?;
    if query_tokens.geometry() != cfg.geometry {
        return Err(Error::Geometry(format!(
            "token geometry {:?} differs from configured {:?}",
            query_tokens.geometry(),
            cfg.geometry
        )));
    }
    let dim = cfg.model_dim();
    if query_tokens.channels() != dim {
        return Err(Error::ShapeMismatch {
            op: "fwa_attention",
            lhs: query_tokens.tokens().shape().to_vec(),
            rhs: vec![dim],
        });
    }
    let cache = match cache {
        Some(c) => {
            c.check(query_tokens)?;
            c.clone()
        }
        None => KeyCache::build(query_tokens)?,
    };

    let q = weights.query.forward(query_tokens.tokens())?;
    let kv = weights.key_value.forward(cache.aggregated())?;
    let mut halves = kv.chunk(-1, 2)?.into_iter();
    let (k, v) = (halves.next().unwrap(), halves.next().unwrap());
    let factor = drelu_factor(k.shape()[1], cfg);
    let out = multi_head(&q, &k, &v, cfg.heads, Weighting::Relu { factor })?;
    Ok((out, cache))
}

/// Standard softmax multi-head self-attention.
pub fn mhsa_baseline(tokens: &Tensor, heads: usize, weights: &MhsaWeights) -> Result<Tensor> {
    if tokens.rank() != 3 {
        return Err(Error::InvalidShape {
            op: "mhsa_baseline",
            shape: tokens.shape().to_vec(),
            reason: "expected [batch, tokens, channels]".into(),
        });
    }
    if heads == 0 || !tokens.shape()[2].is_multiple_of(heads) {
        return Err(Error::Divisibility { op: "mhsa heads", value: tokens.shape()[2], divisor: heads });
    }
    let q = weights.query.forward(tokens)?;
    let k = weights.key.forward(tokens)?;
    let v = weights.value.forward(tokens)?;
    multi_head(&q, &k, &v, heads, Weighting::Softmax)
}

/// Softmax attention whose keys and values come from `agent_tokens` pooled tokens.
pub fn pooled_key_attention_baseline(
    tokens: &TokenBatch,
    agent_tokens: usize,
    heads: usize,
    weights: &MhsaWeights,
) -> Result<Tensor> {
    if heads == 0 || !tokens.channels().is_multiple_of(heads) {
        return Err(Error::Divisibility { op: "pooled-key heads", value: tokens.channels(), divisor: heads });
    }
    let pooled = pool_aggregate_baseline(tokens, agent_tokens)?;
    let q = weights.query.forward(tokens.tokens())?;
    let k = weights.key.forward(&pooled)?;
    let v = weights.value.forward(&pooled)?;
    multi_head(&q, &k, &v, heads, Weighting::Softmax)
}

/// Score multiply-accumulates of one FWA call: `B · heads · N · n · head_dim`.
pub fn fwa_score_macs(batch: usize, cfg: &FwaConfig) -> u64 {
    (batch * cfg.heads * cfg.geometry.num_tokens() * cfg.geometry.key_len() * cfg.head_dim) as u64
}

/// Score multiply-accumulates of one self-attention call: `B · N² · D`.
pub fn mhsa_score_macs(batch: usize, tokens: usize, model_dim: usize) -> u64 {
    (batch * tokens * tokens * model_dim) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(side: usize, dim: usize, heads: usize, fold: usize) -> FwaConfig {
        FwaConfig::new(dim, heads, PatchGeometry::square(side, fold).unwrap()).unwrap()
    }

    #[test]
    fn drelu_hand_values() {
        let c = cfg(4, 4, 1, 1).with_dp(0.5, 1e-6).unwrap();
        let s = Tensor::new(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        let y = drelu(&s, 3, &c).unwrap();
        let expect = [1.0 / 1.500003, 0.0, 3.0 / 1.500003];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
        assert!((y.data()[0] - 0.6667).abs() < 1e-4 && (y.data()[2] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn drelu_all_negative_is_zero() {
        let c = cfg(4, 4, 1, 1);
        let y = drelu(&Tensor::new(&[4], vec![-1.0, -0.5, -3.0, 0.0]).unwrap(), 4, &c).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn drelu_reduces_to_mean_scaling() {
        let c = cfg(4, 4, 1, 1).with_dp(1.0, 0.0).unwrap();
        let y = drelu(&Tensor::new(&[4], vec![4.0, -1.0, 2.0, 8.0]).unwrap(), 4, &c).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0, 0.5, 2.0]);
    }

    #[test]
    fn drelu_errors() {
        let c = cfg(4, 4, 1, 1);
        assert!(drelu(&Tensor::zeros(&[3]), 0, &c).is_err());
        assert!(drelu(&Tensor::zeros(&[3]), 4, &c).is_err());
        assert!(cfg(4, 4, 1, 1).with_dp(0.0, 0.0).is_err());
    }

    #[test]
    fn config_divisibility() {
        assert!(FwaConfig::new(10, 4, PatchGeometry::square(4, 1).unwrap()).is_err());
    }

    #[test]
    fn zero_queries_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = cfg(4, 8, 2, 1);
        let mut w = FwaWeights::init(8, &mut rng);
        w.query.weight.data_mut().fill(0.0);
        let tokens = TokenBatch::new(Tensor::randn(&[2, 16, 8], 1.0, 1), c.geometry).unwrap();
        let (out, _) = fwa_attention(&tokens, &c, None, &w).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cache_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = cfg(4, 8, 2, 1);
        let w = FwaWeights::init(8, &mut rng);
        let a = TokenBatch::new(Tensor::randn(&[2, 16, 8], 1.0, 1), c.geometry).unwrap();
        let b = TokenBatch::new(Tensor::randn(&[1, 16, 8], 1.0, 2), c.geometry).unwrap();
        let (_, cache) = fwa_attention(&a, &c, None, &w).unwrap();
        let err = fwa_attention(&b, &c, Some(&cache), &w).unwrap_err();
        assert!(matches!(err, Error::CacheMismatch { .. }));
    }

    #[test]
    fn cache_skips_aggregation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = cfg(8, 8, 2, 2);
        let w = FwaWeights::init(8, &mut rng);
        let x = TokenBatch::new(Tensor::randn(&[1, 64, 8], 1.0, 1), c.geometry).unwrap();
        counters::reset();
        let (_, cache) = fwa_attention(&x, &c, None, &w).unwrap();
        fwa_attention(&x, &c, Some(&cache), &w).unwrap();
        assert_eq!(counters::snapshot().fawa_calls, 1);
    }

    #[test]
    fn mhsa_single_token_is_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = MhsaWeights::init(8, &mut rng);
        let x = Tensor::randn(&[2, 1, 8], 1.0, 6);
        let out = mhsa_baseline(&x, 2, &w).unwrap();
        assert!(out.max_abs_diff(&w.value.forward(&x).unwrap()) < 1e-6);
    }

    #[test]
    fn mhsa_identical_tokens() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = MhsaWeights::init(8, &mut rng);
        let row = Tensor::randn(&[8], 1.0, 7);
        let x = Tensor::from_fn(&[1, 6, 8], |i| row.data()[i % 8]);
        let out = mhsa_baseline(&x, 4, &w).unwrap();
        for t in 1..6 {
            assert_eq!(&out.data()[t * 8..(t + 1) * 8], &out.data()[..8]);
        }
    }

    #[test]
    fn mhsa_divisibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = MhsaWeights::init(6, &mut rng);
        assert!(mhsa_baseline(&Tensor::zeros(&[1, 3, 6]), 4, &w).is_err());
    }

    #[test]
    fn pooled_key_identity_pool_equals_mhsa() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = MhsaWeights::init(8, &mut rng);
        let g = PatchGeometry::square(4, 1).unwrap();
        let x = Tensor::randn(&[2, 16, 8], 1.0, 9);
        let a = pooled_key_attention_baseline(&TokenBatch::new(x.clone(), g).unwrap(), 16, 2, &w).unwrap();
        let b = mhsa_baseline(&x, 2, &w).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-5);
    }

    #[test]
    fn pooled_key_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = MhsaWeights::init(8, &mut rng);
        let g = PatchGeometry::square(8, 1).unwrap();
        let out = pooled_key_attention_baseline(&TokenBatch::new(Tensor::ones(&[1, 64, 8]), g).unwrap(), 4, 4, &w)
            .unwrap();
        for t in 1..64 {
            assert_eq!(&out.data()[t * 8..(t + 1) * 8], &out.data()[..8]);
        }
    }

    #[test]
    fn score_counters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = cfg(8, 8, 2, 2);
        let w = FwaWeights::init(8, &mut rng);
        let x = TokenBatch::new(Tensor::randn(&[3, 64, 8], 1.0, 1), c.geometry).unwrap();
        counters::reset();
        fwa_attention(&x, &c, None, &w).unwrap();
        assert_eq!(counters::snapshot().score_macs, fwa_score_macs(3, &c));

        let mw = MhsaWeights::init(8, &mut rng);
        counters::reset();
        mhsa_baseline(x.tokens(), 2, &mw).unwrap();
        assert_eq!(counters::snapshot().score_macs, mhsa_score_macs(3, 64, 8));
    }
}
