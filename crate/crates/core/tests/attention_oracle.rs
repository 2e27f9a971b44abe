//! Attention operators against naive double-precision references.

use fwa_core::attention::{fwa_score_macs, mhsa_score_macs};
use fwa_core::counters;
use fwa_core::layers::Linear;
use fwa_core::{
    drelu, fawa_aggregate, fwa_attention, mhsa_baseline, pool_aggregate_baseline, pooled_key_attention_baseline,
    FwaConfig, FwaWeights, KeyCache, MhsaWeights, PatchGeometry, Tensor, TokenBatch,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

fn rows(t: &Tensor, batch: usize) -> Mat {
    let (n, d) = (t.shape()[1], t.shape()[2]);
    (0..n).map(|i| t.data()[(batch * n + i) * d..(batch * n + i + 1) * d].iter().map(|&v| v as f64).collect()).collect()
}

fn linear_ref(x: &Mat, lin: &Linear) -> Mat {
    let (i_dim, o_dim) = (lin.in_dim(), lin.out_dim());
    x.iter()
        .map(|row| {
            (0..o_dim)
                .map(|o| {
                    lin.bias.data()[o] as f64
                        + (0..i_dim).map(|i| row[i] * lin.weight.data()[i * o_dim + o] as f64).sum::<f64>()
                })
                .collect()
        })
        .collect()
}

enum Weighting {
    Softmax,
    Relu { dp: f64, eps: f64 },
}

fn attention_ref(q: &Mat, k: &Mat, v: &Mat, heads: usize, weighting: &Weighting) -> Mat {
    let d = q[0].len();
    let hd = d / heads;
    let mut out = vec![vec![0.0; d]; q.len()];
    for h in 0..heads {
        let cols = h * hd..(h + 1) * hd;
        for (qi, q_row) in q.iter().enumerate() {
            let mut w: Vec<f64> = k
                .iter()
                .map(|k_row| cols.clone().map(|c| q_row[c] * k_row[c]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            match weighting {
                Weighting::Softmax => {
                    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = w.iter().map(|s| (s - max).exp()).sum();
                    w.iter_mut().for_each(|s| *s = (*s - max).exp() / z);
                }
                Weighting::Relu { dp, eps } => {
                    let len = k.len() as f64;
                    w.iter_mut().for_each(|s| *s = s.max(0.0) / ((dp + eps) * len));
                }
            }
            for c in cols.clone() {
                out[qi][c] = w.iter().zip(v).map(|(wj, v_row)| wj * v_row[c]).sum();
            }
        }
    }
    out
}

fn max_diff(t: &Tensor, batch: usize, expect: &Mat) -> f64 {
    let got = rows(t, batch);
    got.iter().flatten().zip(expect.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[test]
fn mhsa_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let w = MhsaWeights::init(8, &mut rng);
    let x = Tensor::randn(&[1, 5, 8], 1.0, 22);
    let out = mhsa_baseline(&x, 1, &w).unwrap();
    let xr = rows(&x, 0);
    let expect = attention_ref(
        &linear_ref(&xr, &w.query),
        &linear_ref(&xr, &w.key),
        &linear_ref(&xr, &w.value),
        1,
        &Weighting::Softmax,
    );
    assert!(max_diff(&out, 0, &expect) < 1e-4);

    let out = mhsa_baseline(&x, 4, &w).unwrap();
    let expect = attention_ref(
        &linear_ref(&xr, &w.query),
        &linear_ref(&xr, &w.key),
        &linear_ref(&xr, &w.value),
        4,
        &Weighting::Softmax,
    );
    assert!(max_diff(&out, 0, &expect) < 1e-4);
}

#[test]
fn pooled_key_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let w = MhsaWeights::init(8, &mut rng);
    let g = PatchGeometry::square(8, 1).unwrap();
    let x = Tensor::randn(&[2, 64, 8], 1.0, 24);
    let tokens = TokenBatch::new(x.clone(), g).unwrap();
    let out = pooled_key_attention_baseline(&tokens, 4, 2, &w).unwrap();
    for b in 0..2 {
        let xr = rows(&x, b);
        // Explicit 2×2 pooling of the row-major pixel grid: 4×4 blocks.
        let mut pooled = vec![vec![0.0; 8]; 4];
        for (p, row) in xr.iter().enumerate() {
            let (y, xx) = (p / 8, p % 8);
            let cell = (y / 4) * 2 + xx / 4;
            for c in 0..8 {
                pooled[cell][c] += row[c] / 16.0;
            }
        }
        let expect = attention_ref(
            &linear_ref(&xr, &w.query),
            &linear_ref(&pooled, &w.key),
            &linear_ref(&pooled, &w.value),
            2,
            &Weighting::Softmax,
        );
        assert!(max_diff(&out, b, &expect) < 1e-4);
    }
    let _ = pool_aggregate_baseline(&tokens, 4).unwrap();
}

#[test]
fn fwa_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let g = PatchGeometry::new(8, 8, 2, 2, 1).unwrap();
    let cfg = FwaConfig::new(8, 2, g).unwrap();
    let w = FwaWeights::init(8, &mut rng);
    let x = Tensor::randn(&[2, 64, 8], 1.0, 26);
    let (out, cache) = fwa_attention(&TokenBatch::new(x.clone(), g).unwrap(), &cfg, None, &w).unwrap();
    assert_eq!(out.shape(), x.shape());
    for b in 0..2 {
        let xr = rows(&x, b);
        let keys = rows(cache.aggregated(), b);
        let kv = linear_ref(&keys, &w.key_value);
        let k: Mat = kv.iter().map(|r| r[..8].to_vec()).collect();
        let v: Mat = kv.iter().map(|r| r[8..].to_vec()).collect();
        let expect = attention_ref(&linear_ref(&xr, &w.query), &k, &v, 2, &Weighting::Relu { dp: 0.5, eps: 1e-6 });
        assert!(max_diff(&out, b, &expect) < 1e-4);
    }
}

/// With a single key token every output is `relu(q·k/√hd)/(dp+ε) · v` per head.
#[test]
fn single_key_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let g = PatchGeometry::new(4, 4, 1, 1, 4).unwrap();
    assert_eq!(g.key_len(), 1);
    let cfg = FwaConfig::new(4, 2, g).unwrap();
    let w = FwaWeights::init(4, &mut rng);
    let x = Tensor::randn(&[1, 16, 4], 1.0, 28);
    let (out, _) = fwa_attention(&TokenBatch::new(x.clone(), g).unwrap(), &cfg, None, &w).unwrap();

    let xr = rows(&x, 0);
    let mean: Vec<f64> = (0..4).map(|c| xr.iter().map(|r| r[c]).sum::<f64>() / 16.0).collect();
    let kv = &linear_ref(&[mean].to_vec(), &w.key_value)[0];
    let q = linear_ref(&xr, &w.query);
    for (i, q_row) in q.iter().enumerate() {
        for h in 0..2 {
            let score: f64 = (0..2).map(|c| q_row[h * 2 + c] * kv[h * 2 + c]).sum::<f64>() / 2f64.sqrt();
            let weight = score.max(0.0) / (0.5 + 1e-6);
            for c in 0..2 {
                let expect = weight * kv[4 + h * 2 + c];
                assert!((out.data()[i * 4 + h * 2 + c] as f64 - expect).abs() < 1e-5);
            }
        }
    }
}

/// Three stacked layers: reusing the first layer's aggregation versus
/// recomputing it from the same block input every layer.
#[test]
fn cached_stack_equals_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let g = PatchGeometry::square(16, 2).unwrap();
    let cfg = FwaConfig::new(16, 4, g).unwrap();
    let layers: Vec<FwaWeights> = (0..3).map(|_| FwaWeights::init(16, &mut rng)).collect();
    let input = TokenBatch::new(Tensor::randn(&[2, 256, 16], 1.0, 30), g).unwrap();

    counters::reset();
    let mut x = input.tokens().clone();
    let mut cache: Option<KeyCache> = None;
    for w in &layers {
        let (y, c) = fwa_attention(&input.with_tokens(x.clone()).unwrap(), &cfg, cache.as_ref(), w).unwrap();
        x.add_assign(&y).unwrap();
        cache.get_or_insert(c);
    }
    let cached_calls = counters::snapshot().fawa_calls;

    counters::reset();
    let mut z = input.tokens().clone();
    for w in &layers {
        let fresh = KeyCache::build(&input).unwrap();
        let (y, _) = fwa_attention(&input.with_tokens(z.clone()).unwrap(), &cfg, Some(&fresh), w).unwrap();
        z.add_assign(&y).unwrap();
    }
    let uncached_calls = counters::snapshot().fawa_calls;

    assert!(x.max_abs_diff(&z) <= 1e-6);
    assert_eq!((cached_calls, uncached_calls), (1, 3));
}

/// Score work grows linearly in N for FWA (key length held fixed by the fold)
/// and quadratically for self-attention.
#[test]
fn score_counters_scale_linearly_vs_quadratically() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let dim = 16;
    let mhsa_w = MhsaWeights::init(dim, &mut rng);
    let fwa_w = FwaWeights::init(dim, &mut rng);
    let mut fwa = Vec::new();
    let mut mhsa = Vec::new();
    for (side, fold) in [(16, 1), (32, 2), (64, 4)] {
        let g = PatchGeometry::square(side, fold).unwrap();
        assert_eq!(g.key_len(), 16);
        let cfg = FwaConfig::new(dim, 4, g).unwrap();
        let x = TokenBatch::new(Tensor::randn(&[1, side * side, dim], 1.0, side as u64), g).unwrap();
        counters::reset();
        fwa_attention(&x, &cfg, None, &fwa_w).unwrap();
        fwa.push(counters::snapshot().score_macs);
        assert_eq!(*fwa.last().unwrap(), fwa_score_macs(1, &cfg));
        if side <= 32 {
            counters::reset();
            mhsa_baseline(x.tokens(), 4, &mhsa_w).unwrap();
            mhsa.push(counters::snapshot().score_macs);
        } else {
            mhsa.push(mhsa_score_macs(1, side * side, dim));
        }
    }
    assert_eq!(fwa[1], 4 * fwa[0]);
    assert_eq!(fwa[2], 4 * fwa[1]);
    assert_eq!(mhsa[1], 16 * mhsa[0]);
    assert_eq!(mhsa[2], 16 * mhsa[1]);
}

#[test]
fn runs_are_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = PatchGeometry::square(8, 2).unwrap();
        let cfg = FwaConfig::new(8, 2, g).unwrap();
        let w = FwaWeights::init(8, &mut rng);
        let x = TokenBatch::new(Tensor::randn(&[1, 64, 8], 1.0, 8), g).unwrap();
        fwa_attention(&x, &cfg, None, &w).unwrap().0
    };
    assert_eq!(run(), run());
}

#[test]
fn aggregation_runs_once_per_cache() {
    let g = PatchGeometry::square(8, 1).unwrap();
    let x = TokenBatch::new(Tensor::ones(&[1, 64, 2]), g).unwrap();
    counters::reset();
    let cache = KeyCache::build(&x).unwrap();
    assert_eq!(cache.aggregated(), &fawa_aggregate(&x).unwrap());
    assert_eq!(counters::snapshot().fawa_calls, 2);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(values in prop::collection::vec(-50.0f32..50.0, 1..40)) {
        let n = values.len();
        let s = Tensor::new(&[1, n], values).unwrap().softmax_lastdim();
        prop_assert!(s.data().iter().all(|&v| v >= 0.0));
        prop_assert!((s.data().iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn drelu_keeps_argmax_and_zeros(values in prop::collection::vec(-10.0f32..10.0, 1..64), dp in 0.1f32..1.0) {
        let n = values.len();
        let cfg = FwaConfig::new(4, 1, PatchGeometry::square(4, 1).unwrap()).unwrap().with_dp(dp, 1e-6).unwrap();
        let x = Tensor::new(&[n], values.clone()).unwrap();
        let y = drelu(&x, n, &cfg).unwrap();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
        let nonpositive = values.iter().filter(|&&v| v <= 0.0).count();
        prop_assert_eq!(zeros, nonpositive);
        prop_assert!(y.data().iter().all(|&v| v >= 0.0));
        if values.iter().any(|&v| v > 0.0) {
            let argmax = |d: &[f32]| d.iter().enumerate().fold((0, f32::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc }).0;
            let max_y = y.data().iter().cloned().fold(f32::MIN, f32::max);
            // Positive scaling is monotone; rounding can only merge, never reorder.
            prop_assert_eq!(y.data()[argmax(x.relu().data())], max_y);
            prop_assert!(x.data()[argmax(y.data())] >= values[argmax(x.relu().data())] * (1.0 - 1e-6));
        }
    }
}
