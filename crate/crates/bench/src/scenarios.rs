//! The three benchmark scenarios and their plans.

use fwa_core::attention::{fwa_score_macs, mhsa_score_macs, FwaConfig, FwaWeights, KeyCache, MhsaWeights};
use fwa_core::backbone::DEFAULT_FOLDS;
use fwa_core::counters;
use fwa_core::fawa::matched_pool_tokens;
use fwa_core::{
    deserialize, fawa_aggregate, fwa_attention, mhsa_baseline, pool_aggregate_baseline, pooled_key_attention_baseline,
    serialize, Patch, PatchGeometry, Tensor, TokenBatch,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{BenchError, Result};
use crate::record::{BenchRecord, Mechanism, Scenario};
use crate::timing::{self, Timing, MIN_ITERS, MIN_WARMUP};

pub const DEFAULT_HEADS: usize = 4;
pub const DEFAULT_REPEATS: [usize; 4] = [1, 2, 4, 8];
pub const DEFAULT_BASE: usize = 640;
pub const COMPLEXITY_TOKENS: [usize; 3] = [256, 1024, 4096];
pub const COMPLEXITY_DIM: usize = 64;

/// The backbone's three transformer stages sit at strides 8, 16 and 32.
const STAGE_STRIDES: [usize; 3] = [8, 16, 32];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPlan {
    pub scenario: Scenario,
    /// `[B, C, H, W]` maps, or `[B, N, D]` token shapes for the complexity sweep.
    pub shapes: Vec<Vec<usize>>,
    pub repeats: Vec<usize>,
    pub heads: usize,
    pub warmup: usize,
    pub iters: usize,
    pub seed: u64,
}

impl BenchPlan {
    pub fn attention_repeat(batch: usize) -> Self {
        Self {
            scenario: Scenario::AttentionRepeat,
            shapes: vec![vec![batch, 96, 32, 32]],
            repeats: DEFAULT_REPEATS.to_vec(),
            heads: DEFAULT_HEADS,
            warmup: MIN_WARMUP,
            iters: MIN_ITERS,
            seed: 42,
        }
    }

    /// One `[1, 96, s, s]` map per transformer stage of a `base × base` input.
    pub fn fawa_vs_pool(base: usize) -> Result<Self> {
        if base == 0 || !base.is_multiple_of(32) {
            return Err(BenchError::Plan(format!("base resolution {base} is not a positive multiple of 32")));
        }
        Ok(Self {
            scenario: Scenario::FawaVsPool,
            shapes: STAGE_STRIDES.iter().map(|s| vec![1, 96, base / s, base / s]).collect(),
            repeats: vec![1],
            heads: DEFAULT_HEADS,
            warmup: 3,
            iters: 21,
            seed: 42,
        })
    }

    pub fn complexity() -> Self {
        Self {
            scenario: Scenario::Complexity,
            shapes: COMPLEXITY_TOKENS.iter().map(|&n| vec![1, n, COMPLEXITY_DIM]).collect(),
            repeats: vec![1],
            heads: DEFAULT_HEADS,
            warmup: MIN_WARMUP,
            iters: MIN_ITERS,
            seed: 42,
        }
    }

    /// Default plan for `scenario`. `full_scale` raises the attention-repeat batch to 128.
    pub fn for_scenario(scenario: Scenario, base: usize, full_scale: bool) -> Result<Self> {
        let plan = match scenario {
            Scenario::AttentionRepeat => Self::attention_repeat(if full_scale { 128 } else { 8 }),
            Scenario::FawaVsPool => Self::fawa_vs_pool(base)?,
            Scenario::Complexity => Self::complexity(),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(BenchError::Plan(msg));
        if self.warmup < MIN_WARMUP || self.iters < MIN_ITERS {
            return fail(format!("need warmup >= {MIN_WARMUP} and iters >= {MIN_ITERS}"));
        }
        if self.shapes.is_empty() {
            return fail("no shapes".into());
        }
        if self.repeats.is_empty() || self.repeats.contains(&0) {
            return fail("repeats must be non-empty and positive".into());
        }
        if self.heads == 0 {
            return fail("heads must be positive".into());
        }
        let rank = if self.scenario == Scenario::Complexity { 3 } else { 4 };
        for shape in &self.shapes {
            if shape.len() != rank || shape.contains(&0) {
                return fail(format!("shape {shape:?} must have {rank} positive dims"));
            }
            let channels = if rank == 3 { shape[2] } else { shape[1] };
            if channels % self.heads != 0 {
                return fail(format!("{channels} channels do not split into {} heads", self.heads));
            }
        }
        if self.scenario == Scenario::Complexity {
            complexity_geometries(self)?;
        }
        Ok(())
    }
}

/// Runs `plan` after checking the thread setting.
pub fn run(plan: &BenchPlan) -> Result<Vec<BenchRecord>> {
    timing::ensure_single_threaded()?;
    plan.validate()?;
    match plan.scenario {
        Scenario::AttentionRepeat => run_attention_repeat(plan),
        Scenario::FawaVsPool => run_fawa_vs_pool(plan),
        Scenario::Complexity => run_complexity_sweep(plan),
    }
}

/// Live-byte high-water mark of one call to `f`, relative to the bytes live before it.
pub fn peak_bytes_of<T>(f: impl FnOnce() -> Result<T>) -> Result<u64> {
    let before = counters::snapshot().live_bytes;
    counters::reset_peak();
    let out = f()?;
    let peak = counters::snapshot().peak_bytes.saturating_sub(before);
    drop(out);
    Ok(peak)
}

struct Measured {
    timing: Timing,
    peak_bytes: u64,
}

fn measure_op<T>(plan: &BenchPlan, label: &str, mut f: impl FnMut() -> Result<T>) -> Result<Measured> {
    let peak_bytes = peak_bytes_of(&mut f)?;
    let timing = timing::measure(plan.warmup, plan.iters, || f().map(drop))?;
    timing::warn_if_unresolved(label, &timing, timing::timer_granularity());
    Ok(Measured { timing, peak_bytes })
}

fn record(plan: &BenchPlan, mechanism: Mechanism, shape: &[usize], repeat: usize, m: Measured) -> BenchRecord {
    BenchRecord {
        scenario: plan.scenario,
        mechanism,
        shape: shape.to_vec(),
        repeat,
        iters: m.timing.iters,
        wall_ms: m.timing.median_ms,
        wall_ms_p10: m.timing.p10_ms,
        wall_ms_p90: m.timing.p90_ms,
        peak_bytes: m.peak_bytes,
    }
}

#[derive(Debug, Clone)]
enum StackWeights {
    Fwa(Vec<FwaWeights>),
    Mhsa(Vec<MhsaWeights>),
}

/// `repeat` residual attention layers over a serialized feature map.
///
/// A forward pass serializes the map, applies `x = x + attn(x)` per layer and
/// deserializes. `FWA` aggregates keys in every layer, `FWA_cached` only in
/// the first, and `PooledKey` pools to the grid closest to the FWA key count.
#[derive(Debug, Clone)]
pub struct AttentionStack {
    mechanism: Mechanism,
    heads: usize,
    fold: usize,
    weights: StackWeights,
}

impl AttentionStack {
    pub fn new(mechanism: Mechanism, channels: usize, heads: usize, fold: usize, repeat: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = match mechanism {
            Mechanism::Fwa | Mechanism::FwaCached => {
                StackWeights::Fwa((0..repeat).map(|_| FwaWeights::init(channels, &mut rng)).collect())
            }
            Mechanism::Mhsa | Mechanism::PooledKey => {
                StackWeights::Mhsa((0..repeat).map(|_| MhsaWeights::init(channels, &mut rng)).collect())
            }
            other => return Err(BenchError::Plan(format!("{other} is not an attention mechanism"))),
        };
        Ok(Self { mechanism, heads, fold, weights })
    }

    pub fn mechanism(&self) -> Mechanism {
        self.mechanism
    }

    pub fn forward(&self, map: &Tensor) -> Result<Tensor> {
        let mut x = serialize(map, Patch::UNIT, self.fold)?;
        let geometry = x.geometry();
        match &self.weights {
            StackWeights::Fwa(layers) => {
                let cfg = FwaConfig::new(x.channels(), self.heads, geometry)?;
                let mut cache: Option<KeyCache> = None;
                for w in layers {
                    let reuse = if self.mechanism == Mechanism::FwaCached { cache.as_ref() } else { None };
                    let (y, built) = fwa_attention(&x, &cfg, reuse, w)?;
                    x = x.with_tokens(x.tokens().add(&y)?)?;
                    cache = Some(built);
                }
            }
            StackWeights::Mhsa(layers) => {
                let agents = matched_pool_tokens(&geometry, geometry.key_len());
                for w in layers {
                    let y = match self.mechanism {
                        Mechanism::PooledKey => pooled_key_attention_baseline(&x, agents, self.heads, w)?,
                        _ => mhsa_baseline(x.tokens(), self.heads, w)?,
                    };
                    x = x.with_tokens(x.tokens().add(&y)?)?;
                }
            }
        }
        Ok(deserialize(&x)?)
    }
}

pub const REPEAT_MECHANISMS: [Mechanism; 4] =
    [Mechanism::Fwa, Mechanism::FwaCached, Mechanism::Mhsa, Mechanism::PooledKey];

pub fn run_attention_repeat(plan: &BenchPlan) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::new();
    for (si, shape) in plan.shapes.iter().enumerate() {
        let map = Tensor::randn(shape, 1.0, plan.seed.wrapping_add(si as u64));
        for &repeat in &plan.repeats {
            for mechanism in REPEAT_MECHANISMS {
                let stack = AttentionStack::new(mechanism, shape[1], plan.heads, 1, repeat, plan.seed)?;
                let label = format!("{mechanism} repeat={repeat}");
                let m = measure_op(plan, &label, || stack.forward(&map))?;
                out.push(record(plan, mechanism, shape, repeat, m));
            }
        }
    }
    Ok(out)
}

/// Token batch for a `[B, C, H, W]` shape with the stage fold fitted to the map.
fn stage_tokens(shape: &[usize], fold: usize, seed: u64) -> Result<TokenBatch> {
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let geometry = PatchGeometry::new(h, w, 1, 1, 1)?.with_fitted_fold(fold);
    Ok(TokenBatch::new(Tensor::randn(&[b, h * w, c], 1.0, seed), geometry)?)
}

pub fn run_fawa_vs_pool(plan: &BenchPlan) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::new();
    for (si, shape) in plan.shapes.iter().enumerate() {
        let fold = DEFAULT_FOLDS.get(si).copied().unwrap_or(1);
        let tokens = stage_tokens(shape, fold, plan.seed.wrapping_add(si as u64))?;
        let geometry = tokens.geometry();
        let pooled = matched_pool_tokens(&geometry, geometry.key_len());
        let side = shape[2];
        let m = measure_op(plan, &format!("FAWA_op {side}x{side}"), || fawa_aggregate(&tokens).map_err(Into::into))?;
        out.push(record(plan, Mechanism::FawaOp, shape, 1, m));
        let m = measure_op(plan, &format!("Pool_op {side}x{side}"), || {
            pool_aggregate_baseline(&tokens, pooled).map_err(Into::into)
        })?;
        out.push(record(plan, Mechanism::PoolOp, shape, 1, m));
    }
    Ok(out)
}

/// Per-size geometries whose fold keeps the key length at the smallest size's.
fn complexity_geometries(plan: &BenchPlan) -> Result<Vec<PatchGeometry>> {
    let sides = plan
        .shapes
        .iter()
        .map(|s| {
            let side = (s[1] as f64).sqrt().round() as usize;
            if side * side == s[1] {
                Ok(side)
            } else {
                Err(BenchError::Plan(format!("token count {} is not a square", s[1])))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let smallest = *sides.iter().min().unwrap();
    sides
        .iter()
        .map(|&side| {
            if side % smallest != 0 {
                return Err(BenchError::Plan(format!("side {side} is not a multiple of {smallest}")));
            }
            Ok(PatchGeometry::square(side, side / smallest)?)
        })
        .collect()
}

pub fn run_complexity_sweep(plan: &BenchPlan) -> Result<Vec<BenchRecord>> {
    let geometries = complexity_geometries(plan)?;
    let mut out = Vec::new();
    for (si, (shape, geometry)) in plan.shapes.iter().zip(geometries).enumerate() {
        let dim = shape[2];
        let tokens = TokenBatch::new(Tensor::randn(shape, 1.0, plan.seed.wrapping_add(si as u64)), geometry)?;
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        let fwa_w = FwaWeights::init(dim, &mut rng);
        let mhsa_w = MhsaWeights::init(dim, &mut rng);
        let cfg = FwaConfig::new(dim, plan.heads, geometry)?;
        let n = shape[1];

        let m = measure_op(plan, &format!("FWA N={n}"), || Ok(fwa_attention(&tokens, &cfg, None, &fwa_w)?.0))?;
        out.push(record(plan, Mechanism::Fwa, shape, 1, m));
        let m = measure_op(plan, &format!("MHSA N={n}"), || Ok(mhsa_baseline(tokens.tokens(), plan.heads, &mhsa_w)?))?;
        out.push(record(plan, Mechanism::Mhsa, shape, 1, m));
    }
    Ok(out)
}

/// Analytic score multiply-accumulates for one record of the complexity sweep.
pub fn analytic_macs(plan: &BenchPlan, record: &BenchRecord) -> Result<u64> {
    let geometries = complexity_geometries(plan)?;
    let idx = plan
        .shapes
        .iter()
        .position(|s| *s == record.shape)
        .ok_or_else(|| BenchError::Plan(format!("shape {:?} is not in the plan", record.shape)))?;
    let (batch, n, dim) = (record.shape[0], record.shape[1], record.shape[2]);
    match record.mechanism {
        Mechanism::Fwa => Ok(fwa_score_macs(batch, &FwaConfig::new(dim, plan.heads, geometries[idx])?)),
        Mechanism::Mhsa => Ok(mhsa_score_macs(batch, n, dim)),
        other => Err(BenchError::Plan(format!("no analytic count for {other}"))),
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "need at least two points");
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ComplexityFit {
    pub mechanism: Mechanism,
    pub time_exponent: f64,
    pub flop_exponent: f64,
}

/// Log-log exponents of wall time and analytic score cost against token count.
pub fn fit_complexity(plan: &BenchPlan, records: &[BenchRecord]) -> Result<Vec<ComplexityFit>> {
    [Mechanism::Fwa, Mechanism::Mhsa]
        .into_iter()
        .map(|mechanism| {
            let rows: Vec<&BenchRecord> = records.iter().filter(|r| r.mechanism == mechanism).collect();
            let ns: Vec<f64> = rows.iter().map(|r| r.shape[1] as f64).collect();
            let times: Vec<f64> = rows.iter().map(|r| r.wall_ms).collect();
            let macs = rows.iter().map(|r| analytic_macs(plan, r).map(|m| m as f64)).collect::<Result<Vec<_>>>()?;
            Ok(ComplexityFit {
                mechanism,
                time_exponent: loglog_slope(&ns, &times),
                flop_exponent: loglog_slope(&ns, &macs),
            })
        })
        .collect()
}

/// Sum of medians over all records of `mechanism`.
pub fn total_median_ms(records: &[BenchRecord], mechanism: Mechanism) -> f64 {
    records.iter().filter(|r| r.mechanism == mechanism).map(|r| r.wall_ms).sum()
}

/// The record for `mechanism` at `repeat`, if present.
pub fn find(records: &[BenchRecord], mechanism: Mechanism, repeat: usize) -> Option<&BenchRecord> {
    records.iter().find(|r| r.mechanism == mechanism && r.repeat == repeat)
}
