//! Wall-clock measurement with warmup and percentile summaries.

use std::time::{Duration, Instant};

use crate::error::{BenchError, Result};

pub const MIN_WARMUP: usize = 2;
pub const MIN_ITERS: usize = 5;

/// Environment variable naming the worker thread count. The harness only
/// runs with it unset or set to `1`.
pub const THREADS_VAR: &str = "FWA_KIT_THREADS";

/// Medians below this multiple of the timer granularity trigger a warning.
pub const RESOLUTION_FACTOR: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub iters: usize,
}

pub fn ensure_single_threaded() -> Result<()> {
    check_thread_setting(std::env::var(THREADS_VAR).ok().as_deref())
}

pub fn check_thread_setting(value: Option<&str>) -> Result<()> {
    match value.map(str::trim) {
        None | Some("1") => Ok(()),
        Some(other) => Err(BenchError::Threads(format!("{THREADS_VAR}={other:?}, only 1 is supported"))),
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn summarize(samples_ms: &[f64]) -> Timing {
    let mut sorted = samples_ms.to_vec();
    sorted.sort_by(f64::total_cmp);
    Timing {
        median_ms: percentile(&sorted, 50.0),
        p10_ms: percentile(&sorted, 10.0),
        p90_ms: percentile(&sorted, 90.0),
        iters: sorted.len(),
    }
}

/// Smallest nonzero step observed between consecutive `Instant::now` calls.
pub fn timer_granularity() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..64 {
        let start = Instant::now();
        let mut now = Instant::now();
        while now == start {
            now = Instant::now();
        }
        best = best.min(now - start);
    }
    best
}

/// Runs `f` `warmup` times untimed, then `iters` times timed.
pub fn measure<F>(warmup: usize, iters: usize, mut f: F) -> Result<Timing>
where
    F: FnMut() -> Result<()>,
{
    if warmup < MIN_WARMUP || iters < MIN_ITERS {
        return Err(BenchError::Plan(format!(
            "need warmup >= {MIN_WARMUP} and iters >= {MIN_ITERS}, got {warmup} and {iters}"
        )));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        f()?;
        // Clamp so a sub-resolution run still reports a positive time.
        samples.push((start.elapsed().as_secs_f64() * 1e3).max(1e-6));
    }
    Ok(summarize(&samples))
}

/// Warns on stderr when a median is too close to the timer resolution to trust.
pub fn warn_if_unresolved(label: &str, timing: &Timing, granularity: Duration) {
    let grain_ms = granularity.as_secs_f64() * 1e3;
    if timing.median_ms < RESOLUTION_FACTOR * grain_ms {
        eprintln!(
            "warning: {label}: median {:.6} ms is under {RESOLUTION_FACTOR}x the timer granularity ({grain_ms:.6} ms)",
            timing.median_ms
        );
    }
}
