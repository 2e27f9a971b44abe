//! Per-thread instrumentation counters.
//!
//! Counters are thread-local so that concurrently running tests and
//! benchmarks never observe each other's work. Every tensor allocation is
//! reported here, which gives a deterministic high-water mark of live tensor
//! bytes independent of the system allocator.

use std::cell::Cell;

thread_local! {
    static FAWA_CALLS: Cell<u64> = const { Cell::new(0) };
    static FAWA_ELEMENTS: Cell<u64> = const { Cell::new(0) };
    static SCORE_MACS: Cell<u64> = const { Cell::new(0) };
    static LIVE_BYTES: Cell<u64> = const { Cell::new(0) };
    static PEAK_BYTES: Cell<u64> = const { Cell::new(0) };
}

/// A snapshot of the calling thread's counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    /// Number of window-aggregation invocations.
    pub fawa_calls: u64,
    /// Input elements read by window aggregation (debug builds only).
    pub fawa_elements: u64,
    /// Multiply-accumulates spent forming attention score matrices.
    pub score_macs: u64,
    /// Bytes held by live tensors.
    pub live_bytes: u64,
    /// High-water mark of `live_bytes` since the last peak reset.
    pub peak_bytes: u64,
}

pub fn snapshot() -> Counters {
    Counters {
        fawa_calls: FAWA_CALLS.get(),
        fawa_elements: FAWA_ELEMENTS.get(),
        score_macs: SCORE_MACS.get(),
        live_bytes: LIVE_BYTES.get(),
        peak_bytes: PEAK_BYTES.get(),
    }
}

/// Zeroes the operation counters and restarts peak tracking from the current
/// live byte count. Live bytes are never reset.
pub fn reset() {
    FAWA_CALLS.set(0);
    FAWA_ELEMENTS.set(0);
    SCORE_MACS.set(0);
    reset_peak();
}

pub fn reset_peak() {
    PEAK_BYTES.set(LIVE_BYTES.get());
}

pub(crate) fn record_fawa_call() {
    FAWA_CALLS.set(FAWA_CALLS.get() + 1);
}

#[cfg_attr(not(debug_assertions), allow(dead_code))]
pub(crate) fn record_fawa_elements(n: usize) {
    FAWA_ELEMENTS.set(FAWA_ELEMENTS.get() + n as u64);
}

pub(crate) fn record_score_macs(n: usize) {
    SCORE_MACS.set(SCORE_MACS.get() + n as u64);
}

pub(crate) fn track_alloc(bytes: usize) {
    let live = LIVE_BYTES.get() + bytes as u64;
    LIVE_BYTES.set(live);
    if live > PEAK_BYTES.get() {
        PEAK_BYTES.set(live);
    }
}

pub(crate) fn track_free(bytes: usize) {
    LIVE_BYTES.set(LIVE_BYTES.get().saturating_sub(bytes as u64));
}
