//! Per-thread arithmetic-op counter and live tensor byte tracker.
//!
//! Kernels report their own cost with [`add_ops`]; tensor buffers report
//! allocation and release. Both are thread-local so concurrent tests and
//! per-sample workers never see each other's numbers.

use std::cell::Cell;

thread_local! {
    static OPS: Cell<u64> = const { Cell::new(0) };
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

#[inline]
pub fn add_ops(n: u64) {
    OPS.with(|c| c.set(c.get().wrapping_add(n)));
}

pub fn ops() -> u64 {
    OPS.with(|c| c.get())
}

pub fn reset_ops() {
    OPS.with(|c| c.set(0));
}

/// Runs `f` and returns its result with the number of ops it counted.
pub fn count_ops<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = ops();
    let out = f();
    (out, ops().wrapping_sub(before))
}

pub(crate) fn on_alloc(bytes: usize) {
    LIVE.with(|live| {
        let now = live.get() + bytes;
        live.set(now);
        PEAK.with(|p| {
            if now > p.get() {
                p.set(now)
            }
        });
    });
}

pub(crate) fn on_free(bytes: usize) {
    // Buffers may be released on a different thread than they were made on.
    LIVE.with(|live| live.set(live.get().saturating_sub(bytes)));
}

pub fn live_bytes() -> usize {
    LIVE.with(|c| c.get())
}

pub fn peak_bytes() -> usize {
    PEAK.with(|c| c.get())
}

/// Resets the peak to the current live size.
pub fn reset_peak() {
    let live = live_bytes();
    PEAK.with(|p| p.set(live));
}
