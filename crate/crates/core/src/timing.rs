//! Shared measurement protocol: one discarded warm-up run, then the median
//! of five timed runs on a monotonic clock. The tuner and the bench
//! commands both use this, so their numbers are comparable.

use std::time::{Duration, Instant};

pub const WARMUP_RUNS: usize = 1;
pub const TIMED_RUNS: usize = 5;

/// Median of a set of durations (lower-middle element for even counts).
pub fn median(mut durations: Vec<Duration>) -> Duration {
    assert!(!durations.is_empty());
    durations.sort();
    durations[(durations.len() - 1) / 2]
}

/// Run `f` under the standard protocol and return the median duration.
pub fn median_timed<F: FnMut()>(mut f: F) -> Duration {
    for _ in 0..WARMUP_RUNS {
        f();
    }
    let runs = (0..TIMED_RUNS)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed()
        })
        .collect();
    median(runs)
}

/// Like [`median_timed`] but keeps the final run's output.
pub fn median_timed_result<T>(mut f: impl FnMut() -> T) -> (T, Duration) {
    for _ in 0..WARMUP_RUNS {
        let _ = f();
    }
    let mut runs = Vec::with_capacity(TIMED_RUNS);
    let mut out = None;
    for _ in 0..TIMED_RUNS {
        let start = Instant::now();
        out = Some(f());
        runs.push(start.elapsed());
    }
    (out.unwrap(), median(runs))
}

/// Time a single invocation, returning its result and elapsed nanoseconds.
pub fn time_once<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_nanos() as u64)
}
