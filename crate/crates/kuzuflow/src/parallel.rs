//! Optional within-batch parallelism.
//!
//! Work is always split into fixed-size sample chunks ([`CHUNK`]) and partial
//! results are combined in chunk order, so the floating-point summation tree
//! is identical whether chunks run sequentially or on a thread pool. Thread
//! count therefore never changes output bits; `0` (the default) keeps
//! everything on the calling thread.

use std::sync::atomic::{AtomicUsize, Ordering};

/// Samples per work unit. Fixed: changing it changes reduction trees.
pub const CHUNK: usize = 16;

static THREADS: AtomicUsize = AtomicUsize::new(0);

/// Sets the worker thread count for batched operations. `0` = sequential.
pub fn set_threads(n: usize) {
    THREADS.store(n, Ordering::Relaxed);
    if n > 1 {
        // First call wins; later calls fail harmlessly once the pool exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

pub fn threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

/// Runs `f(chunk_index, sample_range)` over `ceil(n / CHUNK)` chunks and
/// returns the per-chunk results in chunk order.
pub fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, std::ops::Range<usize>) -> T + Sync,
{
    let ranges: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(CHUNK)
        .map(|start| start..(start + CHUNK).min(n))
        .collect();
    if threads() > 1 {
        use rayon::prelude::*;
        ranges
            .into_par_iter()
            .enumerate()
            .map(|(i, r)| f(i, r))
            .collect()
    } else {
        ranges.into_iter().enumerate().map(|(i, r)| f(i, r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_results_keep_order() {
        let out = map_chunks(40, |i, r| (i, r.start, r.end));
        assert_eq!(out, vec![(0, 0, 16), (1, 16, 32), (2, 32, 40)]);
    }
}
