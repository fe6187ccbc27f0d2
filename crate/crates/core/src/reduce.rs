//! Deterministic floating-point reductions.
//!
//! All sums over voxels go through these helpers so that results are
//! bit-identical regardless of how many rayon workers are active: work is
//! split into fixed-size blocks (a compile-time constant, never derived from
//! the thread count), each block is accumulated left to right, and the block
//! partials are combined pairwise in block order.

use rayon::prelude::*;

/// Number of elements per accumulation block.
pub(crate) const BLOCK: usize = 4096;

const PAIRWISE_BASE: usize = 16;

/// Pairwise (cascade) sum with a fixed split, independent of thread count.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BASE {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Sum of `f(k)` for `k in 0..n`, parallel over fixed-size blocks.
pub(crate) fn blocked_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let nblocks = n.div_ceil(BLOCK);
    let partials: Vec<f64> = (0..nblocks)
        .into_par_iter()
        .map(|b| {
            let start = b * BLOCK;
            let end = (start + BLOCK).min(n);
            let mut acc = 0.0;
            for k in start..end {
                acc += f(k);
            }
            acc
        })
        .collect();
    pairwise_sum(&partials)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_sequential_on_small_input() {
        let xs: Vec<f64> = (0..10).map(|k| k as f64).collect();
        assert_eq!(pairwise_sum(&xs), 45.0);
    }

    #[test]
    fn blocked_sum_is_identical_across_thread_counts() {
        let xs: Vec<f64> = (0..100_000)
            .map(|k| ((k * 2654435761_usize) % 1000) as f64 * 1e-3 + 1e-9)
            .collect();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| blocked_sum(xs.len(), |k| xs[k] * xs[k]))
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one.to_bits(), four.to_bits());
    }

    #[test]
    fn blocked_sum_of_nothing_is_zero() {
        assert_eq!(blocked_sum(0, |_| 1.0), 0.0);
    }
}
