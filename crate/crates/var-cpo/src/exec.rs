//! Deterministic parallel execution helpers.
//!
//! With the `parallel` feature (default) the mapping helpers fan out over
//! rayon; without it they run sequentially. Both paths produce bit-identical
//! results: maps preserve input order, and vector accumulations always split
//! the input into the same fixed-size chunks and fold the per-chunk partial
//! sums in chunk order, so the floating-point summation tree does not depend
//! on thread scheduling or on the feature flag.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by [`sum_vectors`]. Fixed so that the reduction order
/// is identical across thread counts and build features.
const SUM_CHUNK: usize = 256;

/// Maps `f` over `items`, preserving order.
pub fn map_collect<T: Sync, U: Send, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Sequential reference version of [`map_collect`], kept available in all
/// builds so benchmarks can compare the two code paths directly.
pub fn map_collect_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Maps `f` over mutable slots, preserving order. Used for stateful rollout
/// workers, each of which owns its RNG stream and environment instance.
pub fn map_mut<T: Send, U: Send, F>(items: &mut [T], f: F) -> Vec<U>
where
    F: Fn(&mut T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter_mut().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter_mut().map(f).collect()
    }
}

/// Computes `Σ_i f(i)` where each `f(i)` is a vector of length `dim`.
///
/// Indices are split into fixed chunks of [`SUM_CHUNK`]; each chunk is
/// accumulated sequentially and the chunk sums are folded in chunk order.
pub fn sum_vectors<F>(count: usize, dim: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let partials = sum_vectors_partials(count, dim, &f);
    fold_partials(partials, dim)
}

/// Sequential reference version of [`sum_vectors`]; same chunking and fold
/// order, no thread pool.
pub fn sum_vectors_seq<F>(count: usize, dim: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]),
{
    let chunks = chunk_ranges(count);
    let partials: Vec<Vec<f64>> = chunks
        .into_iter()
        .map(|range| {
            let mut acc = vec![0.0; dim];
            for i in range {
                f(i, &mut acc);
            }
            acc
        })
        .collect();
    fold_partials(partials, dim)
}

fn sum_vectors_partials<F>(count: usize, dim: usize, f: &F) -> Vec<Vec<f64>>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let chunks = chunk_ranges(count);
    #[cfg(feature = "parallel")]
    {
        chunks
            .into_par_iter()
            .map(|range| {
                let mut acc = vec![0.0; dim];
                for i in range {
                    f(i, &mut acc);
                }
                acc
            })
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        chunks
            .into_iter()
            .map(|range| {
                let mut acc = vec![0.0; dim];
                for i in range {
                    f(i, &mut acc);
                }
                acc
            })
            .collect()
    }
}

fn chunk_ranges(count: usize) -> Vec<std::ops::Range<usize>> {
    (0..count)
        .step_by(SUM_CHUNK)
        .map(|start| start..(start + SUM_CHUNK).min(count))
        .collect()
}

fn fold_partials(partials: Vec<Vec<f64>>, dim: usize) -> Vec<f64> {
    let mut total = vec![0.0; dim];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part.iter()) {
            *t += p;
        }
    }
    total
}
