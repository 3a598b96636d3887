//! Work distribution with reproducible results.
//!
//! With the `parallel` feature the map helpers fan out over rayon; without
//! it they run in place. Both paths hand results back in input order, and
//! every reduction here folds sequentially over those ordered results in
//! fixed-size chunks, so the same inputs give bit-identical floats no
//! matter how many threads did the work.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk width shared by every deterministic reduction.
pub const CHUNK: usize = 32;

#[cfg(feature = "parallel")]
pub fn map_collect_mut<T, U>(items: &mut [T], f: impl Fn(&mut T) -> U + Send + Sync) -> Vec<U>
where
    T: Send,
    U: Send,
{
    items.par_iter_mut().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect_mut<T, U>(items: &mut [T], f: impl Fn(&mut T) -> U) -> Vec<U> {
    items.iter_mut().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_range<U>(n: usize, f: impl Fn(usize) -> U + Send + Sync) -> Vec<U>
where
    U: Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<U>(n: usize, f: impl Fn(usize) -> U) -> Vec<U> {
    (0..n).map(f).collect()
}

/// Single-threaded twin of `map_collect_mut`, kept for benchmarking the
/// parallel path against a like-for-like baseline.
pub fn map_collect_mut_seq<T, U>(items: &mut [T], f: impl Fn(&mut T) -> U) -> Vec<U> {
    items.iter_mut().map(f).collect()
}

/// Single-threaded twin of `map_range`.
pub fn map_range_seq<U>(n: usize, f: impl Fn(usize) -> U) -> Vec<U> {
    (0..n).map(f).collect()
}

/// Sums in fixed chunks: chunk subtotals first, then their ordered total.
pub fn chunked_sum(values: &[f64]) -> f64 {
    values
        .chunks(CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .sum()
}
