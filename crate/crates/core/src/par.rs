//! Data-parallel helpers.
//!
//! With the `parallel` feature these dispatch to rayon; without it they run
//! the same closures in order. Every helper returns results in input order and
//! never reorders floating-point reductions, so both builds are bit-identical.

/// Number of pixels handled per work item in per-pixel loops. Fixed so chunk
/// boundaries (and therefore partial-sum order) do not depend on thread count.
pub const PIXEL_CHUNK: usize = 4096;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
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

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Applies `f(chunk_index, chunk)` to consecutive `chunk`-sized pieces of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Zips two equally chunked slices and maps each chunk pair, preserving order.
pub fn map_chunks_zip<A, B, R, F>(a: &[A], b: &mut [B], chunk_a: usize, chunk_b: usize, f: F) -> Vec<R>
where
    A: Sync,
    B: Send,
    R: Send,
    F: Fn(&[A], &mut [B]) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        a.par_chunks(chunk_a)
            .zip(b.par_chunks_mut(chunk_b))
            .map(|(x, y)| f(x, y))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        a.chunks(chunk_a)
            .zip(b.chunks_mut(chunk_b))
            .map(|(x, y)| f(x, y))
            .collect()
    }
}
