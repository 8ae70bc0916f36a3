//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the [`Execution::Parallel`] path runs on rayon;
//! without it both variants run sequentially. Reductions always fold fixed-size
//! chunks in index order, so results are bit-identical across execution modes
//! and thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Items per reduction chunk. Fixed so the floating-point summation order
/// does not depend on the thread pool.
pub const REDUCE_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// True when this mode actually fans out to worker threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Order-preserving map over a slice.
pub fn map_slice<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Deterministic chunked reduction: `fold` runs sequentially inside each
/// chunk of [`REDUCE_CHUNK`] items, chunk results are then merged in order.
pub fn chunked_reduce<T, A, Z, F, M>(exec: Execution, items: &[T], zero: Z, fold: F, merge: M) -> A
where
    T: Sync,
    A: Send,
    Z: Fn() -> A + Sync + Send,
    F: Fn(A, &T) -> A + Sync + Send,
    M: Fn(A, A) -> A,
{
    let reduce_chunk = |chunk: &[T]| chunk.iter().fold(zero(), &fold);
    let partials: Vec<A> = {
        #[cfg(feature = "parallel")]
        {
            if exec.is_parallel() {
                items.par_chunks(REDUCE_CHUNK).map(reduce_chunk).collect()
            } else {
                items.chunks(REDUCE_CHUNK).map(reduce_chunk).collect()
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = exec;
            items.chunks(REDUCE_CHUNK).map(reduce_chunk).collect()
        }
    };
    partials.into_iter().fold(zero(), merge)
}
