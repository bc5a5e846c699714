//! Data-parallel helpers with a sequential fallback.
//!
//! Results always come back in input order, so any reduction the caller
//! performs over them is independent of thread scheduling. Without the
//! `parallel` feature every [`Execution`] runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this build can actually run work in parallel.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// `f(i)` for `i in 0..n`, collected in index order.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// `f(i, item)` over a slice, collected in slice order.
pub fn map_slice<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Send + Sync,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        _ => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}

/// `f(chunk_index, chunk)` over fixed-size chunks, collected in chunk order.
/// Chunk boundaries depend only on `chunk_size`, never on the thread count.
pub fn map_chunks<T, R, F>(exec: Execution, items: &[T], chunk_size: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Send + Sync,
{
    let chunk_size = chunk_size.max(1);
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items
            .par_chunks(chunk_size)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect(),
        _ => items.chunks(chunk_size).enumerate().map(|(i, c)| f(i, c)).collect(),
    }
}
