//! Data-parallel helpers. With the `parallel` feature the loops run on the
//! rayon pool; without it they run sequentially with identical results.

use std::cell::Cell;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

thread_local! {
    static SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Runs `body` with every loop of this module executed sequentially on the
/// calling thread.
pub fn sequential<R>(body: impl FnOnce() -> R) -> R {
    let previous = SEQUENTIAL.with(|s| s.replace(true));
    let out = body();
    SEQUENTIAL.with(|s| s.set(previous));
    out
}

/// Maps `f` over `0..n` and collects the results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if SEQUENTIAL.with(Cell::get) {
            return (0..n).map(f).collect();
        }
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Maps `f` over contiguous chunks of `0..n` and collects one result per
/// chunk, in chunk order.
pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    let count = n.div_ceil(chunk);
    map_indexed(count, |c| f(c * chunk..((c + 1) * chunk).min(n)))
}

/// Runs `body` inside a pool capped at `threads` workers (when given).
pub fn with_threads<R: Send>(threads: Option<usize>, body: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = threads {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
                return pool.install(body);
            }
        }
        body()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        body()
    }
}

/// True when the crate was built with rayon support.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
