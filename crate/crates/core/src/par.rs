//! Data-parallel helpers.
//!
//! With the `parallel` feature (on by default) the helpers fan work out over
//! the rayon pool; without it, or after [`force_sequential`], they run the
//! same closures in a plain loop. Every caller writes into disjoint output
//! slots and reduces in a fixed order, so both paths produce identical bits.

use std::sync::atomic::{AtomicBool, Ordering};

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Route all helpers through the sequential path (used by the benches).
pub fn force_sequential(on: bool) {
    SEQUENTIAL.store(on, Ordering::Relaxed);
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !SEQUENTIAL.load(Ordering::Relaxed)
}

/// Calls `f(i, chunk)` for each `chunk_len`-sized chunk of `data`.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk_len == 0 || data.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}
