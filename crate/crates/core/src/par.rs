//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the loops below run on the rayon pool;
//! without it they run in order on the calling thread. Reductions always
//! fold fixed-size chunks and merge the partial results in chunk order, so
//! both builds (and any thread count) produce bit-identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Minimum number of items folded into one partial accumulator.
pub const REDUCE_CHUNK: usize = 64;

/// Upper bound on partial accumulators alive at once.
pub const MAX_PARTIALS: usize = 64;

/// Chunk length used by [`chunked_fold`] for `n` items. Depends only on `n`.
pub fn chunk_len(n: usize) -> usize {
    REDUCE_CHUNK.max(n.div_ceil(MAX_PARTIALS))
}

/// Fill `out` row by row: `out[i*width..(i+1)*width]` is handed to `f(i, row)`.
pub fn fill_rows<F>(out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(width)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(width)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
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

/// Deterministic map-reduce over `0..n`.
///
/// Items are grouped into chunks of [`chunk_len`]; each chunk is folded
/// into a fresh accumulator from `init`, then the chunk accumulators are
/// merged left to right.
pub fn chunked_fold<A, I, F, M>(n: usize, init: I, fold: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize) + Sync + Send,
    M: Fn(&mut A, A),
{
    let len = chunk_len(n);
    let chunks = n.div_ceil(len);
    let partials = map_indices(chunks, |c| {
        let mut acc = init();
        let end = ((c + 1) * len).min(n);
        for i in c * len..end {
            fold(&mut acc, i);
        }
        acc
    });
    let mut total = init();
    for p in partials {
        merge(&mut total, p);
    }
    total
}

/// Threads available to the data-parallel loops.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Configure the global pool. A no-op in sequential builds.
pub fn set_threads(n: usize) {
    #[cfg(feature = "parallel")]
    if n > 0 {
        // The global pool can only be built once; later calls keep the first size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
}

/// Run `f` on a dedicated pool of `n` threads. Sequential builds just call `f`.
pub fn with_threads<R, F>(n: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        f()
    }
}
