//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) the closures run on the rayon pool;
//! without it they run in order on the calling thread. Reductions always use
//! the same fixed chunking and are combined in chunk order, so results are
//! bit-identical between the two builds and independent of the thread count.
//!
//! When the current pool has a single thread the helpers also run in order on
//! the calling thread; handing work to a lone worker only adds a wake-up.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows per work item for chunked row loops.
pub const ROW_CHUNK: usize = 256;

#[cfg(feature = "parallel")]
fn spread() -> bool {
    rayon::current_num_threads() > 1
}

/// `(0..n).map(f).collect()`, possibly in parallel. Output order is index order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if spread() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Maps over a slice, preserving order.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if spread() {
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Splits `out` into consecutive blocks of `block` elements and calls
/// `f(block_index, block)` on each one.
pub fn for_each_block_mut<T, F>(out: &mut [T], block: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(block > 0);
    #[cfg(feature = "parallel")]
    if spread() {
        out.par_chunks_mut(block)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
        return;
    }
    out.chunks_mut(block)
        .enumerate()
        .for_each(|(i, chunk)| f(i, chunk));
}

/// Sums `f(start, end)` over fixed row chunks of `0..n`.
///
/// Partials are added in chunk order, so the floating-point result does not
/// depend on scheduling.
pub fn chunked_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(ROW_CHUNK);
    map_indices(chunks, |c| {
        let start = c * ROW_CHUNK;
        f(start, (start + ROW_CHUNK).min(n))
    })
    .into_iter()
    .sum()
}

/// Whether this build runs the helpers on the rayon pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        assert_eq!(map_indices(5, |i| i * i), vec![0, 1, 4, 9, 16]);
        assert_eq!(map_slice(&[3, 1, 2], |x| x + 1), vec![4, 2, 3]);
    }

    #[test]
    fn blocks_cover_everything() {
        let mut v = vec![0usize; 10];
        for_each_block_mut(&mut v, 3, |b, chunk| {
            for (k, x) in chunk.iter_mut().enumerate() {
                *x = b * 3 + k;
            }
        });
        assert_eq!(v, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn chunked_sum_matches_sequential() {
        let n = 1000;
        let s = chunked_sum(n, |a, b| (a..b).map(|i| i as f64).sum());
        assert_eq!(s, (0..n).map(|i| i as f64).sum::<f64>());
        assert_eq!(chunked_sum(0, |_, _| 1.0), 0.0);
    }
}
