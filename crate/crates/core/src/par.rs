//! Data-parallel helpers with a sequential fallback.
//!
//! Every parallel loop in this crate works over independently seeded units
//! (records, episodes), so the parallel and sequential paths produce
//! identical results; `jobs = 1` forces the sequential reference path.

/// Maps `f` over `0..count`, in parallel when the `parallel` feature is on.
pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

/// Like [`map_indexed`] but honoring an explicit job count; `jobs <= 1`
/// always runs sequentially.
pub fn map_indexed_jobs<T, F>(count: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if jobs <= 1 {
        return (0..count).map(f).collect();
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool");
        pool.install(|| (0..count).into_par_iter().map(f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

/// Sequential reference implementation, always available for comparison.
pub fn map_indexed_seq<T, F>(count: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..count).map(f).collect()
}
