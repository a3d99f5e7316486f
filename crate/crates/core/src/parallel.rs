//! Task-level data parallelism.
//!
//! Results always come back in task-index order, so any reduction done by
//! the caller over them is independent of scheduling.

/// Evaluates `f(0..n)`, on the rayon pool when `parallel` is set and the
/// `parallel` feature is compiled in, sequentially otherwise.
pub fn map_tasks<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallel;
    (0..n).map(f).collect()
}

/// Whether the crate was built with rayon support.
pub const fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
