//! Index-ordered parallel map over replicas.
//!
//! Every replica derives its randomness from its own index, and results are
//! returned in index order, so the output does not depend on the number of
//! worker threads.

use rayon::prelude::*;

/// Evaluate `f(0..n)` on `threads` workers (`0` = all cores, `1` = inline).
pub fn run_indexed<T, F>(threads: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if threads == 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if threads > 0 {
        builder = builder.num_threads(threads);
    }
    match builder.build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(_) => (0..n).map(f).collect(),
    }
}

/// Fallible variant; on failure returns the error of the lowest failing index.
pub fn try_run_indexed<T, E, F>(threads: usize, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    run_indexed(threads, n, f).into_iter().collect()
}
