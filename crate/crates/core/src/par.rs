//! Index-ordered fan-out with a sequential fallback.
//!
//! With the `parallel` feature, work runs on a rayon pool; without it (or with
//! `parallelism == 1`) it runs in a plain loop. Output order always matches
//! input order, so results do not depend on scheduling.

/// Maps `f` over `0..n`.
///
/// `parallelism`: `1` forces sequential execution, `0` uses rayon's global
/// pool, any other value runs on a dedicated pool of that many threads.
pub fn map_indexed<T, F>(n: usize, parallelism: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if parallelism == 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    parallel_map(n, parallelism, f)
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(n: usize, parallelism: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;

    if parallelism == 0 {
        return (0..n).into_par_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
    {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        // pool creation only fails on OS thread limits; fall back to the global pool
        Err(_) => (0..n).into_par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(n: usize, _parallelism: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Whether this build can actually fan out.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
