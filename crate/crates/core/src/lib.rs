//! Per-instance algorithm configuration: learn a performance map over
//! (instance features, configuration) with a Gaussian-kernel SVR, then search
//! the configuration space for the predicted best setting.

pub mod clock;
pub mod configspace;
pub mod cssp;
pub mod dataset;
pub mod evaluate;
pub mod features;
pub mod modelsel;
pub mod svr;

#[cfg(feature = "runner")]
pub mod collect;
#[cfg(feature = "runner")]
pub mod pipeline;
#[cfg(feature = "runner")]
pub mod synth;

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
/// Results keep index order.
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Runs `f` with at most `jobs` worker threads (0 keeps the default pool).
pub fn with_threads<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    {
        if jobs > 0 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                return pool.install(f);
            }
        }
        f()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        f()
    }
}
