//! Data-parallel helpers with a sequential fallback when the `parallel`
//! feature is disabled.

#[cfg(feature = "parallel")]
mod imp {
    use rayon::prelude::*;

    pub fn map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
        if items.len() < 2 || rayon::current_num_threads() == 1 {
            return items.iter().map(f).collect();
        }
        items.par_iter().map(f).collect()
    }

    /// Runs `f` inside a pool with `workers` threads.
    pub fn run_with<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .expect("thread pool");
        pool.install(f)
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    pub fn map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
        items.iter().map(f).collect()
    }

    pub fn run_with<R: Send>(_workers: usize, f: impl FnOnce() -> R + Send) -> R {
        f()
    }
}

pub(crate) use imp::{map, run_with};
