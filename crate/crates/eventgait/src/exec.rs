use eventgait_core::model::{Executor, Sequential};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Runs per-sample work either on the calling thread or on a rayon pool.
/// Results come back in index order either way, and the core reduces them
/// in that order, so both modes compute the same values.
pub enum Exec {
    Sequential,
    Pool(rayon::ThreadPool),
}

impl Exec {
    /// One thread means sequential; zero means one per core.
    pub fn with_threads(threads: usize) -> Result<Self> {
        if threads == 1 {
            return Ok(Exec::Sequential);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map(Exec::Pool)
            .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))
    }
}

impl Executor for Exec {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => Sequential.map(n, f),
            Exec::Pool(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}
