//! Worker-pool sizing. `FGA_THREADS` caps parallelism; otherwise all
//! available cores are used.

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "FGA_THREADS";

pub fn thread_count() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n >= 1 => n,
        _ => available,
    }
}

/// A dedicated pool so the cap holds regardless of rayon's global pool.
pub fn pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}
