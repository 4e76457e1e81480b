//! Worker-thread knob.
//!
//! `OPREG_THREADS` caps the pool size (the CLI applies it at startup). All
//! numeric results are defined to be thread-count invariant: parallel kernels
//! partition their output disjointly and keep a fixed per-element reduction
//! order, so this is purely a resource knob.

use std::sync::{Arc, LazyLock, RwLock};

use rayon::ThreadPool;

pub const ENV_VAR: &str = "OPREG_THREADS";

static POOL: LazyLock<RwLock<Arc<ThreadPool>>> = LazyLock::new(|| {
    let n = std::env::var(ENV_VAR)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(default_threads);
    RwLock::new(Arc::new(build_pool(n)))
});

fn default_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn build_pool(n: usize) -> ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .expect("failed to build worker pool")
}

/// Rebuild the pool with `n` workers (values < 1 are clamped to 1).
pub fn set_threads(n: usize) {
    let n = n.max(1);
    *POOL.write().unwrap() = Arc::new(build_pool(n));
}

pub fn threads() -> usize {
    POOL.read().unwrap().current_num_threads()
}

/// Run `f` inside the configured pool.
pub fn install<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let pool = Arc::clone(&POOL.read().unwrap());
    pool.install(f)
}
