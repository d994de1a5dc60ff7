//! Kernel thread budget.
//!
//! `OVERSEG_THREADS` caps the number of worker threads a single kernel may
//! use. The default of 1 is the reference mode; kernels only ever split work
//! into disjoint output ranges, so other values give bit-identical results.

use std::sync::OnceLock;

pub const THREADS_ENV: &str = "OVERSEG_THREADS";

pub fn threads() -> usize {
    static THREADS: OnceLock<usize> = OnceLock::new();
    *THREADS.get_or_init(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or(1)
    })
}
