//! Worker-count configuration shared by training and reconstruction.

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "FRINGE_THREADS";

/// Worker count from `FRINGE_THREADS`; 1 (fully serial) when unset or invalid.
pub fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}
