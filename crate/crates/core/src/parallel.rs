//! Worker-count control.
//!
//! All parallel stages run on the ambient rayon pool, so wrapping a call in
//! [`with_threads`] pins its worker count. Results never depend on it.

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "QI2_THREADS";

/// Worker cap from `QI2_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
}

/// Runs `f` on a dedicated pool with `threads` workers (or the rayon
/// default when `None`).
pub fn with_threads<R, F>(threads: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(e) => {
                log::warn!("could not build a {t}-thread pool ({e}); using the global pool");
                f()
            }
        },
        None => f(),
    }
}
