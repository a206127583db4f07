//! Command-line tool and editor service for stitching Gaussian splatting
//! fields. The CLI and the service share [`pipeline`], so identical inputs
//! give identical outputs from either.

pub mod cli;
pub mod pipeline;
pub mod server;
pub mod session;
pub mod worker;

pub const THREADS_ENV: &str = "GSSTITCH_THREADS";

/// Caps rayon's worker count from `GSSTITCH_THREADS`. Returns the cap when
/// one was applied.
pub fn init_threads() -> Option<usize> {
    let raw = std::env::var(THREADS_ENV).ok()?;
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            Ok(()) => Some(n),
            Err(e) => {
                log::warn!("{THREADS_ENV}: thread pool already initialized ({e})");
                None
            }
        },
        _ => {
            log::warn!("{THREADS_ENV}={raw:?} is not a positive integer; ignoring");
            None
        }
    }
}
