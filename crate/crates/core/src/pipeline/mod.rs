//! Operational surface: point files, rigid pre-alignment, thread control
//! and the benchmark harness.

pub mod bench;
pub mod io;
pub mod procrustes;

pub use bench::{run_benchmark_suite, run_case, BenchmarkRecord, BenchmarkSuite, CaseSpec};
pub use io::{read_momenta, read_points, write_momenta, write_points, MomentaHeader, PointFormat};
pub use procrustes::{procrustes_align, RigidTransform};

use crate::{Error, Result};

/// Environment variable capping the worker threads used inside kernel sums.
pub const THREADS_ENV: &str = "GEOSHOOT_THREADS";

/// Parses a thread-count override; `None` or empty means "all cores".
pub fn parse_thread_count(value: Option<&str>) -> Result<Option<usize>> {
    match value.map(str::trim) {
        None | Some("") => Ok(None),
        Some(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::InvalidSpec(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

/// Thread count requested through [`THREADS_ENV`].
pub fn threads_from_env() -> Result<Option<usize>> {
    parse_thread_count(std::env::var(THREADS_ENV).ok().as_deref())
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global
/// pool when `threads` is `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidSpec(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
