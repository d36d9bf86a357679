//! Reproducible experiments over Markov shift towers: configuration,
//! runners with file outputs, and the acceptance suite.

pub mod acceptance;
pub mod config;
pub mod experiments;
pub mod output;

use thiserror::Error;

pub use config::{Experiment, ExperimentConfig};
pub use experiments::{run_experiment, Check, Outcome};

/// Exit status for a run whose checks all passed.
pub const EXIT_PASS: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "TOWERLAB_WORKERS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

/// Independent seed for a named sub-experiment (splitmix64 finalizer).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)) & (i64::MAX as u64)
}

/// Runs `f` on a pool of `workers` threads (all cores when `None`).
/// Results never depend on the count.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::Config("workers must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(pool.install(f))
}
