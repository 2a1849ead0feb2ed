//! Config-driven experiment runner for the coarse-graining library.
//!
//! A flat `key = value` config selects a registry model, a coarse-graining
//! map, numerics and one of nine experiments; results land as CSVs plus a
//! summary table, and the process exit code reflects the declared
//! tolerances (0 pass, 1 tolerance failure, 2 config error, 3 divergence).

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

pub use config::{EffectiveChoice, ExperimentConfig, ExperimentKind, MapSpec};
pub use error::{CliError, CliResult};
pub use experiments::{run, stationarity_check};
pub use report::{ExperimentResult, SummaryRow};

/// Honor COARSE_FORGE_THREADS before any parallel work starts; 0 or unset
/// leaves the rayon default (one worker per core).
pub fn configure_threads_from_env() {
    if let Ok(v) = std::env::var("COARSE_FORGE_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                // Ignore the error if a global pool already exists.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
