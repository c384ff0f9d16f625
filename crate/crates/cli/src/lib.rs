//! Scenario runner for metric variations preserving a Riemannian submersion.

pub mod config;
pub mod report;
pub mod suites;

pub use config::{ScenarioConfig, Suite};
pub use report::{Check, RunReport};
pub use suites::{list_models, profile_table, run_scenario};

/// Caps the global rayon pool at `SUBVAR_THREADS` when set.
pub fn init_threads() -> Result<(), subvar_core::Error> {
    let Ok(v) = std::env::var("SUBVAR_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| subvar_core::Error::Invalid(format!("SUBVAR_THREADS must be a positive integer, got '{v}'")))?;
    if n == 0 {
        return Err(subvar_core::Error::Invalid("SUBVAR_THREADS must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| subvar_core::Error::Invalid(e.to_string()))
}
