//! Initial conditions, the periodic Ewald oracle and scripted scenarios.

mod accuracy;
mod energy;
mod ewald;
mod ic;
mod scenario;

use thiserror::Error;

pub use accuracy::{force_errors, ForceErrors};
pub use energy::{kinetic_energy, potential_energy};
pub use ewald::{ewald_force, EwaldParams, MAX_EWALD_N};
pub use ic::{generate_ic, IcKind};
pub use scenario::{
    force_accuracy_errors, latency_sweep_comm, metric_check, overhead_config, run_scenario, sparse_ratios, two_to_one_trace,
    Assertion, ConvergenceTrace, ScenarioReport, SCENARIOS,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown initial-condition kind {0:?}")]
    UnknownIcKind(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("{n} particles exceeds the oracle limit of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("bad argument: {0}")]
    BadArgument(String),
    #[error(transparent)]
    Run(#[from] crate::orchestrator::RunError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
