//! Declarative scenarios: the ACC model, configuration, orchestration and
//! trace/plot output.

pub mod acc;
pub mod config;
pub mod plot;
pub mod run;
pub mod trace;

pub use config::{MethodChoice, ModelConfig, ScenarioConfig};
pub use run::{prepare, run_scenario, simulate, ExitStatus, PreparedScenario, RunSummary, ScenarioOutcome, Trace};
