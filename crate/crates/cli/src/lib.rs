//! Scenario runner for the bitensor workbench: configuration checking,
//! scenario execution and report output.

pub mod config;
pub mod report;
pub mod scenario;

pub use config::{validate_config, ConfigError, ScenarioConfig, ScenarioKind};
pub use report::Report;
pub use scenario::{run_scenario, RunError};
