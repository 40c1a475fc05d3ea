//! The round-driven simulator.

pub mod config;
pub mod engine;
pub mod report;
pub mod workload;

pub use config::{ConfigError, SimConfig};
pub use engine::{SimError, Simulation};
pub use report::{CommitteeMetrics, OracleVerdict, ReportWriter, RoundReport, Summary};
