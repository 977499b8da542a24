//! Scenario runner for the entanglement-based QKD pipeline.
//!
//! A [`config::ScenarioConfig`] describes the source, channel, protocol and
//! weather of a run. [`run::run_scenario`] simulates the detections and runs
//! Alice and Bob as two parties over a framed session, producing frame
//! statistics, reconciled blocks and the final secure key of each side.

pub mod analyze;
pub mod calibrate;
pub mod config;
pub mod error;
pub mod feed;
pub mod party;
pub mod run;

pub use config::ScenarioConfig;
pub use error::AppError;
pub use run::{run_scenario, RunOptions, RunResult, TransportKind};
