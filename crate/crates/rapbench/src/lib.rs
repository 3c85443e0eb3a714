//! Scenario runner for the relay stack.
//!
//! A scenario wires a simulated robot, a duct, an impaired link, a bridge and
//! a cloud-side client onto one virtual clock, runs a traffic pattern and
//! reports per-topic accounting, latency percentiles, delivered rates and the
//! robot's real-time factor.

use std::path::PathBuf;

use thiserror::Error;

pub mod report;
mod runner;
pub mod scenario;
pub mod sockets;

pub use report::{compare, Comparison, Delta, Direction, LinkReport, Percentiles, RtfPoint, RunReport, TopicReport};
pub use runner::run;
pub use scenario::{default_duct, ClientSpec, ClientSub, DuctSource, ScenarioSpec, Traffic, BULK_TOPIC};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error("{component} failed to start: {message}")]
    Startup {
        component: &'static str,
        message: String,
    },
    #[error("unreadable report: {0}")]
    Report(String),
    #[error("reports are not comparable: {0}")]
    Mismatch(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
