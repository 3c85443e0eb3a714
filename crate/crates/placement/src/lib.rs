//! Packs interactive sessions onto cluster nodes.
//!
//! Each session requests CPU and memory and may need a GPU. Nodes may carry
//! taints that a session must tolerate. A GPU node hosts at most
//! [`GPU_SESSION_CAP`] GPU sessions, whatever its capacities say.

mod io;
mod plan;
mod spec;
mod verify;

pub use io::{load_nodes, load_plan, load_session, load_sessions, parse_records};
pub use plan::{capacity_report, plan, PlacementPlan, Policy, Unplaced, UnplacedReason};
pub use spec::{validate, NodeSpec, SessionSpec};
pub use verify::{verify, Violation};

use thiserror::Error;

/// GPU sessions allowed on one GPU node.
pub const GPU_SESSION_CAP: usize = 2;

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
}
