//! Device-side connector.
//!
//! A duct opens one outbound websocket to the bridge and mirrors configured
//! topics and services between the local graph and the remote one. It never
//! listens for connections. When the link drops it buffers local traffic,
//! backs off, reconnects and re-registers everything.
//!
//! [`DuctCore`] holds all protocol and reconnection logic without doing any
//! I/O; [`spawn`] runs it over a real websocket.

mod config;
mod core;
mod driver;

pub use crate::config::{BackoffPolicy, DuctConfig, TopicRule};
pub use crate::core::{
    sync_frames, DuctAction, DuctCore, LinkCounters, Phase, TopicCounters, Transmit,
};
pub use driver::{spawn, DuctHandle};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DuctError {
    #[error("invalid duct configuration: {0}")]
    ConfigInvalid(String),
    #[error("bridge rejected the duct's credentials")]
    AuthFailure,
}
