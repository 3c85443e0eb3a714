//! Cloud-side websocket bridge.
//!
//! Every peer (device ducts and cloud tools alike) connects to one TCP port
//! and is routed by websocket path, `/bridge/<route>`. Each route fronts a
//! message graph; isolated routes get a private graph, the others share one.
//!
//! [`Bridge`] is the transport-independent core and can be driven directly,
//! for example by a simulated link. [`serve`] runs it behind a real listener.

mod core;
mod route;
mod server;
mod tls;

pub use crate::core::{
    Bridge, BridgeConfig, ConnId, ConnectionRecord, Outgoing, SubscriptionRecord, TopicStats,
};
pub use route::{route_name, Route, PATH_PREFIX};
pub use server::{serve, ServerConfig, ServerHandle, DEFAULT_PORT};
pub use tls::TlsFiles;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no route serves path {0:?}")]
    UnknownRoute(String),
    #[error("unknown connection {0}")]
    UnknownConnection(ConnId),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: std::net::SocketAddr,
        source: std::io::Error,
    },
    #[error("tls setup failed: {0}")]
    Tls(String),
}
