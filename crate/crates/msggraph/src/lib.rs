//! In-process message graph: named topics with many publishers and
//! subscribers, optional last-value latching, and single-provider
//! request/reply services.
//!
//! The graph is the local stand-in for a robot middleware graph. The same
//! type backs the device side (fed by simulators, drained by the duct) and
//! the cloud side (owned by the bridge, one graph per isolated route).

mod clock;
mod envelope;
mod graph;
mod name;
mod service;
mod value;

pub use clock::{Clock, MonotonicClock};
pub use envelope::MessageEnvelope;
pub use graph::{
    CallbackSubscription, Graph, GraphError, GraphSnapshot, PublisherHandle, QueuePolicy,
    SubscriptionHandle, TopicInfo, TopicSpec,
};
pub use name::{NameError, TopicName};
pub use service::{PendingCall, Responder, ServiceError, ServiceHandle, ServiceRequest, ServiceSpec};
pub use value::Value;
