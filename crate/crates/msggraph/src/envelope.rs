use crate::{TopicName, Value};

/// One message as seen by a subscriber.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageEnvelope {
    pub topic: TopicName,
    /// Opaque schema tag, fixed per topic once advertised.
    pub type_name: String,
    /// Per-publisher sequence number, starting at 1.
    pub seq: u64,
    /// Nanoseconds since the scenario epoch, read from the graph clock.
    pub stamp_ns: u64,
    /// Identifies the publisher handle within its graph.
    pub publisher_id: u64,
    pub payload: Value,
}
