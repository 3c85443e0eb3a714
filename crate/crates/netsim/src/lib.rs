//! Impaired transport between a device-side client and the cloud-side
//! server: latency, uniform jitter, a bandwidth cap, per-frame failure
//! probability and scheduled or random outages.
//!
//! The link is FIFO in each direction and runs off a [`SimClock`]. In virtual
//! mode time moves only when [`SimLink::step`] (or the clock) is advanced, so a
//! profile, a seed and a send trace fully determine what arrives when.

mod clock;
mod link;
mod profile;
mod schedule;

pub use clock::{ClockMode, SimClock};
pub use link::{
    attach, ConnectError, FrameFate, FrameMeta, LinkCounters, LinkEndpoint, NetEvent,
    NetEventKind, SendError, Side, SimLink, TraceRecord,
};
pub use profile::{LinkProfile, ProfileError};
pub use schedule::{DisconnectSchedule, Outage, RandomOutages};

pub const NS_PER_MS: u64 = 1_000_000;

pub fn ms_to_ns(ms: f64) -> u64 {
    (ms * NS_PER_MS as f64).round().max(0.0) as u64
}
