use std::collections::BTreeSet;
use std::path::Path;

use msggraph::TopicName;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use wirecodec::Encoding;

use crate::DuctError;

/// One mirrored topic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicRule {
    pub topic: String,
    pub type_name: String,
    /// Only used on remote-to-local rules, where the bridge is asked to
    /// throttle what it sends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throttle_rate_ms: Option<u64>,
    #[serde(default = "default_queue_length")]
    pub queue_length: u64,
    #[serde(default)]
    pub latched: bool,
}

impl TopicRule {
    pub fn new(topic: impl Into<String>, type_name: impl Into<String>) -> Self {
        Self {
            topic: topic.into(),
            type_name: type_name.into(),
            throttle_rate_ms: None,
            queue_length: default_queue_length(),
            latched: false,
        }
    }

    pub fn throttled(mut self, ms: u64) -> Self {
        self.throttle_rate_ms = Some(ms);
        self
    }

    pub fn queue(mut self, len: u64) -> Self {
        self.queue_length = len;
        self
    }

    pub fn latched(mut self) -> Self {
        self.latched = true;
        self
    }
}

/// Reconnect delays: the k-th consecutive failure waits
/// `min(initial_ms * factor^k, max_ms)` scaled by a uniform factor in
/// `1 ± jitter_fraction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackoffPolicy {
    pub initial_ms: f64,
    pub factor: f64,
    pub max_ms: f64,
    pub jitter_fraction: f64,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        Self {
            initial_ms: 200.0,
            factor: 2.0,
            max_ms: 10_000.0,
            jitter_fraction: 0.2,
        }
    }
}

impl BackoffPolicy {
    /// Delay before the next attempt, without jitter, after `failures`
    /// consecutive failures (the first failure is 1).
    pub fn base_delay_ms(&self, failures: u32) -> f64 {
        let k = failures.saturating_sub(1).min(1024) as i32;
        (self.initial_ms * self.factor.powi(k)).min(self.max_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DuctConfig {
    /// Bridge base URL, e.g. `ws://cloud.example:8443`. The route path is
    /// appended.
    pub server_url: String,
    pub route: String,
    #[serde(default)]
    pub token: String,
    #[serde(
        default = "default_encodings",
        serialize_with = "ser_encodings",
        deserialize_with = "de_encodings"
    )]
    pub encoding_pref: Vec<Encoding>,
    #[serde(default)]
    pub local_to_remote: Vec<TopicRule>,
    #[serde(default)]
    pub remote_to_local: Vec<TopicRule>,
    #[serde(default)]
    pub exposed_services: Vec<String>,
    #[serde(default)]
    pub imported_services: Vec<String>,
    #[serde(default)]
    pub reconnect: BackoffPolicy,
    /// Frames kept per topic while disconnected; older ones are dropped.
    #[serde(default = "default_queue_length")]
    pub disconnect_buffer: u64,
    /// Websocket ping interval.
    #[serde(default = "default_keepalive_ms")]
    pub keepalive_ms: u64,
    /// Limit for connecting plus the hello exchange.
    #[serde(default = "default_handshake_timeout_ms")]
    pub handshake_timeout_ms: u64,
}

fn default_queue_length() -> u64 {
    10
}

fn default_keepalive_ms() -> u64 {
    15_000
}

fn default_handshake_timeout_ms() -> u64 {
    5_000
}

fn default_encodings() -> Vec<Encoding> {
    vec![Encoding::Cbor, Encoding::Json]
}

fn ser_encodings<S: Serializer>(v: &[Encoding], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|e| e.as_str()))
}

fn de_encodings<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Encoding>, D::Error> {
    Vec::<String>::deserialize(d)?
        .iter()
        .map(|s| s.parse().map_err(serde::de::Error::custom))
        .collect()
}

impl DuctConfig {
    pub fn new(server_url: impl Into<String>, route: impl Into<String>) -> Self {
        Self {
            server_url: server_url.into(),
            route: route.into(),
            token: String::new(),
            encoding_pref: default_encodings(),
            local_to_remote: Vec::new(),
            remote_to_local: Vec::new(),
            exposed_services: Vec::new(),
            imported_services: Vec::new(),
            reconnect: BackoffPolicy::default(),
            disconnect_buffer: default_queue_length(),
            keepalive_ms: default_keepalive_ms(),
            handshake_timeout_ms: default_handshake_timeout_ms(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, DuctError> {
        let config: Self =
            toml::from_str(text).map_err(|e| DuctError::ConfigInvalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, DuctError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DuctError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Full websocket URL including the route path.
    pub fn url(&self) -> String {
        format!("{}/bridge/{}", self.server_url.trim_end_matches('/'), self.route)
    }

    pub fn token(&self) -> Option<&str> {
        (!self.token.is_empty()).then_some(self.token.as_str())
    }

    pub fn validate(&self) -> Result<(), DuctError> {
        let bad = |msg: String| Err(DuctError::ConfigInvalid(msg));
        if !(self.server_url.starts_with("ws://") || self.server_url.starts_with("wss://")) {
            return bad(format!("server_url must be ws:// or wss://, got {:?}", self.server_url));
        }
        let route_ok = !self.route.is_empty()
            && self
                .route
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !route_ok {
            return bad(format!("bad route {:?}", self.route));
        }
        if self.encoding_pref.is_empty() {
            return bad("encoding_pref is empty".into());
        }
        let mut outbound = BTreeSet::new();
        for rule in &self.local_to_remote {
            check_rule(rule)?;
            if !outbound.insert(rule.topic.as_str()) {
                return bad(format!("{} listed twice in local_to_remote", rule.topic));
            }
        }
        let mut inbound = BTreeSet::new();
        for rule in &self.remote_to_local {
            check_rule(rule)?;
            if !inbound.insert(rule.topic.as_str()) {
                return bad(format!("{} listed twice in remote_to_local", rule.topic));
            }
            if outbound.contains(rule.topic.as_str()) {
                return bad(format!("{} is mirrored in both directions", rule.topic));
            }
        }
        let mut exposed = BTreeSet::new();
        for s in &self.exposed_services {
            check_name(s)?;
            if !exposed.insert(s.as_str()) {
                return bad(format!("{s} exposed twice"));
            }
        }
        let mut imported = BTreeSet::new();
        for s in &self.imported_services {
            check_name(s)?;
            if exposed.contains(s.as_str()) || !imported.insert(s.as_str()) {
                return bad(format!("{s} listed twice across exposed/imported services"));
            }
        }
        let b = &self.reconnect;
        let backoff_ok = b.initial_ms > 0.0
            && b.factor >= 1.0
            && b.max_ms >= b.initial_ms
            && (0.0..1.0).contains(&b.jitter_fraction);
        if !backoff_ok {
            return bad(format!("bad reconnect policy {b:?}"));
        }
        if self.handshake_timeout_ms == 0 || self.keepalive_ms == 0 {
            return bad("timeouts must be positive".into());
        }
        Ok(())
    }
}

fn check_name(name: &str) -> Result<TopicName, DuctError> {
    TopicName::new(name).map_err(|e| DuctError::ConfigInvalid(format!("{name:?}: {e}")))
}

fn check_rule(rule: &TopicRule) -> Result<(), DuctError> {
    check_name(&rule.topic)?;
    if rule.type_name.is_empty() {
        return Err(DuctError::ConfigInvalid(format!("{} has no type_name", rule.topic)));
    }
    Ok(())
}
