use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::DisconnectSchedule;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("invalid link profile: {0}")]
    Invalid(String),
    #[error("cannot read profile: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse profile: {0}")]
    Parse(#[from] toml::de::Error),
}

/// Impairment parameters for one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkProfile {
    #[serde(default)]
    pub one_way_latency_ms: f64,
    /// Each frame's latency is perturbed uniformly within +/- this amount.
    #[serde(default)]
    pub jitter_ms: f64,
    #[serde(default)]
    pub bandwidth_bytes_per_s: Option<f64>,
    #[serde(default)]
    pub disconnect_schedule: DisconnectSchedule,
    /// Chance that a frame kills the connection it travels on.
    #[serde(default)]
    pub drop_prob: f64,
}

impl Default for LinkProfile {
    fn default() -> Self {
        Self::perfect()
    }
}

impl LinkProfile {
    pub fn perfect() -> Self {
        Self {
            one_way_latency_ms: 0.0,
            jitter_ms: 0.0,
            bandwidth_bytes_per_s: None,
            disconnect_schedule: DisconnectSchedule::none(),
            drop_prob: 0.0,
        }
    }

    pub fn with_latency(mut self, ms: f64) -> Self {
        self.one_way_latency_ms = ms;
        self
    }

    pub fn with_jitter(mut self, ms: f64) -> Self {
        self.jitter_ms = ms;
        self
    }

    pub fn with_bandwidth(mut self, bytes_per_s: f64) -> Self {
        self.bandwidth_bytes_per_s = Some(bytes_per_s);
        self
    }

    pub fn with_schedule(mut self, schedule: DisconnectSchedule) -> Self {
        self.disconnect_schedule = schedule;
        self
    }

    pub fn with_drop_prob(mut self, p: f64) -> Self {
        self.drop_prob = p;
        self
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let bad = |m: &str| Err(ProfileError::Invalid(m.to_owned()));
        if !(self.one_way_latency_ms >= 0.0 && self.one_way_latency_ms.is_finite()) {
            return bad("latency must be a finite value >= 0");
        }
        if !(self.jitter_ms >= 0.0 && self.jitter_ms.is_finite()) {
            return bad("jitter must be a finite value >= 0");
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return bad("drop_prob must lie in [0, 1]");
        }
        if let Some(bw) = self.bandwidth_bytes_per_s {
            if !(bw > 0.0 && bw.is_finite()) {
                return bad("bandwidth must be positive");
            }
        }
        self.disconnect_schedule
            .validate()
            .map_err(ProfileError::Invalid)
    }

    pub fn from_toml(text: &str) -> Result<Self, ProfileError> {
        let p: LinkProfile = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
