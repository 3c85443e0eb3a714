use std::path::{Path, PathBuf};

use duct::{DuctConfig, TopicRule};
use netsim::LinkProfile;
use robotsim::{LoadModel, RobotConfig, World};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use wirecodec::Encoding;

use crate::RunError;

/// Topic the bulk pattern publishes on when none is given.
pub const BULK_TOPIC: &str = "/camera/points";

/// What the robot side produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Traffic {
    /// Simulated robot: `/odom` every tick, `/scan` at the scan rate, and
    /// `/cmd_vel` from the cloud client.
    Nav {
        #[serde(default = "default_cmd_rate")]
        cmd_rate_hz: f64,
    },
    /// Periodic opaque payloads with sizes drawn uniformly from
    /// `min_bytes..=max_bytes`.
    Bulk {
        #[serde(default = "default_bulk_topic")]
        topic: String,
        #[serde(default = "default_bulk_period")]
        period_ms: u64,
        #[serde(default = "default_bulk_min")]
        min_bytes: usize,
        #[serde(default = "default_bulk_max")]
        max_bytes: usize,
    },
}

fn default_cmd_rate() -> f64 {
    10.0
}

fn default_bulk_topic() -> String {
    BULK_TOPIC.to_owned()
}

fn default_bulk_period() -> u64 {
    1000
}

fn default_bulk_min() -> usize {
    100_000
}

fn default_bulk_max() -> usize {
    1_000_000
}

/// One subscription held by the cloud client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSub {
    pub topic: String,
    #[serde(default)]
    pub throttle_rate_ms: u64,
    #[serde(default)]
    pub queue_length: Option<u64>,
}

/// Cloud-side consumer attached directly to the bridge.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientSpec {
    /// Empty means every local-to-remote topic, unthrottled.
    pub subscribe: Vec<ClientSub>,
}

/// Duct settings: a ductd config file, or the same table inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DuctSource {
    File(PathBuf),
    Inline(Box<DuctConfig>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    /// Segment world file; an empty world when absent.
    #[serde(default)]
    pub world: Option<PathBuf>,
    #[serde(default)]
    pub link: LinkProfile,
    /// Derived from the traffic pattern when absent.
    #[serde(default)]
    pub duct: Option<DuctSource>,
    pub duration_s: f64,
    pub traffic: Traffic,
    #[serde(default)]
    pub seed: u64,
    #[serde(
        default = "default_encoding",
        serialize_with = "ser_encoding",
        deserialize_with = "de_encoding"
    )]
    pub encoding: Encoding,
    #[serde(default)]
    pub robot: RobotConfig,
    /// Per-tick compute load applied to the robot.
    #[serde(default)]
    pub load: LoadModel,
    #[serde(default)]
    pub client: ClientSpec,
    /// Upper bound on the settling phase after traffic stops.
    #[serde(default = "default_drain")]
    pub max_drain_s: f64,
}

fn default_encoding() -> Encoding {
    Encoding::Cbor
}

fn default_drain() -> f64 {
    15.0
}

fn ser_encoding<S: Serializer>(e: &Encoding, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(e.as_str())
}

fn de_encoding<'de, D: Deserializer<'de>>(d: D) -> Result<Encoding, D::Error> {
    String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
}

/// A spec with its files read.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub world: World,
    pub duct: DuctConfig,
}

impl ScenarioSpec {
    pub fn new(name: impl Into<String>, duration_s: f64, traffic: Traffic) -> Self {
        Self {
            name: name.into(),
            world: None,
            link: LinkProfile::perfect(),
            duct: None,
            duration_s,
            traffic,
            seed: 0,
            encoding: default_encoding(),
            robot: RobotConfig::default(),
            load: LoadModel::None,
            client: ClientSpec::default(),
            max_drain_s: default_drain(),
        }
    }

    pub fn nav(name: impl Into<String>, duration_s: f64) -> Self {
        Self::new(
            name,
            duration_s,
            Traffic::Nav {
                cmd_rate_hz: default_cmd_rate(),
            },
        )
    }

    pub fn bulk(name: impl Into<String>, duration_s: f64) -> Self {
        Self::new(
            name,
            duration_s,
            Traffic::Bulk {
                topic: default_bulk_topic(),
                period_ms: default_bulk_period(),
                min_bytes: default_bulk_min(),
                max_bytes: default_bulk_max(),
            },
        )
    }

    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::ScenarioInvalid(e.to_string()))
    }

    /// Reads a scenario file. Relative world and duct paths are taken from
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::ScenarioInvalid(format!("{}: {e}", path.display())))?;
        let mut spec = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(w) = &mut spec.world {
            if w.is_relative() {
                *w = base.join(&*w);
            }
        }
        if let Some(DuctSource::File(d)) = &mut spec.duct {
            if d.is_relative() {
                *d = base.join(&*d);
            }
        }
        Ok(spec)
    }

    pub fn duration_ns(&self) -> u64 {
        (self.duration_s * 1e9).round() as u64
    }

    /// Checks the spec and reads the files it names.
    pub fn resolve(&self) -> Result<Resolved, RunError> {
        let bad = |m: String| Err(RunError::ScenarioInvalid(m));
        if self.name.is_empty() {
            return bad("scenario name is empty".into());
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration_s must be > 0, got {}", self.duration_s));
        }
        if !(self.max_drain_s >= 0.0 && self.max_drain_s.is_finite()) {
            return bad(format!("max_drain_s must be >= 0, got {}", self.max_drain_s));
        }
        self.link
            .validate()
            .map_err(|e| RunError::ScenarioInvalid(e.to_string()))?;
        self.load.validate().map_err(RunError::ScenarioInvalid)?;
        match &self.traffic {
            Traffic::Nav { cmd_rate_hz } => {
                if !(*cmd_rate_hz >= 0.0 && cmd_rate_hz.is_finite()) {
                    return bad(format!("cmd_rate_hz must be >= 0, got {cmd_rate_hz}"));
                }
            }
            Traffic::Bulk {
                period_ms,
                min_bytes,
                max_bytes,
                ..
            } => {
                if *period_ms == 0 {
                    return bad("bulk period_ms must be > 0".into());
                }
                if min_bytes > max_bytes {
                    return bad(format!("bulk min_bytes {min_bytes} exceeds max_bytes {max_bytes}"));
                }
            }
        }
        let world = match &self.world {
            Some(path) => {
                World::load(path).map_err(|e| RunError::ScenarioInvalid(format!("{}: {e}", path.display())))?
            }
            None => World::empty(),
        };
        let mut duct = match &self.duct {
            Some(DuctSource::File(path)) => {
                DuctConfig::load(path).map_err(|e| RunError::ScenarioInvalid(e.to_string()))?
            }
            Some(DuctSource::Inline(c)) => {
                c.validate()
                    .map_err(|e| RunError::ScenarioInvalid(e.to_string()))?;
                (**c).clone()
            }
            None => default_duct(&self.traffic),
        };
        duct.encoding_pref = vec![self.encoding];
        for sub in &self.client.subscribe {
            if !duct.local_to_remote.iter().any(|r| r.topic == sub.topic) {
                return bad(format!("client subscribes to {} which the duct does not mirror", sub.topic));
            }
        }
        Ok(Resolved { world, duct })
    }
}

/// Mirroring rules matching a traffic pattern.
pub fn default_duct(traffic: &Traffic) -> DuctConfig {
    let mut c = DuctConfig::new("ws://bridge.invalid:8443", "robot");
    match traffic {
        Traffic::Nav { .. } => {
            c.local_to_remote = vec![
                TopicRule::new(robotsim::ODOM_TOPIC, "nav_msgs/Odometry"),
                TopicRule::new(robotsim::SCAN_TOPIC, "sensor_msgs/LaserScan"),
            ];
            c.remote_to_local = vec![TopicRule::new(robotsim::CMD_TOPIC, "geometry_msgs/Twist")];
        }
        Traffic::Bulk { topic, .. } => {
            c.local_to_remote = vec![TopicRule::new(topic.clone(), "sensor_msgs/PointCloud2")];
        }
    }
    c
}
