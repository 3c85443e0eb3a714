use msggraph::{Graph, PublisherHandle, QueuePolicy, SubscriptionHandle, TopicName, TopicSpec, Value};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{render_scan, scan_message, step_kinematics, RobotPose, ScanSpec, World};

pub const ODOM_TOPIC: &str = "/odom";
pub const SCAN_TOPIC: &str = "/scan";
pub const CMD_TOPIC: &str = "/cmd_vel";

#[derive(Debug, Error)]
pub enum RobotError {
    #[error("start pose ({x}, {y}) is outside the world bounds")]
    StartOutOfBounds { x: f64, y: f64 },
    #[error("invalid robot config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] msggraph::GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotConfig {
    /// Simulation steps per simulated second; `/odom` is published every step.
    pub tick_hz: f64,
    pub scan: ScanSpec,
    pub start: RobotPose,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            tick_hz: 50.0,
            scan: ScanSpec::default(),
            start: RobotPose::default(),
        }
    }
}

/// Velocity command payload.
pub fn cmd_vel(v: f64, omega: f64) -> Value {
    Value::map([("linear", Value::Float(v)), ("angular", Value::Float(omega))])
}

/// Reads the pose back out of an `/odom` payload.
pub fn odom_pose(msg: &Value) -> Option<RobotPose> {
    Some(RobotPose {
        x: msg.get("x")?.as_f64()?,
        y: msg.get("y")?.as_f64()?,
        theta: msg.get("theta")?.as_f64()?,
    })
}

fn header(stamp_ns: u64) -> Value {
    Value::map([("stamp", Value::Int(stamp_ns as i64))])
}

/// The simulated robot, attached to a local graph.
pub struct Robot {
    world: World,
    config: RobotConfig,
    pose: RobotPose,
    v: f64,
    omega: f64,
    sim_ns: u64,
    tick_ns: u64,
    ticks: u64,
    scans: u64,
    odom: PublisherHandle,
    scan: PublisherHandle,
    cmd: SubscriptionHandle,
}

impl Robot {
    pub fn new(graph: &Graph, world: World, config: RobotConfig) -> Result<Self, RobotError> {
        config.scan.validate().map_err(RobotError::Config)?;
        if !(config.tick_hz > 0.0 && config.tick_hz.is_finite()) {
            return Err(RobotError::Config("tick_hz must be positive".into()));
        }
        if config.scan.rate_hz > config.tick_hz {
            return Err(RobotError::Config("scan rate exceeds tick rate".into()));
        }
        let start = RobotPose::new(config.start.x, config.start.y, config.start.theta);
        if !world.bounds.contains(start.x, start.y) {
            return Err(RobotError::StartOutOfBounds {
                x: start.x,
                y: start.y,
            });
        }
        let name = |s: &str| TopicName::new(s).expect("static topic name");
        let odom = graph.advertise(TopicSpec::new(name(ODOM_TOPIC), "nav_msgs/Odometry"))?;
        let scan = graph.advertise(TopicSpec::new(name(SCAN_TOPIC), "sensor_msgs/LaserScan"))?;
        let cmd = graph.subscribe(&name(CMD_TOPIC), QueuePolicy::bounded(10));
        Ok(Self {
            world,
            config,
            pose: start,
            v: 0.0,
            omega: 0.0,
            sim_ns: 0,
            tick_ns: (1e9 / config.tick_hz).round() as u64,
            ticks: 0,
            scans: 0,
            odom,
            scan,
            cmd,
        })
    }

    pub fn config(&self) -> &RobotConfig {
        &self.config
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn pose(&self) -> RobotPose {
        self.pose
    }

    /// Current `(v, omega)` command.
    pub fn command(&self) -> (f64, f64) {
        (self.v, self.omega)
    }

    pub fn sim_time_ns(&self) -> u64 {
        self.sim_ns
    }

    pub fn tick_ns(&self) -> u64 {
        self.tick_ns
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn scans_published(&self) -> u64 {
        self.scans
    }

    fn next_scan_ns(&self) -> u64 {
        ((self.scans + 1) as f64 * 1e9 / self.config.scan.rate_hz).round() as u64
    }

    /// One tick: take the newest command, integrate over the tick, then
    /// publish odometry and, when due, a scan.
    pub fn step(&mut self) {
        for env in self.cmd.drain() {
            let msg = &env.payload;
            match (
                msg.get("linear").and_then(Value::as_f64),
                msg.get("angular").and_then(Value::as_f64),
            ) {
                (Some(v), Some(w)) if v.is_finite() && w.is_finite() => {
                    self.v = v;
                    self.omega = w;
                }
                _ => {}
            }
        }
        let dt = self.tick_ns as f64 / 1e9;
        self.pose = step_kinematics(self.pose, self.v, self.omega, dt);
        self.sim_ns += self.tick_ns;
        self.ticks += 1;
        let p = self.pose;
        self.odom.publish_stamped(
            Value::map([
                ("header", header(self.sim_ns)),
                ("x", Value::Float(p.x)),
                ("y", Value::Float(p.y)),
                ("theta", Value::Float(p.theta)),
                ("v", Value::Float(self.v)),
                ("omega", Value::Float(self.omega)),
            ]),
            self.sim_ns,
        );
        if self.sim_ns >= self.next_scan_ns() {
            let ranges = render_scan(&self.world, &p, &self.config.scan);
            let Value::Map(mut msg) = scan_message(&self.config.scan, &ranges) else {
                unreachable!("scan_message builds a map")
            };
            msg.insert("header".into(), header(self.sim_ns));
            self.scan.publish_stamped(Value::Map(msg), self.sim_ns);
            self.scans += 1;
        }
    }

    /// Steps until the next tick would pass `t_ns`. Returns the ticks run.
    pub fn advance_to(&mut self, t_ns: u64) -> u64 {
        let mut n = 0;
        while self.sim_ns + self.tick_ns <= t_ns {
            self.step();
            n += 1;
        }
        n
    }
}

/// Stamp carried in a robot message header, in simulated nanoseconds.
pub fn message_stamp(msg: &Value) -> Option<u64> {
    msg.pointer(&["header", "stamp"])?.as_i64().map(|s| s as u64)
}
