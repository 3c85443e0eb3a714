//! A unicycle robot in a world of line segments.
//!
//! The robot integrates velocity commands exactly, casts a planar lidar
//! against the world, and publishes `/odom` and `/scan` on a message graph.
//! [`realtime::run`] paces it against the wall clock and reports the
//! real-time factor.

mod kinematics;
pub mod realtime;
mod robot;
mod scan;
mod world;

pub use kinematics::{normalize_angle, step_kinematics, RobotPose};
pub use realtime::{LoadModel, RtfMeter, RtfSample};
pub use robot::{
    cmd_vel, message_stamp, odom_pose, Robot, RobotConfig, RobotError, CMD_TOPIC, ODOM_TOPIC, SCAN_TOPIC,
};
pub use scan::{beam_angle, decode_ranges, render_scan, scan_message, ScanSpec};
pub use world::{Bounds, Segment, World, WorldError};
