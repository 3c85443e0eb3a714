use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

/// Below this turn rate a step is integrated as a straight line.
const STRAIGHT_OMEGA: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    /// Heading in (-pi, pi].
    pub theta: f64,
}

impl RobotPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t > PI {
        t - TAU
    } else {
        t
    }
}

/// Exact unicycle step under constant `v` (m/s) and `omega` (rad/s).
pub fn step_kinematics(pose: RobotPose, v: f64, omega: f64, dt: f64) -> RobotPose {
    debug_assert!(dt > 0.0, "dt must be positive");
    let th = pose.theta;
    if omega.abs() < STRAIGHT_OMEGA {
        return RobotPose {
            x: pose.x + v * dt * th.cos(),
            y: pose.y + v * dt * th.sin(),
            theta: normalize_angle(th + omega * dt),
        };
    }
    let th1 = th + omega * dt;
    let r = v / omega;
    RobotPose {
        x: pose.x + r * (th1.sin() - th.sin()),
        y: pose.y - r * (th1.cos() - th.cos()),
        theta: normalize_angle(th1),
    }
}
