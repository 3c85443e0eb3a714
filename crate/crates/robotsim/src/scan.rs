use std::f64::consts::TAU;

use msggraph::Value;
use serde::{Deserialize, Serialize};

use crate::{RobotPose, World};

const PARALLEL_EPS: f64 = 1e-12;

/// Planar lidar parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSpec {
    pub n_beams: u32,
    pub fov_rad: f64,
    pub max_range_m: f64,
    pub rate_hz: f64,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            n_beams: 360,
            fov_rad: TAU,
            max_range_m: 3.5,
            rate_hz: 5.0,
        }
    }
}

impl ScanSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_beams == 0 {
            return Err("n_beams must be at least 1".into());
        }
        if !(self.max_range_m > 0.0 && self.max_range_m.is_finite()) {
            return Err("max_range_m must be positive".into());
        }
        if !(self.fov_rad > 0.0 && self.fov_rad <= TAU) {
            return Err("fov_rad must be in (0, 2pi]".into());
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err("rate_hz must be positive".into());
        }
        Ok(())
    }

    fn full_circle(&self) -> bool {
        self.fov_rad >= TAU - 1e-12
    }

    /// Angle of beam 0 relative to the heading.
    pub fn angle_min(&self) -> f64 {
        if self.full_circle() || self.n_beams == 1 {
            0.0
        } else {
            -self.fov_rad / 2.0
        }
    }

    pub fn angle_increment(&self) -> f64 {
        match (self.full_circle(), self.n_beams) {
            (_, 1) => 0.0,
            (true, n) => self.fov_rad / n as f64,
            (false, n) => self.fov_rad / (n - 1) as f64,
        }
    }
}

/// Direction of beam `i` relative to the heading. A full-circle scan starts
/// straight ahead and sweeps counter-clockwise; a partial one spans
/// `[-fov/2, fov/2]`.
pub fn beam_angle(spec: &ScanSpec, i: u32) -> f64 {
    spec.angle_min() + i as f64 * spec.angle_increment()
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Distance along the unit ray `p + t d` to the segment, if it is hit.
fn ray_hit(p: [f64; 2], d: [f64; 2], a: [f64; 2], b: [f64; 2]) -> Option<f64> {
    let e = [b[0] - a[0], b[1] - a[1]];
    let w = [a[0] - p[0], a[1] - p[1]];
    let denom = cross(d, e);
    if denom.abs() > PARALLEL_EPS {
        let t = cross(w, e) / denom;
        let s = cross(w, d) / denom;
        return (t >= 0.0 && (0.0..=1.0).contains(&s)).then_some(t);
    }
    if cross(w, d).abs() > PARALLEL_EPS {
        return None;
    }
    // Collinear: the ray runs along the segment.
    let ta = w[0] * d[0] + w[1] * d[1];
    let tb = (b[0] - p[0]) * d[0] + (b[1] - p[1]) * d[1];
    match (ta >= 0.0, tb >= 0.0) {
        (true, true) => Some(ta.min(tb)),
        (false, false) => None,
        _ => Some(0.0),
    }
}

/// Range per beam to the nearest segment, clipped to `max_range_m`.
pub fn render_scan(world: &World, pose: &RobotPose, spec: &ScanSpec) -> Vec<f64> {
    let p = [pose.x, pose.y];
    (0..spec.n_beams)
        .map(|i| {
            let phi = pose.theta + beam_angle(spec, i);
            let d = [phi.cos(), phi.sin()];
            world
                .segments
                .iter()
                .filter_map(|s| ray_hit(p, d, s.a, s.b))
                .fold(spec.max_range_m, f64::min)
        })
        .collect()
}

/// Graph payload for one scan. Ranges travel as little-endian `f32` bytes,
/// as a LaserScan's float array does on the wire.
pub fn scan_message(spec: &ScanSpec, ranges: &[f64]) -> Value {
    let bytes = ranges
        .iter()
        .flat_map(|r| (*r as f32).to_le_bytes())
        .collect();
    Value::map([
        ("angle_min", Value::Float(spec.angle_min())),
        ("angle_increment", Value::Float(spec.angle_increment())),
        ("range_max", Value::Float(spec.max_range_m)),
        ("ranges", Value::Bytes(bytes)),
    ])
}

pub fn decode_ranges(msg: &Value) -> Option<Vec<f32>> {
    let bytes = msg.get("ranges")?.as_bytes()?;
    if bytes.len() % 4 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    )
}
