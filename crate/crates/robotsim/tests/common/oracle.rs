#![allow(dead_code)]

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use robotsim::{RobotPose, Segment, World};

/// Forward Euler with many substeps.
pub fn euler(p: RobotPose, v: f64, w: f64, dt: f64, n: u32) -> RobotPose {
    let h = dt / n as f64;
    let (mut x, mut y, mut th) = (p.x, p.y, p.theta);
    for _ in 0..n {
        x += v * th.cos() * h;
        y += v * th.sin() * h;
        th += w * h;
    }
    RobotPose { x, y, theta: th }
}

pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// First crossing found by marching along the ray and bisecting on the
/// sign of each segment's side function. Independent of the closed-form
/// intersection.
pub fn sampled_range(world: &World, p: [f64; 2], phi: f64, max: f64) -> f64 {
    let d = [phi.cos(), phi.sin()];
    let at = |t: f64| [p[0] + t * d[0], p[1] + t * d[1]];
    let side = |s: &Segment, q: [f64; 2]| {
        (s.b[0] - s.a[0]) * (q[1] - s.a[1]) - (s.b[1] - s.a[1]) * (q[0] - s.a[0])
    };
    let within = |s: &Segment, q: [f64; 2]| {
        let e = [s.b[0] - s.a[0], s.b[1] - s.a[1]];
        let len2 = e[0] * e[0] + e[1] * e[1];
        let u = ((q[0] - s.a[0]) * e[0] + (q[1] - s.a[1]) * e[1]) / len2;
        (-1e-12..=1.0 + 1e-12).contains(&u)
    };
    let step = 0.01;
    let mut t0 = 0.0;
    while t0 < max {
        let t1 = (t0 + step).min(max);
        let mut best: Option<f64> = None;
        for s in &world.segments {
            let (s0, s1) = (side(s, at(t0)), side(s, at(t1)));
            if s0 == 0.0 && within(s, at(t0)) {
                best = Some(best.map_or(t0, |b| b.min(t0)));
                continue;
            }
            if s0.signum() == s1.signum() && s1 != 0.0 {
                continue;
            }
            let (mut lo, mut hi) = (t0, t1);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if side(s, at(mid)).signum() == s0.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let t = 0.5 * (lo + hi);
            if within(s, at(t)) {
                best = Some(best.map_or(t, |b| b.min(t)));
            }
        }
        if let Some(t) = best {
            return t;
        }
        t0 = t1;
    }
    max
}

pub fn random_world(rng: &mut ChaCha8Rng) -> World {
    let n = rng.gen_range(1..10);
    let segs = (0..n)
        .map(|_| {
            Segment::new(
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
            )
        })
        .collect();
    let mut w = World::from_segments(segs);
    w.bounds = robotsim::Bounds::unbounded();
    w
}
