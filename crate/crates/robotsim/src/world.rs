use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("cannot read world file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            a: [x1, y1],
            b: [x2, y2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn unbounded() -> Self {
        Self {
            min: [f64::NEG_INFINITY; 2],
            max: [f64::INFINITY; 2],
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.min[0]..=self.max[0]).contains(&x) && (self.min[1]..=self.max[1]).contains(&y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub segments: Vec<Segment>,
    pub bounds: Bounds,
}

impl Default for World {
    fn default() -> Self {
        Self::empty()
    }
}

impl World {
    pub fn empty() -> Self {
        Self {
            segments: Vec::new(),
            bounds: Bounds::unbounded(),
        }
    }

    /// Bounds default to the bounding box of the segments.
    pub fn from_segments(segments: Vec<Segment>) -> Self {
        if segments.is_empty() {
            return Self::empty();
        }
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for s in &segments {
            for p in [s.a, s.b] {
                for k in 0..2 {
                    min[k] = min[k].min(p[k]);
                    max[k] = max[k].max(p[k]);
                }
            }
        }
        Self {
            segments,
            bounds: Bounds { min, max },
        }
    }

    /// Axis-aligned square room of side `side` centred on `(cx, cy)`.
    pub fn square_room(cx: f64, cy: f64, side: f64) -> Self {
        let h = side / 2.0;
        let (x0, x1, y0, y1) = (cx - h, cx + h, cy - h, cy + h);
        Self::from_segments(vec![
            Segment::new(x0, y0, x1, y0),
            Segment::new(x1, y0, x1, y1),
            Segment::new(x1, y1, x0, y1),
            Segment::new(x0, y1, x0, y0),
        ])
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        std::fs::read_to_string(path)?.parse()
    }
}

/// One segment `x1 y1 x2 y2` per line. Blank lines and `#` comments are
/// skipped. An optional `bounds xmin ymin xmax ymax` line overrides the
/// default bounding box.
impl FromStr for World {
    type Err = WorldError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut segments = Vec::new();
        let mut bounds = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| WorldError::Parse { line: i + 1, msg };
            let (keyword, rest) = match line.strip_prefix("bounds") {
                Some(rest) => (true, rest),
                None => (false, line),
            };
            let nums = rest
                .split_whitespace()
                .map(|w| {
                    w.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| err(format!("bad number {w:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let [a, b, c, d] = nums[..] else {
                return Err(err(format!("expected 4 numbers, got {}", nums.len())));
            };
            if keyword {
                if a > c || b > d {
                    return Err(err("bounds min exceeds max".into()));
                }
                bounds = Some(Bounds {
                    min: [a, b],
                    max: [c, d],
                });
            } else {
                segments.push(Segment::new(a, b, c, d));
            }
        }
        let mut world = World::from_segments(segments);
        if let Some(b) = bounds {
            world.bounds = b;
        }
        Ok(world)
    }
}
