//! Wall-clock pacing and real-time factor measurement.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::Robot;

/// Shortest RTF window; shorter windows are dominated by timer noise.
pub const MIN_WINDOW: Duration = Duration::from_secs(1);

/// Artificial compute cost added to every tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadModel {
    #[default]
    None,
    /// Each tick occupies `factor` times its wall budget.
    Overrun { factor: f64 },
    /// Fixed busy time after each tick's own work.
    FixedDelay { delay_ms: f64 },
}

impl LoadModel {
    /// Time a tick occupies given the `work` it did itself.
    pub fn busy(&self, budget: Duration, work: Duration) -> Duration {
        match *self {
            LoadModel::None => work,
            LoadModel::Overrun { factor } => work.max(budget.mul_f64(factor)),
            LoadModel::FixedDelay { delay_ms } => work + Duration::from_secs_f64(delay_ms / 1e3),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            LoadModel::Overrun { factor } if !(factor.is_finite() && factor > 0.0) => {
                Err(format!("overrun factor must be positive, got {factor}"))
            }
            LoadModel::FixedDelay { delay_ms } if !(delay_ms.is_finite() && delay_ms >= 0.0) => {
                Err(format!("delay must be >= 0, got {delay_ms}"))
            }
            _ => Ok(()),
        }
    }
}

/// Simulated versus wall time over one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RtfSample {
    pub sim_advanced_ns: u64,
    pub wall_elapsed_ns: u64,
}

impl RtfSample {
    pub fn rtf(&self) -> f64 {
        self.sim_advanced_ns as f64 / self.wall_elapsed_ns as f64
    }
}

/// Accumulates per-tick advances and closes a sample once the window's wall
/// time is filled.
#[derive(Debug, Clone)]
pub struct RtfMeter {
    window_ns: u64,
    sim_ns: u64,
    wall_ns: u64,
}

impl RtfMeter {
    /// # Panics
    /// If `window` is shorter than [`MIN_WINDOW`].
    pub fn new(window: Duration) -> Self {
        assert!(window >= MIN_WINDOW, "RTF window must be at least {MIN_WINDOW:?}");
        Self {
            window_ns: window.as_nanos() as u64,
            sim_ns: 0,
            wall_ns: 0,
        }
    }

    pub fn record(&mut self, sim_ns: u64, wall_ns: u64) -> Option<RtfSample> {
        self.sim_ns += sim_ns;
        self.wall_ns += wall_ns;
        if self.wall_ns < self.window_ns || self.sim_ns == 0 {
            return None;
        }
        let sample = RtfSample {
            sim_advanced_ns: self.sim_ns,
            wall_elapsed_ns: self.wall_ns,
        };
        self.sim_ns = 0;
        self.wall_ns = 0;
        Some(sample)
    }
}

/// Sleeps most of the way, then spins, so overshoot stays in microseconds.
fn wait_until(deadline: Instant) {
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let left = deadline - now;
        if left > Duration::from_micros(1_500) {
            std::thread::sleep(left - Duration::from_millis(1));
        } else {
            std::thread::yield_now();
        }
    }
}

/// Runs `robot` against the wall clock for `duration`.
///
/// Ticks follow an absolute schedule. Each one occupies a slot of
/// `max(budget, work + load)`, so a tick whose work or injected load exceeds
/// its budget lowers the RTF, while brief scheduler stalls during the idle
/// part of a slot are absorbed by the following ticks.
pub fn run(robot: &mut Robot, load: LoadModel, duration: Duration, window: Duration) -> Vec<RtfSample> {
    let budget = Duration::from_nanos(robot.tick_ns());
    let mut meter = RtfMeter::new(window);
    let mut samples = Vec::new();
    let start = Instant::now();
    let mut slot_end = start;
    let mut mark = start;
    while start.elapsed() < duration {
        let t0 = Instant::now();
        let sim_before = robot.sim_time_ns();
        robot.step();
        let work = t0.elapsed();
        slot_end += load.busy(budget, work).max(budget);
        wait_until(slot_end);
        let now = Instant::now();
        let wall = (now - mark).as_nanos() as u64;
        mark = now;
        if let Some(s) = meter.record(robot.sim_time_ns() - sim_before, wall) {
            samples.push(s);
        }
    }
    samples
}
