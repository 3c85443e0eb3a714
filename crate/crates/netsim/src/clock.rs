use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use msggraph::Clock;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    Virtual,
    Real,
}

/// Shared scenario clock. Clones observe the same time.
///
/// Virtual time starts at zero and moves only through [`SimClock::advance`]
/// or [`SimClock::advance_to`]. Real time is measured from construction.
#[derive(Debug, Clone)]
pub struct SimClock {
    mode: ClockMode,
    virtual_ns: Arc<AtomicU64>,
    origin: Instant,
}

impl SimClock {
    pub fn new_virtual() -> Self {
        Self {
            mode: ClockMode::Virtual,
            virtual_ns: Arc::new(AtomicU64::new(0)),
            origin: Instant::now(),
        }
    }

    pub fn new_real() -> Self {
        Self {
            mode: ClockMode::Real,
            ..Self::new_virtual()
        }
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn now_ns(&self) -> u64 {
        match self.mode {
            ClockMode::Virtual => self.virtual_ns.load(Ordering::Acquire),
            ClockMode::Real => self.origin.elapsed().as_nanos() as u64,
        }
    }

    /// # Panics
    /// In real mode, where time cannot be stepped.
    pub fn advance(&self, ns: u64) {
        assert_eq!(self.mode, ClockMode::Virtual, "cannot step a real clock");
        self.virtual_ns.fetch_add(ns, Ordering::AcqRel);
    }

    /// Moves virtual time forward to `t_ns`; earlier targets are ignored.
    pub fn advance_to(&self, t_ns: u64) {
        assert_eq!(self.mode, ClockMode::Virtual, "cannot step a real clock");
        self.virtual_ns.fetch_max(t_ns, Ordering::AcqRel);
    }
}

impl Clock for SimClock {
    fn now_ns(&self) -> u64 {
        SimClock::now_ns(self)
    }
}
