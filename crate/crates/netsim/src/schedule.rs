use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ms_to_ns;

/// One scheduled outage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outage {
    pub t_down_ms: f64,
    pub duration_ms: f64,
}

/// Exponentially distributed up and down periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomOutages {
    pub mean_up_ms: f64,
    pub mean_down_ms: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Periodic {
    pub up_ms: f64,
    pub down_ms: f64,
}

/// When the link is unavailable.
///
/// In profile files this is a list of `{ t_down_ms, duration_ms }` tables,
/// `{ random = { mean_up_ms, mean_down_ms, seed } }`, or
/// `{ periodic = { up_ms, down_ms } }` (up first, repeating forever).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DisconnectSchedule {
    Fixed(Vec<Outage>),
    Random { random: RandomOutages },
    Periodic { periodic: Periodic },
}

impl Default for DisconnectSchedule {
    fn default() -> Self {
        DisconnectSchedule::Fixed(Vec::new())
    }
}

impl DisconnectSchedule {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn periodic(up_ms: f64, down_ms: f64) -> Self {
        DisconnectSchedule::Periodic {
            periodic: Periodic { up_ms, down_ms },
        }
    }

    pub fn random(mean_up_ms: f64, mean_down_ms: f64, seed: u64) -> Self {
        DisconnectSchedule::Random {
            random: RandomOutages {
                mean_up_ms,
                mean_down_ms,
                seed,
            },
        }
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        match self {
            DisconnectSchedule::Fixed(list) => {
                let mut prev_end = f64::NEG_INFINITY;
                for o in list {
                    if !(o.t_down_ms >= 0.0 && o.duration_ms > 0.0) {
                        return Err(format!("bad outage {o:?}"));
                    }
                    if o.t_down_ms < prev_end {
                        return Err("outages overlap or are not sorted".into());
                    }
                    prev_end = o.t_down_ms + o.duration_ms;
                }
                Ok(())
            }
            DisconnectSchedule::Random { random: r } => {
                if r.mean_up_ms > 0.0 && r.mean_down_ms > 0.0 {
                    Ok(())
                } else {
                    Err("random outage means must be positive".into())
                }
            }
            DisconnectSchedule::Periodic { periodic: p } => {
                if p.up_ms > 0.0 && p.down_ms > 0.0 {
                    Ok(())
                } else {
                    Err("periodic up/down must be positive".into())
                }
            }
        }
    }
}

enum Source {
    Exhausted,
    Periodic { up_ns: u64, down_ns: u64 },
    Random { rng: Box<ChaCha8Rng>, mean_up_ms: f64, mean_down_ms: f64 },
}

/// Outage intervals `[start, end)` in nanoseconds, generated on demand.
pub(crate) struct Timeline {
    outages: Vec<(u64, u64)>,
    source: Source,
    generated_until: u64,
}

impl Timeline {
    pub(crate) fn new(schedule: &DisconnectSchedule) -> Self {
        match schedule {
            DisconnectSchedule::Fixed(list) => Self {
                outages: list
                    .iter()
                    .map(|o| {
                        let start = ms_to_ns(o.t_down_ms);
                        (start, start + ms_to_ns(o.duration_ms))
                    })
                    .collect(),
                source: Source::Exhausted,
                generated_until: u64::MAX,
            },
            DisconnectSchedule::Periodic { periodic: p } => Self {
                outages: Vec::new(),
                source: Source::Periodic {
                    up_ns: ms_to_ns(p.up_ms),
                    down_ns: ms_to_ns(p.down_ms),
                },
                generated_until: 0,
            },
            DisconnectSchedule::Random { random: r } => Self {
                outages: Vec::new(),
                source: Source::Random {
                    rng: Box::new(ChaCha8Rng::seed_from_u64(r.seed)),
                    mean_up_ms: r.mean_up_ms,
                    mean_down_ms: r.mean_down_ms,
                },
                generated_until: 0,
            },
        }
    }

    fn ensure(&mut self, t: u64) {
        while self.generated_until <= t {
            let start_from = self.generated_until;
            let (up, down) = match &mut self.source {
                Source::Exhausted => return,
                Source::Periodic { up_ns, down_ns } => (*up_ns, *down_ns),
                Source::Random {
                    rng,
                    mean_up_ms,
                    mean_down_ms,
                } => {
                    let up = exp_sample(rng, *mean_up_ms);
                    let down = exp_sample(rng, *mean_down_ms);
                    (ms_to_ns(up).max(1), ms_to_ns(down).max(1))
                }
            };
            let start = start_from + up;
            let end = start + down;
            self.outages.push((start, end));
            self.generated_until = end;
        }
    }

    pub(crate) fn is_down(&mut self, t: u64) -> bool {
        self.ensure(t);
        self.outages.iter().any(|&(s, e)| s <= t && t < e)
    }

    /// Outage starts and ends in `(after, until]`, as `(time, going_down)`.
    pub(crate) fn transitions_in(&mut self, after: u64, until: u64) -> Vec<(u64, bool)> {
        self.ensure(until);
        let mut out = Vec::new();
        for &(s, e) in &self.outages {
            if s > after && s <= until {
                out.push((s, true));
            }
            if e > after && e <= until {
                out.push((e, false));
            }
        }
        out.sort();
        out
    }
}

fn exp_sample(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    -mean * u.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MS: u64 = 1_000_000;

    #[test]
    fn fixed_outages() {
        let s = DisconnectSchedule::Fixed(vec![Outage {
            t_down_ms: 100.0,
            duration_ms: 200.0,
        }]);
        let mut t = Timeline::new(&s);
        assert!(!t.is_down(99 * MS));
        assert!(t.is_down(100 * MS));
        assert!(t.is_down(299 * MS));
        assert!(!t.is_down(300 * MS));
        assert_eq!(
            t.transitions_in(0, 1000 * MS),
            vec![(100 * MS, true), (300 * MS, false)]
        );
    }

    #[test]
    fn periodic_outages_repeat() {
        let mut t = Timeline::new(&DisconnectSchedule::periodic(2000.0, 500.0));
        let downs: Vec<u64> = t
            .transitions_in(0, 20_000 * MS)
            .into_iter()
            .filter(|&(_, down)| down)
            .map(|(at, _)| at / MS)
            .collect();
        assert_eq!(downs, vec![2000, 4500, 7000, 9500, 12000, 14500, 17000, 19500]);
        assert!(t.is_down(19_999 * MS));
    }

    #[test]
    fn random_outages_are_seeded() {
        let s = DisconnectSchedule::random(1000.0, 100.0, 5);
        let a = Timeline::new(&s).transitions_in(0, 60_000 * MS);
        let b = Timeline::new(&s).transitions_in(0, 60_000 * MS);
        assert_eq!(a, b);
        assert!(a.len() > 10);
    }

    #[test]
    fn overlapping_fixed_schedule_is_invalid() {
        let s = DisconnectSchedule::Fixed(vec![
            Outage { t_down_ms: 0.0, duration_ms: 100.0 },
            Outage { t_down_ms: 50.0, duration_ms: 10.0 },
        ]);
        assert!(s.validate().is_err());
    }
}
