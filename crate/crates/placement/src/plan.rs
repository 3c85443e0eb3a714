use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{validate, NodeSpec, PlacementError, SessionSpec, GPU_SESSION_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Largest CPU request first, onto the first node (by name) that fits.
    #[default]
    FirstFitDecreasing,
    /// Largest CPU request first, onto the node left with the least CPU.
    BestFit,
}

impl FromStr for Policy {
    type Err = PlacementError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ffd" | "first_fit_decreasing" | "first-fit-decreasing" => Ok(Policy::FirstFitDecreasing),
            "best_fit" | "best-fit" => Ok(Policy::BestFit),
            other => Err(PlacementError::Invalid(format!("unknown policy {other:?}"))),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::FirstFitDecreasing => "first_fit_decreasing",
            Policy::BestFit => "best_fit",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnplacedReason {
    NoToleratedNode,
    InsufficientCpu,
    InsufficientMem,
    GpuCapExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unplaced {
    pub session: String,
    pub reason: UnplacedReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PlacementPlan {
    /// Session name to node name.
    pub assignment: BTreeMap<String, String>,
    pub unplaced: Vec<Unplaced>,
}

impl PlacementPlan {
    pub fn placed(&self) -> usize {
        self.assignment.len()
    }
}

#[derive(Clone, Copy)]
struct Free {
    cpu: u64,
    mem: u64,
    gpu_slots: usize,
}

/// How far a session got on one node before failing.
fn check(node: &NodeSpec, free: &Free, s: &SessionSpec) -> Result<(), UnplacedReason> {
    if !s.tolerates(node) {
        return Err(UnplacedReason::NoToleratedNode);
    }
    if s.needs_gpu && free.gpu_slots == 0 {
        return Err(UnplacedReason::GpuCapExceeded);
    }
    if s.cpu_millis > free.cpu {
        return Err(UnplacedReason::InsufficientCpu);
    }
    if s.mem_mb > free.mem {
        return Err(UnplacedReason::InsufficientMem);
    }
    Ok(())
}

fn progress(r: UnplacedReason) -> u8 {
    match r {
        UnplacedReason::NoToleratedNode => 0,
        UnplacedReason::GpuCapExceeded => 1,
        UnplacedReason::InsufficientCpu => 2,
        UnplacedReason::InsufficientMem => 3,
    }
}

/// Places sessions one at a time, largest CPU request first (ties: larger
/// memory, then name). Nodes are tried in name order.
pub fn plan(
    nodes: &[NodeSpec],
    sessions: &[SessionSpec],
    policy: Policy,
) -> Result<PlacementPlan, PlacementError> {
    validate(nodes, sessions)?;
    let mut nodes: Vec<&NodeSpec> = nodes.iter().collect();
    nodes.sort_by(|a, b| a.name.cmp(&b.name));
    let mut free: Vec<Free> = nodes
        .iter()
        .map(|n| Free {
            cpu: n.cpu_millis,
            mem: n.mem_mb,
            gpu_slots: if n.gpus > 0 { GPU_SESSION_CAP } else { 0 },
        })
        .collect();
    let mut order: Vec<&SessionSpec> = sessions.iter().collect();
    order.sort_by_key(|s| (Reverse(s.cpu_millis), Reverse(s.mem_mb), s.name.as_str()));

    let mut out = PlacementPlan::default();
    for s in order {
        let mut chosen: Option<usize> = None;
        let mut furthest = UnplacedReason::NoToleratedNode;
        for (i, node) in nodes.iter().enumerate() {
            match check(node, &free[i], s) {
                Ok(()) => match policy {
                    Policy::FirstFitDecreasing => {
                        chosen = Some(i);
                        break;
                    }
                    Policy::BestFit => {
                        let key = |j: usize| (free[j].cpu - s.cpu_millis, free[j].mem - s.mem_mb);
                        if chosen.is_none_or(|c| key(i) < key(c)) {
                            chosen = Some(i);
                        }
                    }
                },
                Err(r) if progress(r) > progress(furthest) => furthest = r,
                Err(_) => {}
            }
        }
        match chosen {
            Some(i) => {
                free[i].cpu -= s.cpu_millis;
                free[i].mem -= s.mem_mb;
                if s.needs_gpu {
                    free[i].gpu_slots -= 1;
                }
                out.assignment.insert(s.name.clone(), nodes[i].name.clone());
            }
            None => out.unplaced.push(Unplaced {
                session: s.name.clone(),
                reason: furthest,
            }),
        }
    }
    Ok(out)
}

/// Largest number of copies of `template` that can run at once, found by
/// adding copies until one does not fit.
pub fn capacity_report(nodes: &[NodeSpec], template: &SessionSpec) -> Result<usize, PlacementError> {
    validate(nodes, std::slice::from_ref(template))?;
    let mut sessions = Vec::new();
    loop {
        let mut s = template.clone();
        s.name = format!("{}-{}", template.name, sessions.len());
        sessions.push(s);
        let p = plan(nodes, &sessions, Policy::FirstFitDecreasing)?;
        if !p.unplaced.is_empty() {
            return Ok(sessions.len() - 1);
        }
    }
}
