use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{NodeSpec, PlacementPlan, SessionSpec, GPU_SESSION_CAP};

/// One way a plan breaks the placement rules.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Violation {
    UnknownNode { session: String, node: String },
    UnknownSession { session: String },
    /// Neither assigned nor listed as unplaced, or listed twice.
    Unaccounted { session: String },
    TaintNotTolerated { session: String, node: String },
    NoGpuOnNode { session: String, node: String },
    CpuOvercommit { node: String, requested: u64, capacity: u64 },
    MemOvercommit { node: String, requested: u64, capacity: u64 },
    GpuCapExceeded { node: String, sessions: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownNode { session, node } => write!(f, "{session} assigned to unknown node {node}"),
            Violation::UnknownSession { session } => write!(f, "plan names unknown session {session}"),
            Violation::Unaccounted { session } => write!(f, "{session} is not accounted for exactly once"),
            Violation::TaintNotTolerated { session, node } => {
                write!(f, "{session} does not tolerate the taints of {node}")
            }
            Violation::NoGpuOnNode { session, node } => write!(f, "{session} needs a GPU but {node} has none"),
            Violation::CpuOvercommit { node, requested, capacity } => {
                write!(f, "{node}: {requested} mcpu requested, {capacity} available")
            }
            Violation::MemOvercommit { node, requested, capacity } => {
                write!(f, "{node}: {requested} MB requested, {capacity} available")
            }
            Violation::GpuCapExceeded { node, sessions } => {
                write!(f, "{node}: {sessions} GPU sessions, cap is {GPU_SESSION_CAP}")
            }
        }
    }
}

/// Checks `plan` against the inputs. Empty iff the plan is valid.
pub fn verify(plan: &PlacementPlan, nodes: &[NodeSpec], sessions: &[SessionSpec]) -> Vec<Violation> {
    let nodes: BTreeMap<&str, &NodeSpec> = nodes.iter().map(|n| (n.name.as_str(), n)).collect();
    let by_name: BTreeMap<&str, &SessionSpec> = sessions.iter().map(|s| (s.name.as_str(), s)).collect();
    let mut out = BTreeSet::new();

    let mut mentions: BTreeMap<&str, usize> = BTreeMap::new();
    for name in plan
        .assignment
        .keys()
        .map(String::as_str)
        .chain(plan.unplaced.iter().map(|u| u.session.as_str()))
    {
        *mentions.entry(name).or_default() += 1;
    }
    for (name, count) in &mentions {
        if !by_name.contains_key(name) {
            out.insert(Violation::UnknownSession {
                session: name.to_string(),
            });
        } else if *count != 1 {
            out.insert(Violation::Unaccounted {
                session: name.to_string(),
            });
        }
    }
    for name in by_name.keys() {
        if !mentions.contains_key(name) {
            out.insert(Violation::Unaccounted {
                session: name.to_string(),
            });
        }
    }

    let mut load: BTreeMap<&str, (u64, u64, usize)> = BTreeMap::new();
    for (session, node_name) in &plan.assignment {
        let Some(node) = nodes.get(node_name.as_str()) else {
            out.insert(Violation::UnknownNode {
                session: session.clone(),
                node: node_name.clone(),
            });
            continue;
        };
        let Some(s) = by_name.get(session.as_str()) else {
            continue;
        };
        if !s.tolerates(node) {
            out.insert(Violation::TaintNotTolerated {
                session: session.clone(),
                node: node_name.clone(),
            });
        }
        if s.needs_gpu && node.gpus == 0 {
            out.insert(Violation::NoGpuOnNode {
                session: session.clone(),
                node: node_name.clone(),
            });
        }
        let l = load.entry(node.name.as_str()).or_default();
        l.0 += s.cpu_millis;
        l.1 += s.mem_mb;
        l.2 += usize::from(s.needs_gpu);
    }
    for (name, (cpu, mem, gpu)) in load {
        let node = nodes[name];
        if cpu > node.cpu_millis {
            out.insert(Violation::CpuOvercommit {
                node: name.into(),
                requested: cpu,
                capacity: node.cpu_millis,
            });
        }
        if mem > node.mem_mb {
            out.insert(Violation::MemOvercommit {
                node: name.into(),
                requested: mem,
                capacity: node.mem_mb,
            });
        }
        if gpu > GPU_SESSION_CAP {
            out.insert(Violation::GpuCapExceeded {
                node: name.into(),
                sessions: gpu,
            });
        }
    }
    out.into_iter().collect()
}
