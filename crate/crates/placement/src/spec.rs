use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::PlacementError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub cpu_millis: u64,
    pub mem_mb: u64,
    #[serde(default)]
    pub gpus: u32,
    #[serde(default)]
    pub taints: BTreeSet<String>,
}

impl NodeSpec {
    pub fn new(name: impl Into<String>, cpu_millis: u64, mem_mb: u64, gpus: u32) -> Self {
        Self {
            name: name.into(),
            cpu_millis,
            mem_mb,
            gpus,
            taints: BTreeSet::new(),
        }
    }

    pub fn taint(mut self, t: impl Into<String>) -> Self {
        self.taints.insert(t.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSpec {
    pub name: String,
    pub cpu_millis: u64,
    pub mem_mb: u64,
    #[serde(default)]
    pub needs_gpu: bool,
    #[serde(default)]
    pub tolerations: BTreeSet<String>,
}

impl SessionSpec {
    pub fn new(name: impl Into<String>, cpu_millis: u64, mem_mb: u64, needs_gpu: bool) -> Self {
        Self {
            name: name.into(),
            cpu_millis,
            mem_mb,
            needs_gpu,
            tolerations: BTreeSet::new(),
        }
    }

    pub fn tolerate(mut self, t: impl Into<String>) -> Self {
        self.tolerations.insert(t.into());
        self
    }

    pub fn tolerates(&self, node: &NodeSpec) -> bool {
        node.taints.is_subset(&self.tolerations)
    }
}

/// Checks capacities, requests and name uniqueness.
pub fn validate(nodes: &[NodeSpec], sessions: &[SessionSpec]) -> Result<(), PlacementError> {
    let bad = |m: String| Err(PlacementError::Invalid(m));
    let mut seen = HashSet::new();
    for n in nodes {
        if n.name.is_empty() || !seen.insert(n.name.as_str()) {
            return bad(format!("node name {:?} empty or repeated", n.name));
        }
        if n.cpu_millis == 0 || n.mem_mb == 0 {
            return bad(format!("node {} has zero capacity", n.name));
        }
        if n.gpus > 1 {
            return bad(format!("node {} has {} GPUs; at most one is supported", n.name, n.gpus));
        }
    }
    let mut seen = HashSet::new();
    for s in sessions {
        if s.name.is_empty() || !seen.insert(s.name.as_str()) {
            return bad(format!("session name {:?} empty or repeated", s.name));
        }
        if s.cpu_millis == 0 || s.mem_mb == 0 {
            return bad(format!("session {} requests nothing", s.name));
        }
    }
    Ok(())
}
