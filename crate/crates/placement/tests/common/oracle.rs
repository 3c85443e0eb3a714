//! Reference placement implementations for tests: a direct first-fit-
//! decreasing and an exhaustive maximum-cardinality search.
#![allow(dead_code)]

use placement::{NodeSpec, SessionSpec};
use rand::Rng;

const CAP: usize = 2;

#[derive(Clone)]
struct Room {
    cpu: u64,
    mem: u64,
    gpu: usize,
}

fn rooms(nodes: &[NodeSpec]) -> Vec<Room> {
    nodes
        .iter()
        .map(|n| Room {
            cpu: n.cpu_millis,
            mem: n.mem_mb,
            gpu: if n.gpus > 0 { CAP } else { 0 },
        })
        .collect()
}

fn fits(n: &NodeSpec, r: &Room, s: &SessionSpec) -> bool {
    n.taints.iter().all(|t| s.tolerations.contains(t))
        && (!s.needs_gpu || r.gpu > 0)
        && s.cpu_millis <= r.cpu
        && s.mem_mb <= r.mem
}

fn take(r: &mut Room, s: &SessionSpec) {
    r.cpu -= s.cpu_millis;
    r.mem -= s.mem_mb;
    if s.needs_gpu {
        r.gpu -= 1;
    }
}

fn give(r: &mut Room, s: &SessionSpec) {
    r.cpu += s.cpu_millis;
    r.mem += s.mem_mb;
    if s.needs_gpu {
        r.gpu += 1;
    }
}

/// Sessions placed by first-fit-decreasing on CPU (ties: memory, name),
/// nodes in name order.
pub fn ffd_count(nodes: &[NodeSpec], sessions: &[SessionSpec]) -> usize {
    let mut nodes = nodes.to_vec();
    nodes.sort_by(|a, b| a.name.cmp(&b.name));
    let mut sessions = sessions.to_vec();
    sessions.sort_by(|a, b| {
        b.cpu_millis
            .cmp(&a.cpu_millis)
            .then(b.mem_mb.cmp(&a.mem_mb))
            .then(a.name.cmp(&b.name))
    });
    let mut rooms = rooms(&nodes);
    let mut placed = 0;
    for s in &sessions {
        if let Some(i) = (0..nodes.len()).find(|&i| fits(&nodes[i], &rooms[i], s)) {
            take(&mut rooms[i], s);
            placed += 1;
        }
    }
    placed
}

/// Largest number of sessions that can be placed together.
pub fn max_placeable(nodes: &[NodeSpec], sessions: &[SessionSpec]) -> usize {
    let mut sessions = sessions.to_vec();
    sessions.sort_by_key(|s| std::cmp::Reverse(s.cpu_millis));
    let mut rooms = rooms(nodes);
    let mut best = 0;
    search(nodes, &sessions, 0, 0, &mut rooms, &mut best);
    best
}

fn search(
    nodes: &[NodeSpec],
    sessions: &[SessionSpec],
    i: usize,
    placed: usize,
    rooms: &mut Vec<Room>,
    best: &mut usize,
) {
    if placed > *best {
        *best = placed;
    }
    if i == sessions.len() || placed + (sessions.len() - i) <= *best {
        return;
    }
    let s = &sessions[i];
    for j in 0..nodes.len() {
        if !fits(&nodes[j], &rooms[j], s) {
            continue;
        }
        // Identical nodes in identical states are interchangeable.
        let twin = (0..j).any(|k| {
            nodes[k].taints == nodes[j].taints
                && nodes[k].gpus.min(1) == nodes[j].gpus.min(1)
                && rooms[k].cpu == rooms[j].cpu
                && rooms[k].mem == rooms[j].mem
                && rooms[k].gpu == rooms[j].gpu
        });
        if twin {
            continue;
        }
        take(&mut rooms[j], s);
        search(nodes, sessions, i + 1, placed + 1, rooms, best);
        give(&mut rooms[j], s);
    }
    search(nodes, sessions, i + 1, placed, rooms, best);
}

const TAINTS: [&str; 2] = ["gpu-lab", "ssd"];

/// Random instance with up to 6 nodes and 12 sessions.
pub fn instance(rng: &mut impl Rng) -> (Vec<NodeSpec>, Vec<SessionSpec>) {
    let nodes = (0..rng.gen_range(1..=6))
        .map(|i| {
            let mut n = NodeSpec::new(
                format!("node-{i}"),
                rng.gen_range(4..=32) * 500,
                rng.gen_range(4..=64) * 1024,
                u32::from(rng.gen_bool(0.6)),
            );
            for t in TAINTS {
                if rng.gen_bool(0.3) {
                    n = n.taint(t);
                }
            }
            n
        })
        .collect();
    let sessions = (0..rng.gen_range(0..=12))
        .map(|i| {
            let mut s = SessionSpec::new(
                format!("s{i:02}"),
                rng.gen_range(1..=16) * 500,
                rng.gen_range(1..=32) * 1024,
                rng.gen_bool(0.5),
            );
            for t in TAINTS {
                if rng.gen_bool(0.6) {
                    s = s.tolerate(t);
                }
            }
            s
        })
        .collect();
    (nodes, sessions)
}
