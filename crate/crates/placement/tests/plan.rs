#[path = "common/oracle.rs"]
mod oracle;

use placement::{
    capacity_report, plan, verify, NodeSpec, PlacementPlan, Policy, SessionSpec, UnplacedReason,
    Violation, GPU_SESSION_CAP,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn lab_node(name: &str) -> NodeSpec {
    NodeSpec::new(name, 8000, 32768, 1).taint("gpu-lab")
}

fn student(name: &str) -> SessionSpec {
    SessionSpec::new(name, 4000, 16384, true).tolerate("gpu-lab")
}

#[test]
fn third_session_hits_the_gpu_cap() {
    let sessions = [student("a"), student("b"), student("c")];
    let p = plan(&[lab_node("n1")], &sessions, Policy::FirstFitDecreasing).unwrap();
    assert_eq!(p.placed(), 2);
    assert_eq!(p.unplaced.len(), 1);
    assert_eq!(p.unplaced[0].reason, UnplacedReason::GpuCapExceeded);
    assert_eq!(oracle::max_placeable(&[lab_node("n1")], &sessions), 2);
}

#[test]
fn missing_toleration() {
    let s = SessionSpec::new("x", 100, 100, false);
    let p = plan(&[lab_node("n1")], &[s], Policy::FirstFitDecreasing).unwrap();
    assert_eq!(p.unplaced[0].reason, UnplacedReason::NoToleratedNode);
}

#[test]
fn reasons_report_the_closest_miss() {
    let nodes = [NodeSpec::new("a", 1000, 1000, 0), NodeSpec::new("b", 4000, 500, 0)];
    let p = plan(&nodes, &[SessionSpec::new("s", 2000, 800, false)], Policy::BestFit).unwrap();
    assert_eq!(p.unplaced[0].reason, UnplacedReason::InsufficientMem);
    let p = plan(&nodes, &[SessionSpec::new("s", 5000, 100, false)], Policy::BestFit).unwrap();
    assert_eq!(p.unplaced[0].reason, UnplacedReason::InsufficientCpu);
}

#[test]
fn zero_sessions_gives_empty_plan() {
    let p = plan(&[lab_node("n1")], &[], Policy::BestFit).unwrap();
    assert_eq!(p, PlacementPlan::default());
}

#[test]
fn best_fit_prefers_the_tighter_node() {
    let nodes = [NodeSpec::new("big", 8000, 8192, 0), NodeSpec::new("small", 3000, 8192, 0)];
    let s = [SessionSpec::new("s", 2500, 1024, false)];
    let ffd = plan(&nodes, &s, Policy::FirstFitDecreasing).unwrap();
    let bf = plan(&nodes, &s, Policy::BestFit).unwrap();
    assert_eq!(ffd.assignment["s"], "big");
    assert_eq!(bf.assignment["s"], "small");
}

#[test]
fn verify_flags_hand_built_plans() {
    let nodes = [lab_node("n1")];
    let sessions: Vec<SessionSpec> = ["a", "b", "c"]
        .iter()
        .map(|n| SessionSpec::new(*n, 1000, 1024, true).tolerate("gpu-lab"))
        .collect();
    let mut p = PlacementPlan::default();
    for s in &sessions {
        p.assignment.insert(s.name.clone(), "n1".into());
    }
    assert_eq!(
        verify(&p, &nodes, &sessions),
        [Violation::GpuCapExceeded {
            node: "n1".into(),
            sessions: 3
        }]
    );
    p.assignment.insert("c".into(), "n9".into());
    assert_eq!(
        verify(&p, &nodes, &sessions),
        [Violation::UnknownNode {
            session: "c".into(),
            node: "n9".into()
        }]
    );
    let good = plan(&nodes, &sessions, Policy::FirstFitDecreasing).unwrap();
    assert_eq!(verify(&good, &nodes, &sessions), []);
}

#[test]
fn verify_catches_bookkeeping_errors() {
    let nodes = [NodeSpec::new("n", 1000, 1000, 0).taint("t")];
    let sessions = [SessionSpec::new("a", 600, 600, true), SessionSpec::new("b", 600, 600, false)];
    let mut p = PlacementPlan::default();
    p.assignment.insert("a".into(), "n".into());
    p.assignment.insert("b".into(), "n".into());
    p.assignment.insert("ghost".into(), "n".into());
    let v = verify(&p, &nodes, &sessions);
    assert!(v.contains(&Violation::UnknownSession { session: "ghost".into() }));
    assert!(v.contains(&Violation::NoGpuOnNode { session: "a".into(), node: "n".into() }));
    assert!(v.contains(&Violation::TaintNotTolerated { session: "b".into(), node: "n".into() }));
    assert!(v.iter().any(|x| matches!(x, Violation::CpuOvercommit { .. })));
    assert!(v.iter().any(|x| matches!(x, Violation::MemOvercommit { .. })));
    let empty = PlacementPlan::default();
    assert_eq!(verify(&empty, &nodes, &sessions).len(), 2);
}

#[test]
fn invalid_inputs_are_rejected() {
    let twice = [NodeSpec::new("n", 1, 1, 0), NodeSpec::new("n", 1, 1, 0)];
    assert!(plan(&twice, &[], Policy::BestFit).is_err());
    assert!(plan(&[NodeSpec::new("n", 1, 1, 2)], &[], Policy::BestFit).is_err());
    assert!(plan(&[], &[SessionSpec::new("s", 0, 1, false)], Policy::BestFit).is_err());
}

#[test]
fn capacity_examples() {
    let four: Vec<NodeSpec> = (0..4).map(|i| lab_node(&format!("n{i}"))).collect();
    assert_eq!(capacity_report(&four, &student("t")).unwrap(), 8);
    let cpu_only = [NodeSpec::new("n", 8000, 32768, 0)];
    assert_eq!(capacity_report(&cpu_only, &student("t")).unwrap(), 0);
    let t = SessionSpec::new("t", 3000, 1024, false);
    assert_eq!(capacity_report(&cpu_only, &t).unwrap(), 8000 / 3000);
}

#[test]
fn ffd_matches_oracles_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut optimal = 0;
    for _ in 0..150 {
        let (nodes, sessions) = oracle::instance(&mut rng);
        let p = plan(&nodes, &sessions, Policy::FirstFitDecreasing).unwrap();
        assert_eq!(verify(&p, &nodes, &sessions), []);
        assert_eq!(p.placed() + p.unplaced.len(), sessions.len());
        let ffd = oracle::ffd_count(&nodes, &sessions);
        let best = oracle::max_placeable(&nodes, &sessions);
        assert_eq!(p.placed(), ffd);
        assert!(ffd <= best);
        optimal += usize::from(ffd == best);
        let bf = plan(&nodes, &sessions, Policy::BestFit).unwrap();
        assert_eq!(verify(&bf, &nodes, &sessions), []);
        assert!(bf.placed() <= best);
    }
    assert!(optimal > 100, "FFD optimal on only {optimal}/150");
}

fn instances() -> impl Strategy<Value = (Vec<NodeSpec>, Vec<SessionSpec>)> {
    any::<u64>().prop_map(|seed| oracle::instance(&mut ChaCha8Rng::seed_from_u64(seed)))
}

proptest! {
    #[test]
    fn gpu_cap_holds_even_with_huge_nodes(
        n_nodes in 1usize..4,
        n_sessions in 0usize..20,
        policy in prop_oneof![Just(Policy::FirstFitDecreasing), Just(Policy::BestFit)],
    ) {
        let nodes: Vec<NodeSpec> = (0..n_nodes)
            .map(|i| NodeSpec::new(format!("n{i}"), 1_000_000, 1_000_000, 1))
            .collect();
        let sessions: Vec<SessionSpec> = (0..n_sessions)
            .map(|i| SessionSpec::new(format!("s{i}"), 1, 1, true))
            .collect();
        let p = plan(&nodes, &sessions, policy).unwrap();
        prop_assert_eq!(p.placed(), n_sessions.min(n_nodes * GPU_SESSION_CAP));
        prop_assert!(verify(&p, &nodes, &sessions).is_empty());
    }

    #[test]
    fn input_order_does_not_matter((nodes, sessions) in instances(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut n2, mut s2) = (nodes.clone(), sessions.clone());
        n2.shuffle(&mut rng);
        s2.shuffle(&mut rng);
        for policy in [Policy::FirstFitDecreasing, Policy::BestFit] {
            prop_assert_eq!(plan(&nodes, &sessions, policy).unwrap(), plan(&n2, &s2, policy).unwrap());
        }
    }
}
