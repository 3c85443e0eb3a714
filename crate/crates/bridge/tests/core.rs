use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use bridge::{Bridge, BridgeConfig, BridgeError, ConnId, Route};
use msggraph::{Clock, QueuePolicy, TopicName, Value};
use proptest::prelude::*;
use wirecodec::{Encoding, Op, StatusLevel, WireFrame, AUTH_FAILED_TEXT};

#[derive(Default)]
struct ManualClock(AtomicU64);

impl ManualClock {
    fn advance_ms(&self, ms: u64) {
        self.0.fetch_add(ms * 1_000_000, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ns(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

fn bridge_with(routes: Vec<Route>) -> (Bridge, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::default());
    let b = Bridge::new(BridgeConfig::new(routes), clock.clone()).unwrap();
    (b, clock)
}

fn two_groups() -> (Bridge, Arc<ManualClock>) {
    bridge_with(vec![
        Route::new("teamA").isolated(),
        Route::new("teamB").isolated(),
    ])
}

fn hello() -> WireFrame {
    WireFrame::hello(vec![1], vec![Encoding::Cbor, Encoding::Json], None)
}

fn open(b: &mut Bridge, path: &str) -> ConnId {
    let c = b.accept(path).unwrap();
    b.on_frame(c, hello()).unwrap();
    let out = b.poll(c).unwrap();
    assert_eq!(out.frames.len(), 1);
    assert_eq!(out.frames[0].op, Op::Hello);
    c
}

fn frames(b: &mut Bridge, c: ConnId) -> Vec<WireFrame> {
    b.poll(c).unwrap().frames
}

fn publishes(b: &mut Bridge, c: ConnId) -> Vec<Value> {
    frames(b, c)
        .into_iter()
        .filter(|f| f.op == Op::Publish)
        .map(|f| f.msg.unwrap())
        .collect()
}

fn scan(i: i64) -> Value {
    Value::map([("seq", Value::Int(i)), ("ranges", Value::Bytes(vec![i as u8; 8]))])
}

#[test]
fn unknown_path_is_refused() {
    let (mut b, _) = two_groups();
    assert!(matches!(b.accept("/x"), Err(BridgeError::UnknownRoute(_))));
    assert!(matches!(b.accept("/bridge/teamC"), Err(BridgeError::UnknownRoute(_))));
    assert!(b.connections().is_empty());
}

#[test]
fn hello_negotiates_encoding() {
    let (mut b, _) = two_groups();
    let c = b.accept("/bridge/teamA").unwrap();
    b.on_frame(c, hello()).unwrap();
    let reply = frames(&mut b, c).remove(0);
    assert_eq!(reply.encoding_hint, Some(Encoding::Cbor));
    let rec = b.connection(c).unwrap();
    assert!(rec.authenticated);
    assert_eq!(rec.session.encoding, Encoding::Cbor);
    assert_eq!(b.encoding_for(c, &reply), Encoding::Json);
    assert_eq!(b.encoding_for(c, &WireFrame::unadvertise("/a")), Encoding::Cbor);
}

#[test]
fn legacy_peer_without_hello_speaks_json() {
    let (mut b, _) = two_groups();
    let c = b.accept("/bridge/teamA").unwrap();
    b.on_frame(c, WireFrame::subscribe("/scan", None, None)).unwrap();
    let rec = b.connection(c).unwrap();
    assert_eq!(rec.session.encoding, Encoding::Json);
    assert!(rec.subscriptions.contains_key("/scan"));
}

#[test]
fn relay_identity() {
    let (mut b, _) = two_groups();
    let duct = open(&mut b, "/bridge/teamA");
    let client = open(&mut b, "/bridge/teamA");
    b.on_frame(client, WireFrame::subscribe("/scan", None, None)).unwrap();
    b.on_frame(duct, WireFrame::advertise("/scan", "sensor_msgs/LaserScan", false))
        .unwrap();
    b.on_frame(duct, WireFrame::publish("/scan", scan(7))).unwrap();
    assert_eq!(publishes(&mut b, client), vec![scan(7)]);
    assert!(frames(&mut b, duct).is_empty());
}

#[test]
fn wrong_token_closes_with_status() {
    let (mut b, _) = bridge_with(vec![Route::new("teamA").with_token("s3cret")]);
    let c = b.accept("/bridge/teamA").unwrap();
    b.on_frame(
        c,
        WireFrame::hello(vec![1], vec![Encoding::Json], Some("nope".into())),
    )
    .unwrap();
    let out = b.poll(c).unwrap();
    assert!(out.close);
    assert_eq!(out.frames.len(), 1);
    assert_eq!(out.frames[0].level, Some(StatusLevel::Error));
    assert_eq!(out.frames[0].text.as_deref(), Some(AUTH_FAILED_TEXT));
    assert!(!b.connection(c).unwrap().authenticated);
    // Later frames have no effect.
    b.on_frame(c, WireFrame::subscribe("/scan", None, None)).unwrap();
    assert!(b.connection(c).unwrap().subscriptions.is_empty());

    // A peer that skips hello cannot present a token at all.
    let c2 = b.accept("/bridge/teamA").unwrap();
    b.on_frame(c2, WireFrame::subscribe("/scan", None, None)).unwrap();
    assert!(b.poll(c2).unwrap().close);

    let ok = b.accept("/bridge/teamA").unwrap();
    b.on_frame(
        ok,
        WireFrame::hello(vec![1], vec![Encoding::Json], Some("s3cret".into())),
    )
    .unwrap();
    let out = b.poll(ok).unwrap();
    assert!(!out.close);
    assert!(b.connection(ok).unwrap().authenticated);
}

#[test]
fn publish_on_unadvertised_topic_keeps_connection() {
    let (mut b, _) = two_groups();
    let c = open(&mut b, "/bridge/teamA");
    b.on_frame(c, WireFrame::publish("/odom", Value::Int(1))).unwrap();
    let out = b.poll(c).unwrap();
    assert!(!out.close);
    assert_eq!(out.frames[0].op, Op::Status);
    assert!(out.frames[0].text.as_ref().unwrap().contains("unadvertised"));
    b.on_frame(c, WireFrame::advertise("/odom", "nav_msgs/Odometry", false))
        .unwrap();
    b.on_frame(c, WireFrame::publish("/odom", Value::Int(1))).unwrap();
    assert!(frames(&mut b, c).is_empty());
}

#[test]
fn type_conflict_is_reported() {
    let (mut b, _) = two_groups();
    let a = open(&mut b, "/bridge/teamA");
    let c = open(&mut b, "/bridge/teamA");
    b.on_frame(a, WireFrame::advertise("/odom", "nav_msgs/Odometry", false))
        .unwrap();
    b.on_frame(c, WireFrame::advertise("/odom", "std_msgs/String", false))
        .unwrap();
    let f = frames(&mut b, c);
    assert_eq!(f[0].op, Op::Status);
    assert!(b.connection(c).unwrap().advertisements.is_empty());
}

#[test]
fn undecodable_bytes_answered_with_status() {
    let (mut b, _) = two_groups();
    let c = open(&mut b, "/bridge/teamA");
    b.on_message(c, b"{\"op\":", false).unwrap();
    b.on_message(c, &[0xff, 0x00], true).unwrap();
    let f = frames(&mut b, c);
    assert_eq!(f.len(), 2);
    assert!(f.iter().all(|f| f.op == Op::Status));
}

#[test]
fn bytes_round_trip_through_session_encoding() {
    let (mut b, _) = two_groups();
    let duct = open(&mut b, "/bridge/teamA");
    let client = b.accept("/bridge/teamA").unwrap();
    let h = WireFrame::hello(vec![1], vec![Encoding::Json], None);
    b.on_message(client, &wirecodec::encode(&h, Encoding::Json).unwrap().bytes, false)
        .unwrap();
    frames(&mut b, client);
    let sub = wirecodec::encode(&WireFrame::subscribe("/scan", None, None), Encoding::Json).unwrap();
    b.on_message(client, &sub.bytes, false).unwrap();
    for f in [
        WireFrame::advertise("/scan", "LaserScan", false),
        WireFrame::publish("/scan", scan(3)),
    ] {
        let enc = wirecodec::encode(&f, Encoding::Cbor).unwrap();
        b.on_message(duct, &enc.bytes, true).unwrap();
    }
    let out = frames(&mut b, client);
    let wire = b.encode_for(client, &out[0]);
    assert_eq!(wire.encoding, Encoding::Json);
    let back = wirecodec::decode(&wire.bytes, Encoding::Json).unwrap();
    assert_eq!(back.msg, Some(scan(3)));
}

#[test]
fn service_call_routed_to_provider_connection() {
    let (mut b, _) = two_groups();
    let duct = open(&mut b, "/bridge/teamA");
    let client = open(&mut b, "/bridge/teamA");
    b.on_frame(duct, WireFrame::advertise_service("/get_map", Some("GetMap".into())))
        .unwrap();
    b.on_frame(client, WireFrame::call_service("42", "/get_map", Value::Null))
        .unwrap();
    let forwarded = frames(&mut b, duct);
    assert_eq!(forwarded.len(), 1);
    assert_eq!(forwarded[0].op, Op::CallService);
    let bid = forwarded[0].id.clone().unwrap();
    let rec = b.connection(duct).unwrap();
    assert_eq!(rec.inflight_calls.get(&bid), Some(&format!("c{client}")));

    b.on_frame(duct, WireFrame::service_ok(bid, None, Value::from("map")))
        .unwrap();
    let reply = frames(&mut b, client);
    assert_eq!(reply.len(), 1);
    assert_eq!(reply[0].op, Op::ServiceResponse);
    assert_eq!(reply[0].id.as_deref(), Some("42"));
    assert_eq!(reply[0].result, Some(true));
    assert_eq!(reply[0].msg, Some(Value::from("map")));
    assert!(b.connection(duct).unwrap().inflight_calls.is_empty());
}

#[test]
fn provider_drop_mid_call_faults_caller() {
    let (mut b, _) = two_groups();
    let duct = open(&mut b, "/bridge/teamA");
    let client = open(&mut b, "/bridge/teamA");
    b.on_frame(duct, WireFrame::advertise_service("/get_map", None)).unwrap();
    b.on_frame(client, WireFrame::call_service("1", "/get_map", Value::Null))
        .unwrap();
    assert_eq!(frames(&mut b, duct).len(), 1);
    b.disconnect(duct);
    let reply = frames(&mut b, client);
    assert_eq!(reply[0].result, Some(false));
    let text = reply[0].text.clone().unwrap();
    assert!(text.starts_with("provider fault"), "{text}");
    // Service is gone: a new call fails with no provider.
    b.on_frame(client, WireFrame::call_service("2", "/get_map", Value::Null))
        .unwrap();
    let reply = frames(&mut b, client);
    assert!(reply[0].text.as_ref().unwrap().starts_with("no provider"));
}

#[test]
fn local_caller_reaches_remote_provider() {
    let (mut b, _) = two_groups();
    let duct = open(&mut b, "/bridge/teamA");
    b.on_frame(duct, WireFrame::advertise_service("/add", None)).unwrap();
    let graph = b.route_graph("teamA").unwrap();
    let pending = graph.call_service_pending("/add", Value::Int(1));
    let call = frames(&mut b, duct).remove(0);
    assert_eq!(
        b.connection(duct).unwrap().inflight_calls.values().next().map(String::as_str),
        Some("local")
    );
    b.on_frame(duct, WireFrame::service_ok(call.id.unwrap(), None, Value::Int(2)))
        .unwrap();
    assert_eq!(pending.try_result(), Some(Ok(Value::Int(2))));
}

#[test]
fn duplicate_call_id_rejected() {
    let (mut b, _) = two_groups();
    let duct = open(&mut b, "/bridge/teamA");
    let client = open(&mut b, "/bridge/teamA");
    b.on_frame(duct, WireFrame::advertise_service("/slow", None)).unwrap();
    b.on_frame(client, WireFrame::call_service("x", "/slow", Value::Null)).unwrap();
    b.on_frame(client, WireFrame::call_service("x", "/slow", Value::Null)).unwrap();
    let f = frames(&mut b, client);
    assert_eq!(f.len(), 1);
    assert_eq!(f[0].op, Op::Status);
    assert_eq!(frames(&mut b, duct).len(), 1);
}

#[test]
fn disconnect_cleans_up_everything() {
    let (mut b, _) = two_groups();
    let duct = open(&mut b, "/bridge/teamA");
    let graph = b.route_graph("teamA").unwrap();
    for t in ["/a", "/b", "/c"] {
        b.on_frame(duct, WireFrame::subscribe(t, None, None)).unwrap();
    }
    b.on_frame(duct, WireFrame::advertise("/map", "OccupancyGrid", true)).unwrap();
    b.on_frame(duct, WireFrame::publish("/map", Value::from("grid"))).unwrap();
    b.on_frame(duct, WireFrame::advertise_service("/s", None)).unwrap();
    let before = graph.snapshot();
    let subs = |s: &msggraph::GraphSnapshot| {
        s.topics.iter().map(|t| t.subscriber_count).sum::<usize>()
    };
    assert_eq!(subs(&before), 3);
    b.disconnect(duct);
    let after = graph.snapshot();
    assert_eq!(subs(&after), 0);
    assert!(after.services.is_empty());
    assert!(b.connection(duct).is_none());
    assert!(matches!(b.poll(duct), Err(BridgeError::UnknownConnection(_))));
    // The latched value outlives its publisher.
    let retained = graph.retained(&TopicName::new("/map").unwrap()).unwrap();
    assert_eq!(retained.payload, Value::from("grid"));

    let idle = open(&mut b, "/bridge/teamA");
    let snap = graph.snapshot();
    b.disconnect(idle);
    assert_eq!(graph.snapshot(), snap);
    b.disconnect(idle);
}

#[test]
fn shared_routes_share_a_graph() {
    let (mut b, _) = bridge_with(vec![
        Route::new("lobby"),
        Route::new("hall"),
        Route::new("lab").isolated(),
    ]);
    let ga = b.route_graph("lobby").unwrap();
    assert!(ga.same_graph(&b.route_graph("hall").unwrap()));
    assert!(!ga.same_graph(&b.route_graph("lab").unwrap()));
    let p = open(&mut b, "/bridge/lobby");
    let s = open(&mut b, "/bridge/hall");
    b.on_frame(s, WireFrame::subscribe("/x", None, None)).unwrap();
    b.on_frame(p, WireFrame::advertise("/x", "T", false)).unwrap();
    b.on_frame(p, WireFrame::publish("/x", Value::Int(5))).unwrap();
    assert_eq!(publishes(&mut b, s), vec![Value::Int(5)]);
}

#[test]
fn throttle_on_100hz_topic() {
    let (mut b, clock) = two_groups();
    let duct = open(&mut b, "/bridge/teamA");
    let client = open(&mut b, "/bridge/teamA");
    b.on_frame(client, WireFrame::subscribe("/scan", Some(100), Some(1))).unwrap();
    b.on_frame(duct, WireFrame::advertise("/scan", "LaserScan", false)).unwrap();
    let mut got = 0;
    for ms in 0..5000 {
        if ms % 10 == 0 {
            b.on_frame(duct, WireFrame::publish("/scan", scan(ms))).unwrap();
        }
        got += publishes(&mut b, client).len();
        clock.advance_ms(1);
    }
    assert!((48..=55).contains(&got), "{got}");
    b.disconnect(client);
    let s = b.stats()["teamA"]["/scan"];
    assert_eq!(s.published, 500);
    assert_eq!(s.forwarded, got as u64);
    assert_eq!(s.forwarded + s.dropped_queue + s.lost_on_close, 500);
}

#[test]
fn throttle_reports_next_wake() {
    let (mut b, clock) = two_groups();
    let duct = open(&mut b, "/bridge/teamA");
    let client = open(&mut b, "/bridge/teamA");
    b.on_frame(client, WireFrame::subscribe("/s", Some(100), Some(5))).unwrap();
    b.on_frame(duct, WireFrame::advertise("/s", "T", false)).unwrap();
    b.on_frame(duct, WireFrame::publish("/s", Value::Int(1))).unwrap();
    b.on_frame(duct, WireFrame::publish("/s", Value::Int(2))).unwrap();
    clock.advance_ms(3);
    let out = b.poll(client).unwrap();
    assert_eq!(out.frames.len(), 1);
    assert_eq!(out.next_wake_ns, Some(103_000_000));
    clock.advance_ms(100);
    assert_eq!(publishes(&mut b, client), vec![Value::Int(2)]);
    assert_eq!(b.poll(client).unwrap().next_wake_ns, None);
}

#[test]
fn zero_subscriber_publishes_are_counted() {
    let (mut b, _) = two_groups();
    let duct = open(&mut b, "/bridge/teamA");
    b.on_frame(duct, WireFrame::advertise("/odom", "Odom", false)).unwrap();
    b.on_frame(duct, WireFrame::publish("/odom", Value::Int(1))).unwrap();
    let s = b.stats()["teamA"]["/odom"];
    assert_eq!((s.published, s.unrouted), (1, 1));
}

#[test]
fn queued_frames_at_disconnect_are_counted() {
    let (mut b, _) = two_groups();
    let duct = open(&mut b, "/bridge/teamA");
    let client = open(&mut b, "/bridge/teamA");
    b.on_frame(client, WireFrame::subscribe("/odom", None, Some(3))).unwrap();
    b.on_frame(duct, WireFrame::advertise("/odom", "Odom", false)).unwrap();
    for i in 0..5 {
        b.on_frame(duct, WireFrame::publish("/odom", Value::Int(i))).unwrap();
    }
    b.disconnect(client);
    let s = b.stats()["teamA"]["/odom"];
    assert_eq!((s.dropped_queue, s.lost_on_close, s.forwarded), (2, 3, 0));
}

#[test]
fn waker_fires_on_graph_traffic() {
    let (mut b, _) = two_groups();
    let client = open(&mut b, "/bridge/teamA");
    b.on_frame(client, WireFrame::subscribe("/x", None, None)).unwrap();
    let hits = Arc::new(AtomicU64::new(0));
    let h = hits.clone();
    b.set_waker(client, move || {
        h.fetch_add(1, Ordering::SeqCst);
    })
    .unwrap();
    let graph = b.route_graph("teamA").unwrap();
    let p = graph
        .advertise(msggraph::TopicSpec::new(TopicName::new("/x").unwrap(), "T"))
        .unwrap();
    p.publish(Value::Int(1));
    assert!(hits.load(Ordering::SeqCst) >= 1);
    let _local = graph.subscribe(&TopicName::new("/y").unwrap(), QueuePolicy::default());
}

#[derive(Debug, Clone)]
enum Action {
    Sub(usize, u8),
    Adv(usize, u8),
    Pub(usize, u8, i64),
    Drop(usize),
}

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        (0usize..6, 0u8..3).prop_map(|(c, t)| Action::Sub(c, t)),
        (0usize..6, 0u8..3).prop_map(|(c, t)| Action::Adv(c, t)),
        (0usize..6, 0u8..3, any::<i64>()).prop_map(|(c, t, v)| Action::Pub(c, t, v)),
        (0usize..6).prop_map(Action::Drop),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn isolated_routes_never_leak(actions in prop::collection::vec(action(), 1..80)) {
        let (mut b, _) = two_groups();
        // Connections 0..3 on teamA, 3..6 on teamB.
        let path = |i: usize| if i < 3 { "/bridge/teamA" } else { "/bridge/teamB" };
        let mut conns: Vec<ConnId> = (0..6).map(|i| open(&mut b, path(i))).collect();
        for a in actions {
            match a {
                Action::Sub(c, t) => b.on_frame(conns[c], WireFrame::subscribe(format!("/t{t}"), None, None)).unwrap(),
                Action::Adv(c, t) => b.on_frame(conns[c], WireFrame::advertise(format!("/t{t}"), "T", false)).unwrap(),
                Action::Pub(c, t, v) => {
                    let tagged = Value::map([("group", Value::Int((c / 3) as i64)), ("v", Value::Int(v))]);
                    b.on_frame(conns[c], WireFrame::publish(format!("/t{t}"), tagged)).unwrap()
                }
                Action::Drop(c) => {
                    b.disconnect(conns[c]);
                    conns[c] = open(&mut b, path(c));
                }
            }
            for (i, &c) in conns.iter().enumerate() {
                for msg in publishes(&mut b, c) {
                    prop_assert_eq!(msg.get("group").and_then(Value::as_i64), Some((i / 3) as i64));
                }
            }
        }
    }

    #[test]
    fn throttle_upper_bound(throttle in 1u64..300, period in 1u64..50, secs in 1u64..4) {
        let (mut b, clock) = two_groups();
        let duct = open(&mut b, "/bridge/teamA");
        let client = open(&mut b, "/bridge/teamA");
        b.on_frame(client, WireFrame::subscribe("/s", Some(throttle), Some(4))).unwrap();
        b.on_frame(duct, WireFrame::advertise("/s", "T", false)).unwrap();
        let mut got = 0u64;
        for ms in 0..secs * 1000 {
            if ms % period == 0 {
                b.on_frame(duct, WireFrame::publish("/s", Value::Int(ms as i64))).unwrap();
            }
            got += publishes(&mut b, client).len() as u64;
            clock.advance_ms(1);
        }
        let bound = (1000.0 / throttle as f64 + 1.0) * secs as f64;
        prop_assert!(got as f64 <= bound, "{} > {}", got, bound);
    }
}
