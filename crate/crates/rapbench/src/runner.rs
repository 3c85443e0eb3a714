use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use bridge::{Bridge, BridgeConfig, ConnId, Route};
use duct::{DuctAction, DuctConfig, DuctCore, Phase};
use msggraph::{Clock, Graph, PublisherHandle, QueuePolicy, SubscriptionHandle, TopicName, TopicSpec, Value};
use netsim::{attach, FrameMeta, LinkEndpoint, NetEventKind, Side, SimClock, SimLink};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robotsim::{message_stamp, Robot, RtfMeter};
use wirecodec::{encode_value, Encoding, Op, WireFrame, PROTOCOL_VERSION};

use crate::report::{Direction, LinkReport, Percentiles, RtfPoint, RunReport, TopicReport};
use crate::scenario::{ScenarioSpec, Traffic};
use crate::RunError;

const MS: u64 = 1_000_000;

fn startup(component: &'static str) -> impl Fn(String) -> RunError {
    move |message| RunError::Startup { component, message }
}

/// Everything known about one mirrored topic, from both ends.
struct Ledger {
    direction: Direction,
    /// Publish time and encoded payload, keyed by header stamp.
    published: BTreeMap<u64, (u64, Vec<u8>)>,
    sent: u64,
    delivered: u64,
    delivered_in_window: u64,
    latencies: Vec<u64>,
    seen: BTreeSet<u64>,
    last: Option<u64>,
    mismatches: u64,
    out_of_order: u64,
    duplicates: u64,
    unmatched: u64,
}

impl Ledger {
    fn new(direction: Direction) -> Self {
        Self {
            direction,
            published: BTreeMap::new(),
            sent: 0,
            delivered: 0,
            delivered_in_window: 0,
            latencies: Vec::new(),
            seen: BTreeSet::new(),
            last: None,
            mismatches: 0,
            out_of_order: 0,
            duplicates: 0,
            unmatched: 0,
        }
    }

    fn publish(&mut self, payload: &Value, now: u64, encoding: Encoding) {
        self.sent += 1;
        if let Some(stamp) = message_stamp(payload) {
            let bytes = encode_value(payload, encoding).unwrap_or_default();
            self.published.insert(stamp, (now, bytes));
        }
    }

    fn deliver(&mut self, payload: &Value, now: u64, in_window: bool, encoding: Encoding) {
        self.delivered += 1;
        if in_window {
            self.delivered_in_window += 1;
        }
        let Some(stamp) = message_stamp(payload) else {
            self.unmatched += 1;
            return;
        };
        if !self.seen.insert(stamp) {
            self.duplicates += 1;
        }
        if self.last.is_some_and(|l| stamp < l) {
            self.out_of_order += 1;
        }
        self.last = Some(self.last.map_or(stamp, |l| l.max(stamp)));
        match self.published.get(&stamp) {
            None => self.unmatched += 1,
            Some((t, bytes)) => {
                self.latencies.push(now.saturating_sub(*t));
                if encode_value(payload, encoding).ok().as_ref() != Some(bytes) {
                    self.mismatches += 1;
                }
            }
        }
    }
}

enum Source {
    Nav {
        robot: Box<Robot>,
        next_step_ns: u64,
        slot_ns: u64,
        meter: RtfMeter,
    },
    Bulk {
        publisher: PublisherHandle,
        rng: Box<ChaCha8Rng>,
        next_ns: u64,
        period_ns: u64,
        min: usize,
        max: usize,
        seq: i64,
    },
}

fn stamped(payload: Value, now: u64) -> Value {
    let Value::Map(mut m) = payload else {
        unreachable!("stamped payloads are maps")
    };
    m.insert("header".into(), Value::map([("stamp", Value::Int(now as i64))]));
    Value::Map(m)
}

/// Robot, duct, impaired link, bridge and a cloud client on one virtual
/// clock, stepped in 1 ms cycles.
struct Testbed {
    encoding: Encoding,
    clock: SimClock,
    link: SimLink,
    client_ep: LinkEndpoint,
    server_ep: LinkEndpoint,
    bridge: Bridge,
    route: String,
    path: String,
    duct: DuctCore,
    duct_conn: Option<ConnId>,
    cloud_conn: ConnId,
    cmd: Option<(u64, u64)>,
    source: Source,
    taps: Vec<(String, SubscriptionHandle)>,
    ledgers: BTreeMap<String, Ledger>,
    send_failed: BTreeMap<String, u64>,
    synced: BTreeSet<u64>,
    pending_wake: bool,
    window_end_ns: u64,
    rtf: Vec<RtfPoint>,
}

impl Testbed {
    fn new(spec: &ScenarioSpec, seed: u64) -> Result<Self, RunError> {
        let resolved = spec.resolve()?;
        let duct_config: DuctConfig = resolved.duct;
        let encoding = spec.encoding;
        let clock = SimClock::new_virtual();
        let shared: Arc<dyn Clock> = Arc::new(clock.clone());

        let mut route = Route::new(duct_config.route.clone());
        if let Some(t) = duct_config.token() {
            route = route.with_token(t);
        }
        let path = route.path();
        let mut bridge = Bridge::new(BridgeConfig::new(vec![route]), Arc::clone(&shared))
            .map_err(|e| startup("bridge")(e.to_string()))?;

        let local = Graph::with_clock(Arc::clone(&shared));
        let mut ledgers = BTreeMap::new();
        let mut taps = Vec::new();
        for rule in &duct_config.local_to_remote {
            let name = TopicName::new(&rule.topic).map_err(|e| RunError::ScenarioInvalid(e.to_string()))?;
            taps.push((rule.topic.clone(), local.subscribe(&name, QueuePolicy::unbounded())));
            ledgers.insert(rule.topic.clone(), Ledger::new(Direction::LocalToRemote));
        }
        for rule in &duct_config.remote_to_local {
            let name = TopicName::new(&rule.topic).map_err(|e| RunError::ScenarioInvalid(e.to_string()))?;
            taps.push((rule.topic.clone(), local.subscribe(&name, QueuePolicy::unbounded())));
            ledgers.insert(rule.topic.clone(), Ledger::new(Direction::RemoteToLocal));
        }

        let duct = DuctCore::new(duct_config.clone(), local.clone(), seed)
            .map_err(|e| startup("duct")(e.to_string()))?;
        let (link, client_ep, server_ep) =
            attach(spec.link.clone(), seed, clock.clone()).map_err(|e| startup("netsim")(e.to_string()))?;

        let source = match &spec.traffic {
            Traffic::Nav { .. } => {
                let robot = Robot::new(&local, resolved.world, spec.robot)
                    .map_err(|e| startup("robot")(e.to_string()))?;
                let budget = Duration::from_nanos(robot.tick_ns());
                let slot_ns = spec.load.busy(budget, Duration::ZERO).max(budget).as_nanos() as u64;
                Source::Nav {
                    robot: Box::new(robot),
                    next_step_ns: slot_ns,
                    slot_ns,
                    meter: RtfMeter::new(robotsim::realtime::MIN_WINDOW),
                }
            }
            Traffic::Bulk {
                topic,
                period_ms,
                min_bytes,
                max_bytes,
            } => {
                let name = TopicName::new(topic).map_err(|e| RunError::ScenarioInvalid(e.to_string()))?;
                let publisher = local
                    .advertise(TopicSpec::new(name, "sensor_msgs/PointCloud2"))
                    .map_err(|e| startup("bulk source")(e.to_string()))?;
                Source::Bulk {
                    publisher,
                    rng: Box::new(ChaCha8Rng::seed_from_u64(seed ^ 0xb01c)),
                    next_ns: period_ms * MS,
                    period_ns: period_ms * MS,
                    min: *min_bytes,
                    max: *max_bytes,
                    seq: 0,
                }
            }
        };

        // The cloud client talks to the bridge in-process.
        let cloud_conn = bridge
            .accept(&path)
            .map_err(|e| startup("cloud client")(e.to_string()))?;
        let token = duct_config.token().map(str::to_owned);
        let mut setup = vec![WireFrame::hello(vec![PROTOCOL_VERSION], vec![encoding], token)];
        if spec.client.subscribe.is_empty() {
            for rule in &duct_config.local_to_remote {
                setup.push(WireFrame::subscribe(rule.topic.clone(), None, None));
            }
        } else {
            for s in &spec.client.subscribe {
                let throttle = (s.throttle_rate_ms > 0).then_some(s.throttle_rate_ms);
                setup.push(WireFrame::subscribe(s.topic.clone(), throttle, s.queue_length));
            }
        }
        for rule in &duct_config.remote_to_local {
            setup.push(WireFrame::advertise(rule.topic.clone(), rule.type_name.clone(), false));
        }
        for f in setup {
            bridge
                .on_frame(cloud_conn, f)
                .map_err(|e| startup("cloud client")(e.to_string()))?;
        }
        bridge
            .poll(cloud_conn)
            .map_err(|e| startup("cloud client")(e.to_string()))?;

        let cmd = match spec.traffic {
            Traffic::Nav { cmd_rate_hz }
                if cmd_rate_hz > 0.0 && ledgers.contains_key(robotsim::CMD_TOPIC) =>
            {
                let period = (1e9 / cmd_rate_hz).round().max(MS as f64) as u64;
                Some((period, period))
            }
            _ => None,
        };

        Ok(Self {
            encoding,
            clock,
            link,
            client_ep,
            server_ep,
            bridge,
            route: duct_config.route.clone(),
            path,
            duct,
            duct_conn: None,
            cloud_conn,
            cmd,
            source,
            taps,
            ledgers,
            send_failed: BTreeMap::new(),
            synced: BTreeSet::new(),
            pending_wake: false,
            window_end_ns: spec.duration_ns(),
            rtf: Vec::new(),
        })
    }

    fn produce(&mut self, now: u64) {
        match &mut self.source {
            Source::Nav {
                robot,
                next_step_ns,
                slot_ns,
                meter,
            } => {
                while *next_step_ns <= now {
                    robot.step();
                    *next_step_ns += *slot_ns;
                    if let Some(s) = meter.record(robot.tick_ns(), *slot_ns) {
                        self.rtf.push(RtfPoint {
                            t_s: (*next_step_ns - *slot_ns) as f64 / 1e9,
                            sim_advanced_ns: s.sim_advanced_ns,
                            wall_elapsed_ns: s.wall_elapsed_ns,
                            rtf: s.rtf(),
                        });
                    }
                }
            }
            Source::Bulk {
                publisher,
                rng,
                next_ns,
                period_ns,
                min,
                max,
                seq,
            } => {
                while *next_ns <= now {
                    let n = rng.gen_range(*min..=*max);
                    let mut data = vec![0u8; n];
                    rng.fill(&mut data[..]);
                    *seq += 1;
                    let payload = Value::map([
                        ("header", Value::map([("stamp", Value::Int(now as i64))])),
                        ("seq", Value::Int(*seq)),
                        ("data", Value::Bytes(data)),
                    ]);
                    publisher.publish(payload);
                    *next_ns += *period_ns;
                }
            }
        }
        if let Some((period, next)) = &mut self.cmd {
            while *next <= now {
                let t = *next as f64 / 1e9;
                let payload = stamped(robotsim::cmd_vel(0.1, 0.4 * (0.5 * t).cos()), now);
                if let Some(l) = self.ledgers.get_mut(robotsim::CMD_TOPIC) {
                    l.publish(&payload, now, self.encoding);
                }
                let frame = WireFrame::publish(robotsim::CMD_TOPIC, payload);
                // The client's own session never closes, so this cannot fail.
                let _ = self.bridge.on_frame(self.cloud_conn, frame);
                *next += *period;
            }
        }
    }

    fn drain_taps(&mut self, now: u64, direction: Direction) {
        let in_window = now <= self.window_end_ns;
        for (topic, tap) in &self.taps {
            let ledger = self.ledgers.get_mut(topic).expect("every tap has a ledger");
            if ledger.direction != direction {
                continue;
            }
            for env in tap.drain() {
                match direction {
                    Direction::LocalToRemote => ledger.publish(&env.payload, now, self.encoding),
                    Direction::RemoteToLocal => ledger.deliver(&env.payload, now, in_window, self.encoding),
                }
            }
        }
    }

    fn meta(op: Op, topic: Option<&String>, encoding: Encoding) -> FrameMeta {
        FrameMeta {
            op: op.to_string(),
            tag: (op == Op::Publish).then(|| topic.cloned()).flatten(),
            binary: encoding == Encoding::Cbor,
        }
    }

    /// Bridge holds every advertisement and subscription the duct asks for.
    fn rules_active(&self) -> bool {
        let Some(rec) = self.duct_conn.and_then(|c| self.bridge.connection(c)) else {
            return false;
        };
        let config = self.duct.config();
        config
            .local_to_remote
            .iter()
            .all(|r| rec.advertisements.iter().any(|a| a.name.as_str() == r.topic))
            && config
                .remote_to_local
                .iter()
                .all(|r| rec.subscriptions.contains_key(&r.topic))
    }

    fn tick(&mut self, producing: bool) {
        let now = self.clock.now_ns();
        if producing {
            self.produce(now);
        }
        self.drain_taps(now, Direction::LocalToRemote);

        match self.duct.tick(now) {
            Some(DuctAction::Connect) => match self.client_ep.connect() {
                Ok(_) => self.duct.on_connected(now),
                Err(_) => self.duct.on_connect_failed(now),
            },
            Some(DuctAction::Close) => self.client_ep.close(),
            None => {}
        }
        while self.client_ep.is_connected() && self.client_ep.send_ready() {
            let Some(t) = self.duct.next_transmit(now) else {
                break;
            };
            let meta = Self::meta(t.op, t.topic.as_ref(), t.frame.encoding);
            if self.client_ep.send(t.frame.bytes.clone(), meta).is_err() {
                self.duct.on_transmit_failed(&t);
            }
        }

        for ev in self.server_ep.drain() {
            match ev.kind {
                NetEventKind::Accepted { .. } => {
                    if let Some(old) = self.duct_conn.take() {
                        self.bridge.disconnect(old);
                    }
                    self.duct_conn = self.bridge.accept(&self.path).ok();
                }
                NetEventKind::Delivered { bytes, meta, .. } => {
                    if let Some(c) = self.duct_conn {
                        // Malformed frames are answered with a status by
                        // the bridge; nothing to do here.
                        let _ = self.bridge.on_message(c, &bytes, meta.binary);
                    }
                }
                NetEventKind::Closed { .. } => {
                    if let Some(c) = self.duct_conn.take() {
                        self.bridge.disconnect(c);
                    }
                }
                _ => {}
            }
        }

        let mut wake = false;
        if let Some(c) = self.duct_conn {
            if let Ok(out) = self.bridge.poll(c) {
                wake |= out.next_wake_ns.is_some();
                for f in &out.frames {
                    let e = self.bridge.encode_for(c, f);
                    let meta = Self::meta(f.op, f.topic.as_ref(), e.encoding);
                    if self.server_ep.send(e.bytes, meta).is_err() && f.op == Op::Publish {
                        if let Some(t) = &f.topic {
                            *self.send_failed.entry(t.clone()).or_default() += 1;
                        }
                    }
                }
                if out.close {
                    self.server_ep.close();
                    self.bridge.disconnect(c);
                    self.duct_conn = None;
                }
            }
        }
        if let Ok(out) = self.bridge.poll(self.cloud_conn) {
            wake |= out.next_wake_ns.is_some();
            let in_window = now <= self.window_end_ns;
            for f in out.frames {
                if f.op != Op::Publish {
                    continue;
                }
                let (Some(topic), Some(msg)) = (f.topic, f.msg) else {
                    continue;
                };
                if let Some(l) = self.ledgers.get_mut(&topic) {
                    l.deliver(&msg, now, in_window, self.encoding);
                }
            }
        }
        self.pending_wake = wake;

        for ev in self.client_ep.drain() {
            match ev.kind {
                NetEventKind::Delivered { bytes, meta, .. } => {
                    if self.duct.on_message(now, &bytes, meta.binary) == Some(DuctAction::Close) {
                        self.client_ep.close();
                    }
                }
                NetEventKind::Closed { .. } => self.duct.on_closed(now),
                _ => {}
            }
        }
        self.drain_taps(now, Direction::RemoteToLocal);

        if self.duct.is_live() && self.rules_active() {
            self.synced.insert(self.duct.link_counters().connects);
        }
        self.clock.advance(MS);
    }

    /// Nothing left anywhere in the pipeline.
    fn quiescent(&self) -> bool {
        let settled = match self.duct.phase() {
            Phase::Live => self.rules_active(),
            Phase::Failed => true,
            _ => self.link.is_down(),
        };
        settled
            && !self.pending_wake
            && self.link.is_idle()
            && self
                .duct
                .counters()
                .values()
                .all(|c| c.buffered == 0 && c.queued == 0)
    }

    fn finish(mut self, spec: &ScenarioSpec, seed: u64, drain_ns: u64) -> RunReport {
        let final_live = self.duct.is_live() && self.rules_active();
        let lc = self.duct.link_counters();
        // Close both bridge sessions so anything still queued is counted.
        if let Some(c) = self.duct_conn.take() {
            self.bridge.disconnect(c);
        }
        self.bridge.disconnect(self.cloud_conn);

        let duct_counters = self.duct.counters();
        let tags = self.link.tag_counters();
        let stats = self.bridge.stats().remove(&self.route).unwrap_or_default();
        let duration_s = spec.duration_s;
        let mut topics = BTreeMap::new();
        for (name, l) in &self.ledgers {
            let c = duct_counters.get(name).copied().unwrap_or_default();
            let t = tags.get(name).copied().unwrap_or_default();
            let b = stats.get(name).copied().unwrap_or_default();
            let mut lost = BTreeMap::new();
            let mut dropped = BTreeMap::new();
            let duct_balanced = match l.direction {
                Direction::LocalToRemote => {
                    lost.insert("duct.lost_disconnect", c.lost_disconnect);
                    lost.insert("duct.buffered", c.buffered);
                    dropped.insert("duct.dropped_queue", c.dropped_queue);
                    dropped.insert("duct.superseded", c.superseded);
                    dropped.insert("duct.rejected", c.rejected);
                    dropped.insert("duct.queued", c.queued);
                    c.balanced()
                }
                Direction::RemoteToLocal => {
                    lost.insert(
                        "bridge.send_failed",
                        self.send_failed.get(name).copied().unwrap_or(0),
                    );
                    c.injected == l.delivered
                }
            };
            lost.insert("link.lost_down", t.lost_down);
            lost.insert("link.dropped", t.dropped);
            lost.insert("link.in_flight", t.in_flight);
            lost.insert("bridge.unrouted", b.unrouted);
            lost.insert("bridge.lost_on_close", b.lost_on_close);
            dropped.insert("bridge.dropped_queue", b.dropped_queue);
            let lost_disconnect = lost.values().sum();
            let dropped_queue = dropped.values().sum();
            let breakdown = lost
                .into_iter()
                .chain(dropped)
                .map(|(k, v)| (k.to_owned(), v))
                .collect();
            topics.insert(
                name.clone(),
                TopicReport {
                    direction: l.direction,
                    sent: l.sent,
                    delivered: l.delivered,
                    lost_disconnect,
                    dropped_queue,
                    latency_ms: Percentiles::from_ns(&l.latencies),
                    delivered_fps: l.delivered_in_window as f64 / duration_s,
                    payload_mismatches: l.mismatches,
                    out_of_order: l.out_of_order,
                    duplicates: l.duplicates,
                    unmatched: l.unmatched,
                    duct_balanced,
                    breakdown,
                },
            );
        }

        let mut link = LinkReport {
            connects: lc.connects,
            reconnects: lc.reconnects,
            losses: lc.losses,
            failed_attempts: lc.failed_attempts,
            downtime_ms: lc.downtime_ns as f64 / 1e6,
            sessions_synced: self.synced.len() as u64,
            final_live,
            frames_up: 0,
            frames_down: 0,
            bytes_up: 0,
            bytes_down: 0,
            bytes_total: self.link.counters().bytes_sent,
            link_balanced: self.link.counters().balanced(),
        };
        for r in self.link.trace() {
            match r.from {
                Side::Client => {
                    link.frames_up += 1;
                    link.bytes_up += r.size as u64;
                }
                Side::Server => {
                    link.frames_down += 1;
                    link.bytes_down += r.size as u64;
                }
            }
        }

        RunReport {
            scenario: spec.name.clone(),
            seed,
            encoding: self.encoding.to_string(),
            clock: "virtual".into(),
            duration_s,
            drain_s: drain_ns as f64 / 1e9,
            topics,
            link,
            rtf: self.rtf,
        }
    }
}

/// Runs a scenario on the virtual clock.
///
/// Traffic flows for `duration_s`, then the pipeline is given up to
/// `max_drain_s` to settle so every message reaches a final count.
pub fn run(spec: &ScenarioSpec) -> Result<RunReport, RunError> {
    let seed = spec.seed;
    let mut bed = Testbed::new(spec, seed)?;
    let end = spec.duration_ns();
    while bed.clock.now_ns() <= end {
        bed.tick(true);
    }
    let drain_limit = end + (spec.max_drain_s * 1e9).round() as u64;
    while bed.clock.now_ns() < drain_limit && !bed.quiescent() {
        bed.tick(false);
    }
    let drain_ns = bed.clock.now_ns() - end - MS;
    Ok(bed.finish(spec, seed, drain_ns))
}
