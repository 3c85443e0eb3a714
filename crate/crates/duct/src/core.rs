use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use msggraph::{
    Graph, PublisherHandle, QueuePolicy, Responder, ServiceHandle, ServiceRequest, ServiceSpec,
    SubscriptionHandle, TopicName, TopicSpec, Value,
};
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wirecodec::{
    EncodedFrame, Encoding, Op, SessionParams, WireFrame, AUTH_FAILED_TEXT,
    PROTOCOL_VERSION,
};

use crate::{DuctConfig, DuctError, TopicRule};

type Waker = Arc<dyn Fn() + Send + Sync>;

const NS_PER_MS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Connecting,
    /// Transport is up; waiting for the hello reply.
    Syncing,
    Live,
    Backoff,
    /// Credentials rejected. Terminal.
    Failed,
}

/// Transport operation the core asks its driver to perform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DuctAction {
    Connect,
    Close,
}

/// One encoded frame ready for the transport.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmit {
    pub op: Op,
    pub topic: Option<String>,
    pub frame: EncodedFrame,
}

/// Counters for one mirrored topic.
///
/// For local-to-remote topics every message the local subscription received
/// ends up in exactly one of `forwarded`, `lost_disconnect`,
/// `dropped_queue`, `superseded`, `rejected`, `buffered` or `queued`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TopicCounters {
    pub received: u64,
    /// Handed to the transport while live, including flushed ones.
    pub forwarded: u64,
    /// Forwarded from the disconnect buffer after a reconnect.
    pub flushed: u64,
    /// Evicted from the disconnect buffer, or lost in a failed write.
    pub lost_disconnect: u64,
    /// Evicted from the local subscription queue under backpressure.
    pub dropped_queue: u64,
    /// Older values of a latched topic replaced by its retained value.
    pub superseded: u64,
    /// Payloads the session encoding cannot carry.
    pub rejected: u64,
    pub buffered: u64,
    pub queued: u64,
    /// Retained values re-sent on (re)connect.
    pub latched_resent: u64,
    /// Remote publishes injected into the local graph.
    pub injected: u64,
}

impl TopicCounters {
    pub fn balanced(&self) -> bool {
        self.received
            == self.forwarded
                + self.lost_disconnect
                + self.dropped_queue
                + self.superseded
                + self.rejected
                + self.buffered
                + self.queued
    }
}

/// Connection history.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LinkCounters {
    /// Times the session reached live.
    pub connects: u64,
    /// Live sessions after the first.
    pub reconnects: u64,
    /// Live sessions that ended.
    pub losses: u64,
    /// Connection attempts that never reached live.
    pub failed_attempts: u64,
    /// Time spent not live after the first loss.
    pub downtime_ns: u64,
    pub last_backoff_ms: Option<f64>,
}

struct LocalSub {
    rule: TopicRule,
    name: TopicName,
    handle: SubscriptionHandle,
}

struct Buffered {
    sub: usize,
    frame: WireFrame,
}

type Outbox = Arc<Mutex<VecDeque<(u64, WireFrame)>>>;

/// Transport-independent duct state machine.
///
/// A driver feeds it transport events and the current time, performs the
/// [`DuctAction`]s it returns, and writes whatever [`DuctCore::next_transmit`]
/// yields while the transport can accept data.
pub struct DuctCore {
    config: DuctConfig,
    graph: Graph,
    rng: ChaCha8Rng,
    phase: Phase,
    phase_since: u64,
    backoff_until: u64,
    failures: u32,
    down_since: Option<u64>,
    session: Option<SessionParams>,
    generation: Arc<AtomicU64>,
    outbox: Outbox,
    subs: Vec<LocalSub>,
    next_sub: usize,
    publishers: BTreeMap<String, PublisherHandle>,
    imported: Vec<ServiceHandle>,
    inflight: Arc<Mutex<BTreeMap<String, Responder>>>,
    call_ids: Arc<AtomicU64>,
    buffer: VecDeque<Buffered>,
    counters: BTreeMap<String, TopicCounters>,
    link: LinkCounters,
    waker: Arc<Mutex<Option<Waker>>>,
}

impl DuctCore {
    /// Validates the config and attaches to the local graph. The first
    /// connection attempt is due immediately.
    pub fn new(config: DuctConfig, graph: Graph, seed: u64) -> Result<Self, DuctError> {
        config.validate()?;
        let waker: Arc<Mutex<Option<Waker>>> = Arc::default();
        let mut subs = Vec::new();
        for rule in &config.local_to_remote {
            let name = TopicName::new(rule.topic.as_str()).expect("validated");
            let handle = graph.subscribe(&name, QueuePolicy::bounded(rule.queue_length as usize));
            let w = Arc::clone(&waker);
            handle.set_waker(move || wake(&w));
            subs.push(LocalSub {
                rule: rule.clone(),
                name,
                handle,
            });
        }
        let mut publishers = BTreeMap::new();
        for rule in &config.remote_to_local {
            let name = TopicName::new(rule.topic.as_str()).expect("validated");
            let spec = TopicSpec::new(name, rule.type_name.clone()).latched(rule.latched);
            let handle = graph
                .advertise(spec)
                .map_err(|e| DuctError::ConfigInvalid(e.to_string()))?;
            publishers.insert(rule.topic.clone(), handle);
        }
        let now = graph.now_ns();
        Ok(Self {
            config,
            graph,
            rng: ChaCha8Rng::seed_from_u64(seed),
            phase: Phase::Backoff,
            phase_since: now,
            backoff_until: now,
            failures: 0,
            down_since: None,
            session: None,
            generation: Arc::new(AtomicU64::new(0)),
            outbox: Arc::default(),
            subs,
            next_sub: 0,
            publishers,
            imported: Vec::new(),
            inflight: Arc::default(),
            call_ids: Arc::new(AtomicU64::new(1)),
            buffer: VecDeque::new(),
            counters: BTreeMap::new(),
            link: LinkCounters::default(),
            waker,
        })
    }

    pub fn config(&self) -> &DuctConfig {
        &self.config
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_live(&self) -> bool {
        self.phase == Phase::Live
    }

    pub fn session(&self) -> Option<SessionParams> {
        self.session
    }

    pub fn failure(&self) -> Option<DuctError> {
        (self.phase == Phase::Failed).then_some(DuctError::AuthFailure)
    }

    /// Hook run when local traffic or a service reply needs the driver.
    pub fn set_waker<F>(&self, waker: F)
    where
        F: Fn() + Send + Sync + 'static,
    {
        *self.waker.lock() = Some(Arc::new(waker));
    }

    pub fn link_counters(&self) -> LinkCounters {
        let mut link = self.link;
        if let Some(since) = self.down_since {
            link.downtime_ns += self.graph.now_ns().saturating_sub(since);
        }
        link
    }

    /// Per-topic counters for every mirrored topic.
    pub fn counters(&self) -> BTreeMap<String, TopicCounters> {
        let mut out = self.counters.clone();
        for sub in &self.subs {
            let c = out.entry(sub.rule.topic.clone()).or_default();
            c.received = sub.handle.received();
            c.dropped_queue = sub.handle.dropped();
            c.queued = sub.handle.len() as u64;
        }
        for rule in &self.config.remote_to_local {
            out.entry(rule.topic.clone()).or_default();
        }
        out
    }

    /// Earliest time at which [`DuctCore::tick`] has something to do.
    pub fn next_deadline(&self) -> Option<u64> {
        let timeout = (self.config.handshake_timeout_ms as f64 * NS_PER_MS) as u64;
        match self.phase {
            Phase::Backoff => Some(self.backoff_until),
            Phase::Connecting | Phase::Syncing => Some(self.phase_since + timeout),
            Phase::Live | Phase::Failed => None,
        }
    }

    /// Advances timers. While not live, local traffic moves into the
    /// disconnect buffer.
    pub fn tick(&mut self, now: u64) -> Option<DuctAction> {
        if self.phase != Phase::Live {
            self.absorb();
        }
        match self.phase {
            Phase::Backoff if now >= self.backoff_until => {
                self.set_phase(Phase::Connecting, now);
                Some(DuctAction::Connect)
            }
            Phase::Connecting | Phase::Syncing
                if now >= self.next_deadline().expect("handshake deadline") =>
            {
                tracing::debug!("handshake timed out");
                self.transport_lost(now);
                Some(DuctAction::Close)
            }
            _ => None,
        }
    }

    pub fn on_connected(&mut self, now: u64) {
        if self.phase != Phase::Connecting {
            return;
        }
        self.set_phase(Phase::Syncing, now);
        let hello = WireFrame::hello(
            vec![PROTOCOL_VERSION],
            self.config.encoding_pref.clone(),
            self.config.token().map(str::to_owned),
        );
        self.push(hello);
    }

    pub fn on_connect_failed(&mut self, now: u64) {
        if self.phase == Phase::Connecting {
            self.transport_lost(now);
        }
    }

    pub fn on_closed(&mut self, now: u64) {
        if matches!(self.phase, Phase::Connecting | Phase::Syncing | Phase::Live) {
            self.transport_lost(now);
        }
    }

    /// Handles one websocket message: binary is CBOR, text is JSON.
    pub fn on_message(&mut self, now: u64, bytes: &[u8], binary: bool) -> Option<DuctAction> {
        let encoding = if binary { Encoding::Cbor } else { Encoding::Json };
        match wirecodec::decode(bytes, encoding) {
            Ok(frame) => self.on_frame(now, frame),
            Err(err) => {
                tracing::warn!(%err, "undecodable frame from bridge");
                None
            }
        }
    }

    pub fn on_frame(&mut self, now: u64, frame: WireFrame) -> Option<DuctAction> {
        if frame.op == Op::Status {
            if frame.text.as_deref() == Some(AUTH_FAILED_TEXT) {
                tracing::error!(route = %self.config.route, "bridge rejected credentials");
                self.transport_lost(now);
                self.set_phase(Phase::Failed, now);
                return Some(DuctAction::Close);
            }
            tracing::debug!(level = ?frame.level, text = ?frame.text, "bridge status");
            return None;
        }
        match self.phase {
            Phase::Syncing if frame.op == Op::Hello => {
                match SessionParams::from_reply(&frame) {
                    Ok(params) => self.go_live(now, params),
                    Err(err) => {
                        tracing::warn!(%err, "bad hello reply");
                        self.transport_lost(now);
                        return Some(DuctAction::Close);
                    }
                }
                None
            }
            Phase::Live => {
                self.on_live_frame(frame);
                None
            }
            _ => None,
        }
    }

    /// Next frame to write, or `None` when nothing is ready. Control frames
    /// come first, then the disconnect buffer oldest-first, then fresh local
    /// traffic round-robin across topics.
    pub fn next_transmit(&mut self, _now: u64) -> Option<Transmit> {
        let generation = self.generation.load(Ordering::Acquire);
        loop {
            let Some((g, frame)) = self.outbox.lock().pop_front() else {
                break;
            };
            if g != generation {
                continue;
            }
            if let Some(t) = self.encode(frame) {
                return Some(t);
            }
        }
        if self.phase != Phase::Live {
            return None;
        }
        while let Some(entry) = self.buffer.pop_front() {
            let topic = self.subs[entry.sub].rule.topic.clone();
            let c = self.counters.entry(topic).or_default();
            c.buffered -= 1;
            if let Some(t) = self.encode(entry.frame) {
                let c = self.counters.get_mut(t.topic.as_deref().unwrap_or_default());
                if let Some(c) = c {
                    c.forwarded += 1;
                    c.flushed += 1;
                }
                return Some(t);
            }
        }
        for i in 0..self.subs.len() {
            let idx = (self.next_sub + i) % self.subs.len();
            while let Some(env) = self.subs[idx].handle.try_recv() {
                let topic = self.subs[idx].rule.topic.clone();
                if let Some(t) = self.encode(WireFrame::publish(topic.as_str(), env.payload)) {
                    self.counters.entry(topic).or_default().forwarded += 1;
                    self.next_sub = idx + 1;
                    return Some(t);
                }
            }
        }
        None
    }

    /// Reports that a frame from [`DuctCore::next_transmit`] could not be
    /// written.
    pub fn on_transmit_failed(&mut self, t: &Transmit) {
        if t.op == Op::Publish {
            if let Some(c) = t.topic.as_ref().and_then(|topic| self.counters.get_mut(topic)) {
                if c.forwarded > 0 {
                    c.forwarded -= 1;
                    c.lost_disconnect += 1;
                }
            }
        }
    }
}

impl DuctCore {
    fn set_phase(&mut self, phase: Phase, now: u64) {
        self.phase = phase;
        self.phase_since = now;
    }

    fn push(&self, frame: WireFrame) {
        let g = self.generation.load(Ordering::Acquire);
        self.outbox.lock().push_back((g, frame));
    }

    fn encode(&mut self, frame: WireFrame) -> Option<Transmit> {
        let encoding = match (frame.op, self.session) {
            (Op::Hello, _) | (_, None) => Encoding::Json,
            (_, Some(s)) => s.encoding,
        };
        match wirecodec::encode(&frame, encoding) {
            Ok(encoded) => Some(Transmit {
                op: frame.op,
                topic: frame.topic,
                frame: encoded,
            }),
            Err(err) => {
                tracing::warn!(op = %frame.op, %err, "frame not encodable; skipped");
                if frame.op == Op::Publish {
                    let topic = frame.topic.unwrap_or_default();
                    self.counters.entry(topic).or_default().rejected += 1;
                }
                None
            }
        }
    }

    /// Moves queued local traffic into the bounded disconnect buffer.
    fn absorb(&mut self) {
        let cap = self.config.disconnect_buffer;
        for (idx, sub) in self.subs.iter().enumerate() {
            let drained = sub.handle.drain();
            if drained.is_empty() {
                continue;
            }
            let c = self.counters.entry(sub.rule.topic.clone()).or_default();
            for env in drained {
                self.buffer.push_back(Buffered {
                    sub: idx,
                    frame: WireFrame::publish(sub.rule.topic.as_str(), env.payload),
                });
                c.buffered += 1;
                if c.buffered > cap {
                    let oldest = self
                        .buffer
                        .iter()
                        .position(|b| b.sub == idx)
                        .expect("topic has buffered entries");
                    self.buffer.remove(oldest);
                    c.buffered -= 1;
                    c.lost_disconnect += 1;
                }
            }
        }
    }

    fn transport_lost(&mut self, now: u64) {
        if self.phase == Phase::Live {
            self.failures = 0;
            self.link.losses += 1;
            self.down_since = Some(now);
        } else {
            self.link.failed_attempts += 1;
        }
        self.failures += 1;
        let policy = &self.config.reconnect;
        let j = policy.jitter_fraction;
        let scale = if j > 0.0 {
            1.0 + self.rng.gen_range(-j..=j)
        } else {
            1.0
        };
        let delay_ms = policy.base_delay_ms(self.failures) * scale;
        self.link.last_backoff_ms = Some(delay_ms);
        self.backoff_until = now + (delay_ms * NS_PER_MS).round() as u64;
        self.set_phase(Phase::Backoff, now);
        self.session = None;
        self.generation.fetch_add(1, Ordering::AcqRel);
        self.outbox.lock().clear();
        self.imported.clear();
        let orphaned = std::mem::take(&mut *self.inflight.lock());
        for (_, responder) in orphaned {
            responder.fault("connection to bridge lost");
        }
        tracing::info!(delay_ms, failures = self.failures, "transport lost; backing off");
    }

    fn go_live(&mut self, now: u64, params: SessionParams) {
        self.session = Some(params);
        self.set_phase(Phase::Live, now);
        self.failures = 0;
        if self.link.connects > 0 {
            self.link.reconnects += 1;
        }
        self.link.connects += 1;
        if let Some(since) = self.down_since.take() {
            self.link.downtime_ns += now.saturating_sub(since);
        }
        tracing::info!(encoding = %params.encoding, "live");
        for frame in sync_frames(&self.config) {
            self.push(frame);
        }
        self.resend_latched();
        self.register_imported();
    }

    fn resend_latched(&mut self) {
        for (idx, sub) in self.subs.iter().enumerate() {
            if !sub.rule.latched {
                continue;
            }
            let c = self.counters.entry(sub.rule.topic.clone()).or_default();
            let before = self.buffer.len();
            self.buffer.retain(|b| b.sub != idx);
            let purged = (before - self.buffer.len()) as u64 + sub.handle.drain().len() as u64;
            c.buffered -= (before - self.buffer.len()) as u64;
            c.superseded += purged;
            if let Some(env) = self.graph.retained(&sub.name) {
                c.latched_resent += 1;
                let frame = WireFrame::publish(sub.rule.topic.as_str(), env.payload);
                let g = self.generation.load(Ordering::Acquire);
                self.outbox.lock().push_back((g, frame));
            }
        }
    }

    fn register_imported(&mut self) {
        let generation = self.generation.load(Ordering::Acquire);
        for name in &self.config.imported_services {
            let topic = TopicName::new(name.as_str()).expect("validated");
            let spec = ServiceSpec::new(topic, "", "");
            let outbox = Arc::clone(&self.outbox);
            let inflight = Arc::clone(&self.inflight);
            let ids = Arc::clone(&self.call_ids);
            let current = Arc::clone(&self.generation);
            let waker = Arc::clone(&self.waker);
            let service = name.clone();
            let handler = move |req: ServiceRequest| {
                if current.load(Ordering::Acquire) != generation {
                    req.responder.fault("connection to bridge lost");
                    return;
                }
                let id = format!("d{}", ids.fetch_add(1, Ordering::Relaxed));
                inflight.lock().insert(id.clone(), req.responder);
                outbox.lock().push_back((
                    generation,
                    WireFrame::call_service(id, service.as_str(), req.request),
                ));
                wake(&waker);
            };
            match self.graph.advertise_service(spec, handler) {
                Ok(handle) => self.imported.push(handle),
                Err(err) => tracing::warn!(%err, service = %name, "cannot import service"),
            }
        }
    }

    fn on_live_frame(&mut self, frame: WireFrame) {
        match frame.op {
            Op::Publish => {
                let topic = frame.topic.unwrap_or_default();
                if let Some(p) = self.publishers.get(&topic) {
                    p.publish(frame.msg.unwrap_or(Value::Null));
                    self.counters.entry(topic).or_default().injected += 1;
                } else {
                    tracing::debug!(%topic, "publish for unmirrored topic ignored");
                }
            }
            Op::CallService => self.serve_remote_call(frame),
            Op::ServiceResponse => {
                let id = frame.id.unwrap_or_default();
                let Some(responder) = self.inflight.lock().remove(&id) else {
                    tracing::debug!(%id, "response for unknown call");
                    return;
                };
                if frame.result == Some(true) {
                    responder.respond(frame.msg.unwrap_or(Value::Null));
                } else {
                    responder.fault(frame.text.unwrap_or_else(|| "remote call failed".into()));
                }
            }
            other => tracing::debug!(op = %other, "ignored frame"),
        }
    }

    fn serve_remote_call(&mut self, frame: WireFrame) {
        let id = frame.id.unwrap_or_default();
        let service = frame.service.unwrap_or_default();
        if !self.config.exposed_services.contains(&service) {
            self.push(WireFrame::service_err(id, Some(service), "service not exposed"));
            return;
        }
        let outbox = Arc::clone(&self.outbox);
        let generation = self.generation.load(Ordering::Acquire);
        let waker = Arc::clone(&self.waker);
        let reply_service = service.clone();
        self.graph
            .call_service_with(&service, frame.msg.unwrap_or(Value::Null), move |result| {
                let reply = match result {
                    Ok(v) => WireFrame::service_ok(id, Some(reply_service), v),
                    Err(e) => WireFrame::service_err(id, Some(reply_service), e.to_string()),
                };
                outbox.lock().push_back((generation, reply));
                wake(&waker);
            });
    }
}

fn wake(waker: &Mutex<Option<Waker>>) {
    let w = waker.lock().clone();
    if let Some(w) = w {
        w();
    }
}

/// Registration frames sent after every successful hello, in order:
/// advertisements, subscriptions, then service offers.
pub fn sync_frames(config: &DuctConfig) -> Vec<WireFrame> {
    let advertise = config
        .local_to_remote
        .iter()
        .map(|r| WireFrame::advertise(r.topic.as_str(), r.type_name.as_str(), r.latched));
    let subscribe = config.remote_to_local.iter().map(|r| {
        WireFrame::subscribe(r.topic.as_str(), r.throttle_rate_ms, Some(r.queue_length))
    });
    let services = config
        .exposed_services
        .iter()
        .map(|s| WireFrame::advertise_service(s.as_str(), None));
    advertise.chain(subscribe).chain(services).collect()
}
