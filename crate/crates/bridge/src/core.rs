use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use msggraph::{
    Clock, Graph, PublisherHandle, QueuePolicy, Responder, ServiceHandle, ServiceRequest,
    ServiceSpec, SubscriptionHandle, TopicName, TopicSpec, Value,
};
use parking_lot::Mutex;
use serde::Serialize;
use wirecodec::{
    negotiate, CodecError, EncodedFrame, Encoding, Op, ServerCaps, SessionParams, StatusLevel,
    WireFrame, AUTH_FAILED_TEXT,
};

use crate::route::{route_name, Route};
use crate::BridgeError;

pub type ConnId = u64;

type Waker = Arc<dyn Fn() + Send + Sync>;

thread_local! {
    // Connection whose call_service is being dispatched on this thread.
    static CALLER: Cell<Option<ConnId>> = const { Cell::new(None) };
}

#[derive(Debug, Clone)]
pub struct BridgeConfig {
    pub routes: Vec<Route>,
    pub caps: ServerCaps,
}

impl BridgeConfig {
    pub fn new(routes: Vec<Route>) -> Self {
        Self {
            routes,
            caps: ServerCaps::default(),
        }
    }
}

/// Per-topic relay counters for one route.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TopicStats {
    /// Publish frames accepted from peers.
    pub published: u64,
    /// Accepted publishes that found no subscriber in the graph.
    pub unrouted: u64,
    /// Publish frames handed to subscribed peers.
    pub forwarded: u64,
    /// Discarded by a subscription's drop-oldest queue.
    pub dropped_queue: u64,
    /// Still queued for a peer when its connection went away.
    pub lost_on_close: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubscriptionRecord {
    pub throttle_rate_ms: u64,
    pub queue_length: u64,
    pub last_sent_ns: Option<u64>,
}

/// Introspection view of one connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionRecord {
    pub conn_id: String,
    pub path: String,
    pub route: String,
    pub authenticated: bool,
    pub session: SessionParams,
    pub subscriptions: BTreeMap<String, SubscriptionRecord>,
    pub advertisements: BTreeSet<TopicSpec>,
    pub provided_services: BTreeSet<ServiceSpec>,
    /// Calls forwarded to this peer as provider: id → caller
    /// (`c<N>` for a connection, `local` for in-process callers).
    pub inflight_calls: BTreeMap<String, String>,
}

/// Frames ready for a connection.
#[derive(Debug, Default)]
pub struct Outgoing {
    pub frames: Vec<WireFrame>,
    /// Close the connection once `frames` are written.
    pub close: bool,
    /// When a throttled subscription next becomes eligible to send.
    pub next_wake_ns: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    AwaitingFirst,
    Open,
    Closing,
}

struct ProviderCall {
    responder: Responder,
    origin: Option<ConnId>,
}

// State reachable from graph callbacks, which may run outside the bridge.
#[derive(Default)]
struct ConnShared {
    outbox: Mutex<VecDeque<WireFrame>>,
    provider_calls: Mutex<BTreeMap<String, ProviderCall>>,
    caller_calls: Mutex<BTreeSet<String>>,
    waker: Mutex<Option<Waker>>,
    closed: AtomicBool,
}

impl ConnShared {
    fn push(&self, frame: WireFrame) {
        self.outbox.lock().push_back(frame);
        let waker = self.waker.lock().clone();
        if let Some(w) = waker {
            w();
        }
    }
}

struct Sub {
    handle: SubscriptionHandle,
    throttle_ms: u64,
    queue_length: u64,
    last_sent_ns: Option<u64>,
}

struct Conn {
    path: String,
    route: String,
    graph: Graph,
    phase: Phase,
    authenticated: bool,
    session: SessionParams,
    subs: BTreeMap<String, Sub>,
    pubs: BTreeMap<String, PublisherHandle>,
    services: BTreeMap<String, ServiceHandle>,
    shared: Arc<ConnShared>,
}

struct RouteState {
    route: Route,
    graph: Graph,
}

/// Transport-independent bridge: routes, connections, and the relay
/// between peers and the cloud-side graphs.
pub struct Bridge {
    clock: Arc<dyn Clock>,
    caps: ServerCaps,
    routes: BTreeMap<String, RouteState>,
    conns: BTreeMap<ConnId, Conn>,
    stats: BTreeMap<String, BTreeMap<String, TopicStats>>,
    next_conn: ConnId,
    call_ids: Arc<AtomicU64>,
}

fn status(level: StatusLevel, text: impl Into<String>) -> WireFrame {
    WireFrame::status(level, text)
}

fn conn_label(id: ConnId) -> String {
    format!("c{id}")
}

impl Bridge {
    pub fn new(config: BridgeConfig, clock: Arc<dyn Clock>) -> Result<Self, BridgeError> {
        if config.routes.is_empty() {
            return Err(BridgeError::Config("at least one route is required".into()));
        }
        let shared = Graph::with_clock(Arc::clone(&clock));
        let mut routes = BTreeMap::new();
        for route in config.routes {
            crate::route::validate_name(&route.name)?;
            let graph = if route.isolated {
                Graph::with_clock(Arc::clone(&clock))
            } else {
                shared.clone()
            };
            let name = route.name.clone();
            if routes.insert(name.clone(), RouteState { route, graph }).is_some() {
                return Err(BridgeError::Config(format!("duplicate route {name:?}")));
            }
        }
        Ok(Self {
            clock,
            caps: config.caps,
            routes,
            conns: BTreeMap::new(),
            stats: BTreeMap::new(),
            next_conn: 1,
            call_ids: Arc::new(AtomicU64::new(1)),
        })
    }

    pub fn routes(&self) -> impl Iterator<Item = &Route> {
        self.routes.values().map(|r| &r.route)
    }

    /// Cloud-side graph behind a route, for in-process participants.
    pub fn route_graph(&self, name: &str) -> Option<Graph> {
        self.routes.get(name).map(|r| r.graph.clone())
    }

    pub fn knows_path(&self, path: &str) -> bool {
        route_name(path).is_some_and(|n| self.routes.contains_key(n))
    }

    /// Registers a connection upgraded on `path`.
    pub fn accept(&mut self, path: &str) -> Result<ConnId, BridgeError> {
        let name = route_name(path)
            .filter(|n| self.routes.contains_key(*n))
            .ok_or_else(|| BridgeError::UnknownRoute(path.to_owned()))?;
        let route = &self.routes[name];
        let id = self.next_conn;
        self.next_conn += 1;
        self.conns.insert(
            id,
            Conn {
                path: path.to_owned(),
                route: name.to_owned(),
                graph: route.graph.clone(),
                phase: Phase::AwaitingFirst,
                authenticated: false,
                session: SessionParams::LEGACY,
                subs: BTreeMap::new(),
                pubs: BTreeMap::new(),
                services: BTreeMap::new(),
                shared: Arc::default(),
            },
        );
        tracing::debug!(conn = id, path, "accepted");
        Ok(id)
    }

    /// Hook run whenever output becomes available for `conn` outside a
    /// call into the bridge (graph traffic, service replies).
    pub fn set_waker<F>(&mut self, conn: ConnId, waker: F) -> Result<(), BridgeError>
    where
        F: Fn() + Send + Sync + 'static,
    {
        let c = self.conn_mut(conn)?;
        let waker: Waker = Arc::new(waker);
        for sub in c.subs.values() {
            let w = Arc::clone(&waker);
            sub.handle.set_waker(move || w());
        }
        *c.shared.waker.lock() = Some(waker);
        Ok(())
    }

    pub fn connections(&self) -> Vec<ConnId> {
        self.conns.keys().copied().collect()
    }

    pub fn connection(&self, conn: ConnId) -> Option<ConnectionRecord> {
        let c = self.conns.get(&conn)?;
        Some(ConnectionRecord {
            conn_id: conn_label(conn),
            path: c.path.clone(),
            route: c.route.clone(),
            authenticated: c.authenticated,
            session: c.session,
            subscriptions: c
                .subs
                .iter()
                .map(|(t, s)| {
                    let rec = SubscriptionRecord {
                        throttle_rate_ms: s.throttle_ms,
                        queue_length: s.queue_length,
                        last_sent_ns: s.last_sent_ns,
                    };
                    (t.clone(), rec)
                })
                .collect(),
            advertisements: c.pubs.values().map(|p| p.spec().clone()).collect(),
            provided_services: c.services.values().map(|s| s.spec().clone()).collect(),
            inflight_calls: c
                .shared
                .provider_calls
                .lock()
                .iter()
                .map(|(id, call)| {
                    let origin = call.origin.map_or_else(|| "local".to_owned(), conn_label);
                    (id.clone(), origin)
                })
                .collect(),
        })
    }

    /// Relay counters per route and topic, including live subscriptions.
    pub fn stats(&self) -> BTreeMap<String, BTreeMap<String, TopicStats>> {
        let mut out = self.stats.clone();
        for c in self.conns.values() {
            for (topic, sub) in &c.subs {
                let extra = sub.handle.dropped();
                if extra > 0 {
                    out.entry(c.route.clone())
                        .or_default()
                        .entry(topic.clone())
                        .or_default()
                        .dropped_queue += extra;
                }
            }
        }
        out
    }

    /// Decodes one websocket message. Binary messages carry CBOR, text
    /// messages JSON. Undecodable input is answered with a status frame.
    pub fn on_message(&mut self, conn: ConnId, bytes: &[u8], binary: bool) -> Result<(), BridgeError> {
        let encoding = if binary { Encoding::Cbor } else { Encoding::Json };
        match wirecodec::decode(bytes, encoding) {
            Ok(frame) => self.on_frame(conn, frame),
            Err(err) => {
                let c = self.conn_mut(conn)?;
                c.shared
                    .push(status(StatusLevel::Error, format!("undecodable frame: {err}")));
                Ok(())
            }
        }
    }

    pub fn on_frame(&mut self, conn: ConnId, frame: WireFrame) -> Result<(), BridgeError> {
        let route = self.conn_mut(conn)?.route.clone();
        let token = self.routes[&route].route.token.clone();
        let caps = self.caps.clone();
        let c = self.conns.get_mut(&conn).expect("checked above");
        match c.phase {
            Phase::Closing => return Ok(()),
            Phase::AwaitingFirst => {
                let presented = frame.token.as_deref();
                if token.is_some() && (frame.op != Op::Hello || presented != token.as_deref()) {
                    tracing::info!(conn, route = %c.route, "authentication failed");
                    c.shared.push(status(StatusLevel::Error, AUTH_FAILED_TEXT));
                    c.phase = Phase::Closing;
                    return Ok(());
                }
                match negotiate(&frame, &caps) {
                    Ok(params) => {
                        c.session = params;
                        c.authenticated = true;
                        c.phase = Phase::Open;
                    }
                    Err(err) => {
                        c.shared.push(status(StatusLevel::Error, err.to_string()));
                        c.phase = Phase::Closing;
                        return Ok(());
                    }
                }
                if frame.op == Op::Hello {
                    c.shared.push(c.session.to_reply());
                    return Ok(());
                }
            }
            Phase::Open => {}
        }
        self.dispatch(conn, frame);
        Ok(())
    }

    fn dispatch(&mut self, conn: ConnId, frame: WireFrame) {
        let result = match frame.op {
            Op::Hello => Err("hello is only valid as the first frame".to_owned()),
            Op::Advertise => self.advertise(conn, frame),
            Op::Unadvertise => self.unadvertise(conn, frame),
            Op::Publish => self.publish(conn, frame),
            Op::Subscribe => self.subscribe(conn, frame),
            Op::Unsubscribe => self.unsubscribe(conn, frame),
            Op::CallService => self.call_service(conn, frame),
            Op::ServiceResponse => self.service_response(conn, frame),
            Op::AdvertiseService => self.advertise_service(conn, frame),
            Op::UnadvertiseService => self.unadvertise_service(conn, frame),
            Op::Status => {
                tracing::debug!(conn, text = ?frame.text, "peer status");
                Ok(())
            }
        };
        if let Err(text) = result {
            tracing::debug!(conn, %text, "protocol violation");
            self.conns[&conn].shared.push(status(StatusLevel::Error, text));
        }
    }

    fn advertise(&mut self, conn: ConnId, frame: WireFrame) -> Result<(), String> {
        let c = self.conns.get_mut(&conn).expect("live connection");
        let name = topic_of(&frame)?;
        let type_name = frame.type_name.unwrap_or_default();
        if let Some(existing) = c.pubs.get(name.as_str()) {
            if existing.spec().type_name == type_name {
                return Ok(());
            }
        }
        let spec = TopicSpec::new(name.clone(), type_name).latched(frame.latched.unwrap_or(false));
        let handle = c.graph.advertise(spec).map_err(|e| e.to_string())?;
        c.pubs.insert(name.as_str().to_owned(), handle);
        Ok(())
    }

    fn unadvertise(&mut self, conn: ConnId, frame: WireFrame) -> Result<(), String> {
        let c = self.conns.get_mut(&conn).expect("live connection");
        let name = topic_of(&frame)?;
        c.pubs
            .remove(name.as_str())
            .map(drop)
            .ok_or_else(|| format!("{name} is not advertised on this connection"))
    }

    fn publish(&mut self, conn: ConnId, frame: WireFrame) -> Result<(), String> {
        let c = self.conns.get_mut(&conn).expect("live connection");
        let name = topic_of(&frame)?;
        let publisher = c
            .pubs
            .get(name.as_str())
            .ok_or_else(|| format!("publish on unadvertised topic {name}"))?;
        let receivers = publisher.publish(frame.msg.unwrap_or(Value::Null));
        let stats = self
            .stats
            .entry(c.route.clone())
            .or_default()
            .entry(name.as_str().to_owned())
            .or_default();
        stats.published += 1;
        if receivers == 0 {
            stats.unrouted += 1;
        }
        Ok(())
    }

    fn subscribe(&mut self, conn: ConnId, frame: WireFrame) -> Result<(), String> {
        let c = self.conns.get_mut(&conn).expect("live connection");
        let name = topic_of(&frame)?;
        let queue_length = frame.queue_length_or_default();
        let handle = c
            .graph
            .subscribe(&name, QueuePolicy::bounded(queue_length as usize));
        if let Some(w) = c.shared.waker.lock().clone() {
            handle.set_waker(move || w());
        }
        let sub = Sub {
            handle,
            throttle_ms: frame.throttle_rate_ms.unwrap_or(0),
            queue_length,
            last_sent_ns: None,
        };
        if let Some(old) = c.subs.insert(name.as_str().to_owned(), sub) {
            let route = c.route.clone();
            retire_sub(&mut self.stats, &route, name.as_str(), old, false);
        }
        Ok(())
    }

    fn unsubscribe(&mut self, conn: ConnId, frame: WireFrame) -> Result<(), String> {
        let c = self.conns.get_mut(&conn).expect("live connection");
        let name = topic_of(&frame)?;
        let old = c
            .subs
            .remove(name.as_str())
            .ok_or_else(|| format!("not subscribed to {name}"))?;
        let route = c.route.clone();
        retire_sub(&mut self.stats, &route, name.as_str(), old, false);
        Ok(())
    }

    fn call_service(&mut self, conn: ConnId, frame: WireFrame) -> Result<(), String> {
        let c = &self.conns[&conn];
        let id = frame.id.clone().unwrap_or_default();
        let service = frame.service.clone().unwrap_or_default();
        if !c.shared.caller_calls.lock().insert(id.clone()) {
            return Err(format!("call id {id:?} is already in flight"));
        }
        let shared = Arc::clone(&c.shared);
        let reply_service = service.clone();
        let graph = c.graph.clone();
        CALLER.with(|cell| cell.set(Some(conn)));
        graph.call_service_with(&service, frame.msg.unwrap_or(Value::Null), move |result| {
            shared.caller_calls.lock().remove(&id);
            let reply = match result {
                Ok(values) => WireFrame::service_ok(id, Some(reply_service), values),
                Err(err) => WireFrame::service_err(id, Some(reply_service), err.to_string()),
            };
            shared.push(reply);
        });
        CALLER.with(|cell| cell.set(None));
        Ok(())
    }

    fn service_response(&mut self, conn: ConnId, frame: WireFrame) -> Result<(), String> {
        let c = &self.conns[&conn];
        let id = frame.id.clone().unwrap_or_default();
        let call = c
            .shared
            .provider_calls
            .lock()
            .remove(&id)
            .ok_or_else(|| format!("no call in flight with id {id:?}"))?;
        if frame.result == Some(true) {
            call.responder.respond(frame.msg.unwrap_or(Value::Null));
        } else {
            let reason = frame.text.unwrap_or_else(|| "provider reported failure".into());
            call.responder.fault(reason);
        }
        Ok(())
    }

    fn advertise_service(&mut self, conn: ConnId, frame: WireFrame) -> Result<(), String> {
        let c = self.conns.get_mut(&conn).expect("live connection");
        let raw = frame.service.clone().unwrap_or_default();
        let name = TopicName::new(raw.as_str()).map_err(|e| format!("bad service name: {e}"))?;
        if c.services.contains_key(name.as_str()) {
            return Ok(());
        }
        let type_name = frame.type_name.unwrap_or_default();
        let spec = ServiceSpec::new(name.clone(), type_name.clone(), type_name);
        let shared = Arc::clone(&c.shared);
        let ids = Arc::clone(&self.call_ids);
        let handle = c
            .graph
            .advertise_service(spec, move |req: ServiceRequest| {
                if shared.closed.load(Ordering::Acquire) {
                    req.responder.fault("provider disconnected");
                    return;
                }
                let id = format!("b{}", ids.fetch_add(1, Ordering::Relaxed));
                let origin = CALLER.with(Cell::get);
                shared.provider_calls.lock().insert(
                    id.clone(),
                    ProviderCall {
                        responder: req.responder,
                        origin,
                    },
                );
                shared.push(WireFrame::call_service(id, req.service.as_str(), req.request));
            })
            .map_err(|e| e.to_string())?;
        c.services.insert(name.as_str().to_owned(), handle);
        Ok(())
    }

    fn unadvertise_service(&mut self, conn: ConnId, frame: WireFrame) -> Result<(), String> {
        let c = self.conns.get_mut(&conn).expect("live connection");
        let name = frame.service.unwrap_or_default();
        c.services
            .remove(&name)
            .map(drop)
            .ok_or_else(|| format!("service {name} is not provided by this connection"))
    }

    /// Collects frames due for `conn`, honoring subscription throttles.
    pub fn poll(&mut self, conn: ConnId) -> Result<Outgoing, BridgeError> {
        let now = self.clock.now_ns();
        let c = self
            .conns
            .get_mut(&conn)
            .ok_or(BridgeError::UnknownConnection(conn))?;
        let mut out = Outgoing {
            frames: c.shared.outbox.lock().drain(..).collect(),
            close: c.phase == Phase::Closing,
            next_wake_ns: None,
        };
        if c.phase != Phase::Open {
            return Ok(out);
        }
        let route_stats = self.stats.entry(c.route.clone()).or_default();
        for (topic, sub) in c.subs.iter_mut() {
            let mut sent = 0;
            if sub.throttle_ms == 0 {
                for env in sub.handle.drain() {
                    out.frames.push(WireFrame::publish(topic.as_str(), env.payload));
                    sent += 1;
                }
            } else {
                let interval = sub.throttle_ms * 1_000_000;
                let eligible = sub.last_sent_ns.is_none_or(|t| now >= t + interval);
                if eligible {
                    if let Some(env) = sub.handle.try_recv() {
                        out.frames.push(WireFrame::publish(topic.as_str(), env.payload));
                        sub.last_sent_ns = Some(now);
                        sent += 1;
                    }
                }
                if !sub.handle.is_empty() {
                    let at = sub.last_sent_ns.map_or(now, |t| t + interval);
                    out.next_wake_ns = Some(out.next_wake_ns.map_or(at, |w: u64| w.min(at)));
                }
            }
            if sent > 0 {
                route_stats.entry(topic.clone()).or_default().forwarded += sent;
            }
        }
        Ok(out)
    }

    /// Wire encoding for a frame sent to `conn`: hello replies are JSON so a
    /// peer can read them before it knows the session; the rest follow the
    /// negotiated session.
    pub fn encoding_for(&self, conn: ConnId, frame: &WireFrame) -> Encoding {
        if frame.op == Op::Hello {
            return Encoding::Json;
        }
        self.conns
            .get(&conn)
            .map_or(Encoding::Json, |c| c.session.encoding)
    }

    /// Encodes output for the wire. A frame the session cannot carry is
    /// replaced by an error status.
    pub fn encode_for(&self, conn: ConnId, frame: &WireFrame) -> EncodedFrame {
        let encoding = self.encoding_for(conn, frame);
        match wirecodec::encode(frame, encoding) {
            Ok(encoded) => encoded,
            Err(err) => encode_failure(frame, encoding, err),
        }
    }

    /// Removes every trace of a connection. Calls it was serving fail with
    /// `ProviderFault`; latched values it published stay retained.
    pub fn disconnect(&mut self, conn: ConnId) {
        let Some(c) = self.conns.remove(&conn) else {
            return;
        };
        c.shared.closed.store(true, Ordering::Release);
        *c.shared.waker.lock() = None;
        for (topic, sub) in c.subs {
            retire_sub(&mut self.stats, &c.route, &topic, sub, true);
        }
        drop(c.services);
        drop(c.pubs);
        let orphaned = std::mem::take(&mut *c.shared.provider_calls.lock());
        for (_, call) in orphaned {
            call.responder.fault("provider disconnected");
        }
        c.shared.outbox.lock().clear();
        tracing::debug!(conn, "disconnected");
    }
}

impl Bridge {
    fn conn_mut(&mut self, conn: ConnId) -> Result<&mut Conn, BridgeError> {
        self.conns
            .get_mut(&conn)
            .ok_or(BridgeError::UnknownConnection(conn))
    }
}

fn retire_sub(
    stats: &mut BTreeMap<String, BTreeMap<String, TopicStats>>,
    route: &str,
    topic: &str,
    sub: Sub,
    closing: bool,
) {
    let entry = stats
        .entry(route.to_owned())
        .or_default()
        .entry(topic.to_owned())
        .or_default();
    entry.dropped_queue += sub.handle.dropped();
    if closing {
        entry.lost_on_close += sub.handle.len() as u64;
    }
}

fn topic_of(frame: &WireFrame) -> Result<TopicName, String> {
    let raw = frame.topic.as_deref().unwrap_or_default();
    TopicName::new(raw).map_err(|e| format!("bad topic name {raw:?}: {e}"))
}

fn encode_failure(frame: &WireFrame, encoding: Encoding, err: CodecError) -> EncodedFrame {
    tracing::warn!(op = %frame.op, %err, "outbound frame not encodable");
    let text = format!("{} frame not encodable: {err}", frame.op);
    wirecodec::encode(&status(StatusLevel::Error, text), encoding)
        .expect("status frames always encode")
}
