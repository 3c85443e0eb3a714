use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::schedule::Timeline;
use crate::{ms_to_ns, LinkProfile, ProfileError, SimClock};

/// Which end of the link. The client initiates connections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Client = 0,
    Server = 1,
}

impl Side {
    fn idx(self) -> usize {
        self as usize
    }

    pub fn peer(self) -> Side {
        match self {
            Side::Client => Side::Server,
            Side::Server => Side::Client,
        }
    }
}

/// Bookkeeping carried alongside each frame's bytes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrameMeta {
    /// Protocol op, recorded in traces.
    pub op: String,
    /// Accounting key, typically the topic a publish frame belongs to.
    pub tag: Option<String>,
    /// Binary (true) or text (false) message, as on a websocket.
    pub binary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetEventKind {
    /// Server side: a client opened connection `conn`.
    Accepted { conn: u64 },
    Delivered {
        conn: u64,
        bytes: Vec<u8>,
        meta: FrameMeta,
        sent_ns: u64,
    },
    /// The connection ended (outage, failed frame, or peer close).
    Closed { conn: u64 },
    LinkDown,
    LinkUp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetEvent {
    pub at_ns: u64,
    /// Receiving side; `None` for link state transitions.
    pub to: Option<Side>,
    pub kind: NetEventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFate {
    InFlight,
    Arrived(u64),
    Dropped,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub from: Side,
    pub seq: u64,
    pub t_send_ns: u64,
    pub fate: FrameFate,
    pub size: usize,
    pub op: String,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fate = match self.fate {
            FrameFate::Arrived(t) => t.to_string(),
            FrameFate::Dropped => "DROPPED".into(),
            FrameFate::Down => "DOWN".into(),
            FrameFate::InFlight => "INFLIGHT".into(),
        };
        write!(f, "{}\t{}\t{}\t{}", self.t_send_ns, fate, self.size, self.op)
    }
}

/// Frame accounting. Every sent frame is eventually counted exactly once as
/// delivered, dropped or lost to a disconnect.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkCounters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub lost_down: u64,
    pub in_flight: u64,
    pub bytes_sent: u64,
}

impl LinkCounters {
    pub fn balanced(&self) -> bool {
        self.sent == self.delivered + self.dropped + self.lost_down + self.in_flight
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConnectError {
    #[error("link is down")]
    Unreachable,
    #[error("already connected")]
    AlreadyConnected,
    #[error("only the client side initiates connections")]
    NotClient,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SendError {
    #[error("not connected")]
    NotConnected,
}

enum Payload {
    Frame { bytes: Vec<u8>, meta: FrameMeta },
    Close,
}

struct InFlight {
    seq: u64,
    conn: u64,
    sent_ns: u64,
    arrive_ns: u64,
    trace_idx: Option<usize>,
    payload: Payload,
}

#[derive(Default)]
struct Direction {
    queue: VecDeque<InFlight>,
    tx_free_at: u64,
    last_arrival: u64,
}

struct State {
    clock: SimClock,
    profile: LinkProfile,
    rng: ChaCha8Rng,
    timeline: Timeline,
    conn: Option<u64>,
    closing: bool,
    next_conn: u64,
    dirs: [Direction; 2],
    inbox: [VecDeque<NetEvent>; 2],
    log: Vec<NetEvent>,
    processed_until: u64,
    seq: u64,
    counters: LinkCounters,
    per_tag: BTreeMap<String, LinkCounters>,
    trace: Vec<TraceRecord>,
}

impl State {
    fn tag_counters(&mut self, tag: Option<&String>) -> Option<&mut LinkCounters> {
        tag.map(|t| self.per_tag.entry(t.clone()).or_default())
    }

    fn emit(&mut self, ev: NetEvent) {
        if let Some(to) = ev.to {
            self.inbox[to.idx()].push_back(ev.clone());
        }
        self.log.push(ev);
    }

    /// Ends the current connection at `at`, losing everything in flight.
    fn close_conn(&mut self, at: u64) {
        let Some(conn) = self.conn.take() else {
            return;
        };
        self.closing = false;
        for side in [Side::Client, Side::Server] {
            let queue = std::mem::take(&mut self.dirs[side.idx()].queue);
            for f in queue {
                if let Payload::Frame { meta, .. } = &f.payload {
                    self.counters.lost_down += 1;
                    self.counters.in_flight -= 1;
                    if let Some(c) = self.tag_counters(meta.tag.as_ref()) {
                        c.lost_down += 1;
                        c.in_flight -= 1;
                    }
                    if let Some(i) = f.trace_idx {
                        self.trace[i].fate = FrameFate::Down;
                    }
                }
            }
            let dir = &mut self.dirs[side.idx()];
            dir.tx_free_at = at;
            dir.last_arrival = at;
        }
        for side in [Side::Client, Side::Server] {
            self.emit(NetEvent {
                at_ns: at,
                to: Some(side),
                kind: NetEventKind::Closed { conn },
            });
        }
    }

    fn deliver_front(&mut self, side: Side) {
        let f = self.dirs[side.idx()]
            .queue
            .pop_front()
            .expect("caller checked non-empty");
        match f.payload {
            Payload::Frame { bytes, meta } => {
                self.counters.delivered += 1;
                self.counters.in_flight -= 1;
                if let Some(c) = self.tag_counters(meta.tag.as_ref()) {
                    c.delivered += 1;
                    c.in_flight -= 1;
                }
                if let Some(i) = f.trace_idx {
                    self.trace[i].fate = FrameFate::Arrived(f.arrive_ns);
                }
                self.emit(NetEvent {
                    at_ns: f.arrive_ns,
                    to: Some(side.peer()),
                    kind: NetEventKind::Delivered {
                        conn: f.conn,
                        bytes,
                        meta,
                        sent_ns: f.sent_ns,
                    },
                });
            }
            Payload::Close => self.close_conn(f.arrive_ns),
        }
    }

    /// Applies every delivery and transition due at or before `now`.
    ///
    /// Same-instant ordering: deliveries before transitions; among
    /// deliveries, client-sent before server-sent, then by sequence.
    fn process_due(&mut self, now: u64) {
        if now < self.processed_until {
            return;
        }
        loop {
            let next_arrival = [Side::Client, Side::Server]
                .into_iter()
                .filter_map(|s| {
                    self.dirs[s.idx()]
                        .queue
                        .front()
                        .filter(|f| f.arrive_ns <= now)
                        .map(|f| (f.arrive_ns, s, f.seq))
                })
                .min();
            let next_transition = self
                .timeline
                .transitions_in(self.processed_until, now)
                .into_iter()
                .next();
            match (next_arrival, next_transition) {
                (Some((ta, side, _)), Some((tt, _))) if ta <= tt => self.deliver_front(side),
                (Some((_, side, _)), None) => self.deliver_front(side),
                (_, Some((tt, going_down))) => {
                    self.processed_until = tt;
                    self.emit(NetEvent {
                        at_ns: tt,
                        to: None,
                        kind: if going_down {
                            NetEventKind::LinkDown
                        } else {
                            NetEventKind::LinkUp
                        },
                    });
                    if going_down {
                        self.close_conn(tt);
                    }
                }
                (None, None) => break,
            }
        }
        self.processed_until = now;
    }

    fn enqueue(&mut self, from: Side, now: u64, size: usize, payload: Payload) -> Option<usize> {
        self.seq += 1;
        let seq = self.seq;
        let jitter = if self.profile.jitter_ms > 0.0 {
            self.rng
                .gen_range(-self.profile.jitter_ms..=self.profile.jitter_ms)
        } else {
            0.0
        };
        let latency_ns = ms_to_ns((self.profile.one_way_latency_ms + jitter).max(0.0));
        let dir = &mut self.dirs[from.idx()];
        let start = now.max(dir.tx_free_at);
        let serialization = self
            .profile
            .bandwidth_bytes_per_s
            .map(|bw| (size as f64 * 1e9 / bw).round() as u64)
            .unwrap_or(0);
        let departure = start + serialization;
        dir.tx_free_at = departure;
        // FIFO: jitter never lets a frame overtake its predecessor.
        let arrive_ns = (departure + latency_ns).max(dir.last_arrival);
        dir.last_arrival = arrive_ns;
        let trace_idx = match &payload {
            Payload::Frame { meta, .. } => {
                self.trace.push(TraceRecord {
                    from,
                    seq,
                    t_send_ns: now,
                    fate: FrameFate::InFlight,
                    size,
                    op: meta.op.clone(),
                });
                Some(self.trace.len() - 1)
            }
            Payload::Close => None,
        };
        let conn = self.conn.expect("enqueue requires a connection");
        self.dirs[from.idx()].queue.push_back(InFlight {
            seq,
            conn,
            sent_ns: now,
            arrive_ns,
            trace_idx,
            payload,
        });
        trace_idx
    }
}

/// Controller for a simulated link; owns time stepping and statistics.
pub struct SimLink {
    state: Arc<Mutex<State>>,
}

/// One end of a simulated link.
pub struct LinkEndpoint {
    side: Side,
    state: Arc<Mutex<State>>,
    conn: Option<u64>,
}

/// Creates a link and its two endpoints. Identical profile, seed and
/// send sequence produce identical traces.
pub fn attach(
    profile: LinkProfile,
    seed: u64,
    clock: SimClock,
) -> Result<(SimLink, LinkEndpoint, LinkEndpoint), ProfileError> {
    profile.validate()?;
    let timeline = Timeline::new(&profile.disconnect_schedule);
    let now = clock.now_ns();
    let state = Arc::new(Mutex::new(State {
        clock,
        profile,
        rng: ChaCha8Rng::seed_from_u64(seed),
        timeline,
        conn: None,
        closing: false,
        next_conn: 1,
        dirs: Default::default(),
        inbox: Default::default(),
        log: Vec::new(),
        processed_until: now,
        seq: 0,
        counters: LinkCounters::default(),
        per_tag: BTreeMap::new(),
        trace: Vec::new(),
    }));
    let endpoint = |side| LinkEndpoint {
        side,
        state: Arc::clone(&state),
        conn: None,
    };
    Ok((
        SimLink {
            state: Arc::clone(&state),
        },
        endpoint(Side::Client),
        endpoint(Side::Server),
    ))
}

impl SimLink {
    pub fn clock(&self) -> SimClock {
        self.state.lock().clock.clone()
    }

    /// Advances virtual time and returns everything that happened, in order.
    pub fn step(&self, duration_ms: f64) -> Vec<NetEvent> {
        let mut st = self.state.lock();
        st.clock.advance(ms_to_ns(duration_ms));
        let now = st.clock.now_ns();
        st.process_due(now);
        std::mem::take(&mut st.log)
    }

    /// Processes events due at the clock's current time.
    pub fn poll(&self) -> Vec<NetEvent> {
        let mut st = self.state.lock();
        let now = st.clock.now_ns();
        st.process_due(now);
        std::mem::take(&mut st.log)
    }

    pub fn is_down(&self) -> bool {
        let mut st = self.state.lock();
        let now = st.clock.now_ns();
        st.timeline.is_down(now)
    }

    pub fn is_connected(&self) -> bool {
        self.state.lock().conn.is_some()
    }

    pub fn counters(&self) -> LinkCounters {
        self.state.lock().counters
    }

    pub fn tag_counters(&self) -> BTreeMap<String, LinkCounters> {
        self.state.lock().per_tag.clone()
    }

    pub fn trace(&self) -> Vec<TraceRecord> {
        self.state.lock().trace.clone()
    }

    /// Writes the trace as tab-separated lines:
    /// `t_send_ns  t_arrive_ns|DROPPED|DOWN|INFLIGHT  size  op`.
    pub fn write_trace<W: Write>(&self, mut out: W) -> io::Result<()> {
        for rec in self.state.lock().trace.iter() {
            writeln!(out, "{rec}")?;
        }
        Ok(())
    }

    /// Nothing in flight in either direction.
    pub fn is_idle(&self) -> bool {
        let st = self.state.lock();
        st.dirs.iter().all(|d| d.queue.is_empty())
    }
}

impl LinkEndpoint {
    pub fn side(&self) -> Side {
        self.side
    }

    pub fn connection(&self) -> Option<u64> {
        self.conn
    }

    /// Client only. Fails immediately while the link is down.
    pub fn connect(&mut self) -> Result<u64, ConnectError> {
        if self.side != Side::Client {
            return Err(ConnectError::NotClient);
        }
        let mut st = self.state.lock();
        let now = st.clock.now_ns();
        st.process_due(now);
        if st.conn.is_some() {
            return Err(ConnectError::AlreadyConnected);
        }
        if st.timeline.is_down(now) {
            return Err(ConnectError::Unreachable);
        }
        let conn = st.next_conn;
        st.next_conn += 1;
        st.conn = Some(conn);
        st.closing = false;
        // Stale events from earlier connections are of no further use.
        st.inbox[Side::Client.idx()].clear();
        st.emit(NetEvent {
            at_ns: now,
            to: Some(Side::Server),
            kind: NetEventKind::Accepted { conn },
        });
        self.conn = Some(conn);
        Ok(conn)
    }

    pub fn send(&mut self, bytes: Vec<u8>, meta: FrameMeta) -> Result<(), SendError> {
        let mut st = self.state.lock();
        let now = st.clock.now_ns();
        st.process_due(now);
        if self.conn.is_none() || (st.conn == self.conn && st.closing) {
            return Err(SendError::NotConnected);
        }
        let size = bytes.len();
        st.counters.sent += 1;
        st.counters.bytes_sent += size as u64;
        if let Some(c) = st.tag_counters(meta.tag.as_ref()) {
            c.sent += 1;
            c.bytes_sent += size as u64;
        }
        if st.conn != self.conn {
            // The connection already died but this side has not observed
            // the close yet: the write vanishes.
            st.counters.lost_down += 1;
            if let Some(c) = st.tag_counters(meta.tag.as_ref()) {
                c.lost_down += 1;
            }
            st.trace.push(TraceRecord {
                from: self.side,
                seq: 0,
                t_send_ns: now,
                fate: FrameFate::Down,
                size,
                op: meta.op.clone(),
            });
            return Ok(());
        }
        let p = st.profile.drop_prob;
        if p > 0.0 && st.rng.gen_bool(p) {
            // A lost websocket frame means the connection failed.
            st.counters.dropped += 1;
            if let Some(c) = st.tag_counters(meta.tag.as_ref()) {
                c.dropped += 1;
            }
            st.trace.push(TraceRecord {
                from: self.side,
                seq: 0,
                t_send_ns: now,
                fate: FrameFate::Dropped,
                size,
                op: meta.op.clone(),
            });
            st.close_conn(now);
            return Ok(());
        }
        st.counters.in_flight += 1;
        if let Some(c) = st.tag_counters(meta.tag.as_ref()) {
            c.in_flight += 1;
        }
        st.enqueue(self.side, now, size, Payload::Frame { bytes, meta });
        Ok(())
    }

    /// Graceful close: the peer sees `Closed` after frames already sent.
    pub fn close(&mut self) {
        let mut st = self.state.lock();
        let now = st.clock.now_ns();
        st.process_due(now);
        if self.conn.is_some() && st.conn == self.conn && !st.closing {
            st.enqueue(self.side, now, 0, Payload::Close);
            st.closing = true;
        }
        self.conn = None;
    }

    /// True when the outbound serializer is idle, so a send would start
    /// transmitting immediately.
    pub fn send_ready(&self) -> bool {
        let mut st = self.state.lock();
        let now = st.clock.now_ns();
        st.process_due(now);
        st.dirs[self.side.idx()].tx_free_at <= now
    }

    pub fn is_connected(&self) -> bool {
        let st = self.state.lock();
        self.conn.is_some() && st.conn == self.conn && !st.closing
    }

    /// Next event addressed to this side.
    pub fn recv(&mut self) -> Option<NetEvent> {
        let mut st = self.state.lock();
        let now = st.clock.now_ns();
        st.process_due(now);
        let ev = st.inbox[self.side.idx()].pop_front()?;
        match ev.kind {
            NetEventKind::Accepted { conn } => self.conn = Some(conn),
            NetEventKind::Closed { conn } if self.conn == Some(conn) => self.conn = None,
            _ => {}
        }
        Some(ev)
    }

    pub fn drain(&mut self) -> Vec<NetEvent> {
        std::iter::from_fn(|| self.recv()).collect()
    }
}
