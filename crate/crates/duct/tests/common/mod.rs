#![allow(dead_code)]

use std::sync::Arc;

use bridge::{Bridge, BridgeConfig, ConnId, Route};
use duct::{DuctAction, DuctConfig, DuctCore};
use msggraph::{Clock, Graph};
use netsim::{attach, FrameMeta, LinkEndpoint, LinkProfile, NetEventKind, SimClock, SimLink};
use wirecodec::{Encoding, WireFrame};

pub const MS: u64 = 1_000_000;

/// Duct core, impaired link and bridge core on one virtual clock.
pub struct Rig {
    pub clock: SimClock,
    pub link: SimLink,
    pub client: LinkEndpoint,
    pub server: LinkEndpoint,
    pub bridge: Bridge,
    pub duct: DuctCore,
    pub local: Graph,
    pub conn: Option<ConnId>,
    /// Every frame the duct handed to the link, decoded.
    pub sent: Vec<WireFrame>,
    path: String,
}

impl Rig {
    pub fn new(config: DuctConfig, profile: LinkProfile, seed: u64) -> Self {
        let route = Route::new(config.route.clone());
        let route = match config.token() {
            Some(t) => route.with_token(t),
            None => route,
        };
        Self::with_route(config, route, profile, seed)
    }

    pub fn with_route(config: DuctConfig, route: Route, profile: LinkProfile, seed: u64) -> Self {
        let clock = SimClock::new_virtual();
        let shared: Arc<dyn Clock> = Arc::new(clock.clone());
        let path = route.path();
        let bridge = Bridge::new(BridgeConfig::new(vec![route]), Arc::clone(&shared)).unwrap();
        let local = Graph::with_clock(shared);
        let duct = DuctCore::new(config, local.clone(), seed).unwrap();
        let (link, client, server) = attach(profile, seed, clock.clone()).unwrap();
        Self {
            clock,
            link,
            client,
            server,
            bridge,
            duct,
            local,
            conn: None,
            sent: Vec::new(),
            path,
        }
    }

    pub fn cloud(&self) -> Graph {
        let name = self.path.trim_start_matches(bridge::PATH_PREFIX);
        self.bridge.route_graph(name).unwrap()
    }

    pub fn now_ms(&self) -> f64 {
        self.clock.now_ns() as f64 / MS as f64
    }

    /// One 1 ms cycle.
    pub fn tick(&mut self) {
        let now = self.clock.now_ns();
        match self.duct.tick(now) {
            Some(DuctAction::Connect) => match self.client.connect() {
                Ok(_) => self.duct.on_connected(now),
                Err(_) => self.duct.on_connect_failed(now),
            },
            Some(DuctAction::Close) => self.client.close(),
            None => {}
        }
        while self.client.is_connected() && self.client.send_ready() {
            let Some(t) = self.duct.next_transmit(now) else {
                break;
            };
            self.sent
                .push(wirecodec::decode(&t.frame.bytes, t.frame.encoding).unwrap());
            let meta = FrameMeta {
                op: t.op.to_string(),
                tag: t.topic.clone(),
                binary: t.frame.encoding == Encoding::Cbor,
            };
            if self.client.send(t.frame.bytes.clone(), meta).is_err() {
                self.duct.on_transmit_failed(&t);
            }
        }
        for ev in self.server.drain() {
            match ev.kind {
                NetEventKind::Accepted { .. } => {
                    self.conn = Some(self.bridge.accept(&self.path).unwrap());
                }
                NetEventKind::Delivered { bytes, meta, .. } => {
                    if let Some(c) = self.conn {
                        self.bridge.on_message(c, &bytes, meta.binary).unwrap();
                    }
                }
                NetEventKind::Closed { .. } => {
                    if let Some(c) = self.conn.take() {
                        self.bridge.disconnect(c);
                    }
                }
                _ => {}
            }
        }
        if let Some(c) = self.conn {
            let out = self.bridge.poll(c).unwrap();
            for f in &out.frames {
                let e = self.bridge.encode_for(c, f);
                let meta = FrameMeta {
                    op: f.op.to_string(),
                    tag: f.topic.clone(),
                    binary: e.encoding == Encoding::Cbor,
                };
                let _ = self.server.send(e.bytes, meta);
            }
            if out.close {
                self.server.close();
                self.bridge.disconnect(c);
                self.conn = None;
            }
        }
        for ev in self.client.drain() {
            match ev.kind {
                NetEventKind::Delivered { bytes, meta, .. } => {
                    if self.duct.on_message(now, &bytes, meta.binary) == Some(DuctAction::Close) {
                        self.client.close();
                    }
                }
                NetEventKind::Closed { .. } => self.duct.on_closed(now),
                _ => {}
            }
        }
        self.clock.advance(MS);
    }

    pub fn run_ms(&mut self, ms: u64) {
        for _ in 0..ms {
            self.tick();
        }
    }

    /// Runs until the duct is live; panics after `limit_ms`.
    pub fn until_live(&mut self, limit_ms: u64) {
        for _ in 0..limit_ms {
            if self.duct.is_live() {
                // Let the registrations land on the bridge.
                self.run_ms(30);
                return;
            }
            self.tick();
        }
        panic!("duct not live after {limit_ms} ms (phase {:?})", self.duct.phase());
    }

    /// Drops the transport from the bridge side, as an abrupt disconnect.
    pub fn cut(&mut self) {
        if let Some(c) = self.conn.take() {
            self.bridge.disconnect(c);
            self.server.close();
        }
    }
}
