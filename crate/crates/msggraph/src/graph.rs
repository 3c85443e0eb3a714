use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use thiserror::Error;

use crate::clock::{Clock, MonotonicClock};
use crate::service::{Handler, PendingCall, ServiceHandle, ServiceRequest};
use crate::{MessageEnvelope, ServiceError, ServiceSpec, TopicName, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("topic {topic} is advertised as {existing}, not {requested}")]
    TypeConflict {
        topic: TopicName,
        existing: String,
        requested: String,
    },
    #[error("service {0} already has a provider")]
    ServiceExists(TopicName),
}

/// Topic advertisement.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TopicSpec {
    pub name: TopicName,
    pub type_name: String,
    pub latched: bool,
}

impl TopicSpec {
    pub fn new(name: TopicName, type_name: impl Into<String>) -> Self {
        Self {
            name,
            type_name: type_name.into(),
            latched: false,
        }
    }

    pub fn latched(mut self, latched: bool) -> Self {
        self.latched = latched;
        self
    }
}

/// Per-subscription buffering. Overflow drops the oldest queued message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueuePolicy {
    /// Maximum queued messages; 0 means unbounded.
    pub queue_length: usize,
}

impl QueuePolicy {
    pub fn bounded(queue_length: usize) -> Self {
        Self { queue_length }
    }

    pub fn unbounded() -> Self {
        Self { queue_length: 0 }
    }
}

impl Default for QueuePolicy {
    fn default() -> Self {
        Self { queue_length: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicInfo {
    pub spec: TopicSpec,
    pub publisher_count: usize,
    pub subscriber_count: usize,
}

/// Point-in-time view of the graph, sorted by name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GraphSnapshot {
    pub topics: Vec<TopicInfo>,
    pub services: Vec<ServiceSpec>,
}

impl GraphSnapshot {
    pub fn topic(&self, name: &str) -> Option<&TopicInfo> {
        self.topics.iter().find(|t| t.spec.name.as_str() == name)
    }
}

type Waker = Arc<dyn Fn() + Send + Sync>;

pub(crate) struct SubShared {
    id: u64,
    topic: TopicName,
    policy: QueuePolicy,
    queue: Mutex<VecDeque<Arc<MessageEnvelope>>>,
    ready: Condvar,
    dropped: AtomicU64,
    received: AtomicU64,
    closed: AtomicBool,
    waker: Mutex<Option<Waker>>,
}

impl SubShared {
    fn push(&self, msg: Arc<MessageEnvelope>) {
        let mut q = self.queue.lock();
        q.push_back(msg);
        if self.policy.queue_length > 0 {
            while q.len() > self.policy.queue_length {
                q.pop_front();
                self.dropped.fetch_add(1, Ordering::Relaxed);
            }
        }
        self.received.fetch_add(1, Ordering::Relaxed);
        drop(q);
        self.ready.notify_all();
    }
}

struct TopicEntry {
    type_name: Option<String>,
    latched: bool,
    publishers: BTreeSet<u64>,
    subscribers: Vec<Arc<SubShared>>,
    retained: Option<Arc<MessageEnvelope>>,
}

impl TopicEntry {
    fn new() -> Self {
        Self {
            type_name: None,
            latched: false,
            publishers: BTreeSet::new(),
            subscribers: Vec::new(),
            retained: None,
        }
    }

    // A topic lives while anyone is attached to it or it holds a latched value.
    fn is_idle(&self) -> bool {
        self.publishers.is_empty() && self.subscribers.is_empty() && self.retained.is_none()
    }
}

struct ServiceEntry {
    spec: ServiceSpec,
    id: u64,
    handler: Handler,
}

#[derive(Default)]
struct State {
    topics: BTreeMap<TopicName, TopicEntry>,
    services: BTreeMap<TopicName, ServiceEntry>,
}

pub(crate) struct Inner {
    clock: Arc<dyn Clock>,
    state: Mutex<State>,
    next_id: AtomicU64,
}

impl Inner {
    fn next_id(&self) -> u64 {
        self.next_id.fetch_add(1, Ordering::Relaxed)
    }

    pub(crate) fn remove_service(&self, name: &TopicName, id: u64) {
        let mut state = self.state.lock();
        if state.services.get(name).is_some_and(|e| e.id == id) {
            state.services.remove(name);
        }
    }

    fn remove_publisher(&self, topic: &TopicName, id: u64) {
        let mut state = self.state.lock();
        if let Some(entry) = state.topics.get_mut(topic) {
            entry.publishers.remove(&id);
            if entry.is_idle() {
                state.topics.remove(topic);
            }
        }
    }

    fn remove_subscriber(&self, topic: &TopicName, id: u64) {
        let mut state = self.state.lock();
        if let Some(entry) = state.topics.get_mut(topic) {
            entry.subscribers.retain(|s| s.id != id);
            if entry.is_idle() {
                state.topics.remove(topic);
            }
        }
    }
}

/// Shared handle to a message graph. Clones refer to the same graph.
#[derive(Clone)]
pub struct Graph {
    inner: Arc<Inner>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for Graph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Graph").finish_non_exhaustive()
    }
}

impl Graph {
    /// Graph stamped by a wall clock started now.
    pub fn new() -> Self {
        Self::with_clock(Arc::new(MonotonicClock::new()))
    }

    pub fn with_clock(clock: Arc<dyn Clock>) -> Self {
        Self {
            inner: Arc::new(Inner {
                clock,
                state: Mutex::new(State::default()),
                next_id: AtomicU64::new(1),
            }),
        }
    }

    pub fn now_ns(&self) -> u64 {
        self.inner.clock.now_ns()
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        Arc::clone(&self.inner.clock)
    }

    /// True when both handles point at the same graph.
    pub fn same_graph(&self, other: &Graph) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn advertise(&self, spec: TopicSpec) -> Result<PublisherHandle, GraphError> {
        let id = self.inner.next_id();
        let mut state = self.inner.state.lock();
        let entry = state
            .topics
            .entry(spec.name.clone())
            .or_insert_with(TopicEntry::new);
        match &entry.type_name {
            Some(existing) if *existing != spec.type_name => {
                let err = GraphError::TypeConflict {
                    topic: spec.name.clone(),
                    existing: existing.clone(),
                    requested: spec.type_name.clone(),
                };
                if entry.is_idle() {
                    state.topics.remove(&spec.name);
                }
                return Err(err);
            }
            Some(_) => {}
            None => entry.type_name = Some(spec.type_name.clone()),
        }
        entry.latched |= spec.latched;
        entry.publishers.insert(id);
        drop(state);
        Ok(PublisherHandle {
            graph: Arc::downgrade(&self.inner),
            spec,
            id,
            seq: Mutex::new(0),
        })
    }

    /// Subscribing before any advertisement is allowed. A retained latched
    /// value, if any, is queued first.
    pub fn subscribe(&self, topic: &TopicName, policy: QueuePolicy) -> SubscriptionHandle {
        let shared = Arc::new(SubShared {
            id: self.inner.next_id(),
            topic: topic.clone(),
            policy,
            queue: Mutex::new(VecDeque::new()),
            ready: Condvar::new(),
            dropped: AtomicU64::new(0),
            received: AtomicU64::new(0),
            closed: AtomicBool::new(false),
            waker: Mutex::new(None),
        });
        let mut state = self.inner.state.lock();
        let entry = state
            .topics
            .entry(topic.clone())
            .or_insert_with(TopicEntry::new);
        if let Some(retained) = &entry.retained {
            shared.push(Arc::clone(retained));
        }
        entry.subscribers.push(Arc::clone(&shared));
        drop(state);
        SubscriptionHandle {
            graph: Arc::downgrade(&self.inner),
            shared,
        }
    }

    /// Runs `callback` for every message on a dedicated thread. Calls for one
    /// subscription never overlap.
    pub fn subscribe_callback<F>(
        &self,
        topic: &TopicName,
        policy: QueuePolicy,
        mut callback: F,
    ) -> CallbackSubscription
    where
        F: FnMut(MessageEnvelope) + Send + 'static,
    {
        let sub = self.subscribe(topic, policy);
        let shared = Arc::clone(&sub.shared);
        let worker = std::thread::spawn(move || {
            while let Some(msg) = sub.recv_blocking() {
                callback(msg);
            }
        });
        CallbackSubscription {
            shared,
            graph: Arc::downgrade(&self.inner),
            worker: Some(worker),
        }
    }

    /// Last value published on a latched topic.
    pub fn retained(&self, topic: &TopicName) -> Option<MessageEnvelope> {
        let state = self.inner.state.lock();
        state
            .topics
            .get(topic)
            .and_then(|e| e.retained.as_deref().cloned())
    }

    pub fn advertise_service<F>(
        &self,
        spec: ServiceSpec,
        handler: F,
    ) -> Result<ServiceHandle, GraphError>
    where
        F: Fn(ServiceRequest) + Send + Sync + 'static,
    {
        let id = self.inner.next_id();
        let mut state = self.inner.state.lock();
        if state.services.contains_key(&spec.name) {
            return Err(GraphError::ServiceExists(spec.name));
        }
        state.services.insert(
            spec.name.clone(),
            ServiceEntry {
                spec: spec.clone(),
                id,
                handler: Arc::new(handler),
            },
        );
        drop(state);
        Ok(ServiceHandle {
            graph: Arc::downgrade(&self.inner),
            spec,
            id,
        })
    }

    pub fn has_service(&self, name: &str) -> bool {
        let Ok(name) = TopicName::new(name) else {
            return false;
        };
        self.inner.state.lock().services.contains_key(&name)
    }

    /// Dispatches a call; `on_complete` runs exactly once, with the reply or
    /// with the reason there is none. The provider handler runs on the
    /// calling thread.
    pub fn call_service_with<F>(&self, name: &str, request: Value, on_complete: F)
    where
        F: FnOnce(Result<Value, ServiceError>) + Send + 'static,
    {
        let found = TopicName::new(name).ok().and_then(|service| {
            let state = self.inner.state.lock();
            state
                .services
                .get(&service)
                .map(|e| (service, Arc::clone(&e.handler)))
        });
        match found {
            Some((service, handler)) => handler(ServiceRequest {
                service,
                request,
                responder: crate::Responder::new(Box::new(on_complete)),
            }),
            None => on_complete(Err(ServiceError::NoProvider(name.to_owned()))),
        }
    }

    pub fn call_service_pending(&self, name: &str, request: Value) -> PendingCall {
        let (completion, pending) = PendingCall::channel();
        self.call_service_with(name, request, completion);
        pending
    }

    /// Blocking call. Replies that arrive after `timeout_ms` are discarded
    /// and reported as `Timeout`.
    pub fn call_service(
        &self,
        name: &str,
        request: Value,
        timeout_ms: u64,
    ) -> Result<Value, ServiceError> {
        self.call_service_pending(name, request)
            .wait(Duration::from_millis(timeout_ms))
    }

    pub fn snapshot(&self) -> GraphSnapshot {
        let state = self.inner.state.lock();
        let topics = state
            .topics
            .iter()
            .map(|(name, e)| TopicInfo {
                spec: TopicSpec {
                    name: name.clone(),
                    type_name: e.type_name.clone().unwrap_or_default(),
                    latched: e.latched,
                },
                publisher_count: e.publishers.len(),
                subscriber_count: e.subscribers.len(),
            })
            .collect();
        let services = state.services.values().map(|e| e.spec.clone()).collect();
        GraphSnapshot { topics, services }
    }
}

/// Advertisement token. Dropping it unadvertises; a latched value it
/// published stays retained.
pub struct PublisherHandle {
    graph: Weak<Inner>,
    spec: TopicSpec,
    id: u64,
    seq: Mutex<u64>,
}

impl std::fmt::Debug for PublisherHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PublisherHandle")
            .field("spec", &self.spec)
            .field("id", &self.id)
            .finish()
    }
}

impl PublisherHandle {
    pub fn spec(&self) -> &TopicSpec {
        &self.spec
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Publishes with the graph clock's current time. Returns the number of
    /// subscribers the message was queued for.
    pub fn publish(&self, payload: Value) -> usize {
        match self.graph.upgrade() {
            Some(inner) => {
                let now = inner.clock.now_ns();
                self.publish_inner(&inner, payload, now)
            }
            None => 0,
        }
    }

    pub fn publish_stamped(&self, payload: Value, stamp_ns: u64) -> usize {
        match self.graph.upgrade() {
            Some(inner) => self.publish_inner(&inner, payload, stamp_ns),
            None => 0,
        }
    }

    fn publish_inner(&self, inner: &Inner, payload: Value, stamp_ns: u64) -> usize {
        // Held across fan-out so sequence order equals enqueue order.
        let mut seq = self.seq.lock();
        *seq += 1;
        let msg = Arc::new(MessageEnvelope {
            topic: self.spec.name.clone(),
            type_name: self.spec.type_name.clone(),
            seq: *seq,
            stamp_ns,
            publisher_id: self.id,
            payload,
        });
        let mut wakers = Vec::new();
        let delivered;
        {
            let mut state = inner.state.lock();
            let Some(entry) = state.topics.get_mut(&self.spec.name) else {
                return 0;
            };
            if entry.latched {
                entry.retained = Some(Arc::clone(&msg));
            }
            delivered = entry.subscribers.len();
            for sub in &entry.subscribers {
                sub.push(Arc::clone(&msg));
                if let Some(w) = sub.waker.lock().as_ref() {
                    wakers.push(Arc::clone(w));
                }
            }
        }
        for w in wakers {
            w();
        }
        delivered
    }

    pub fn unadvertise(self) {}
}

impl Drop for PublisherHandle {
    fn drop(&mut self) {
        if let Some(inner) = self.graph.upgrade() {
            inner.remove_publisher(&self.spec.name, self.id);
        }
    }
}

/// Pull-style subscription with a bounded drop-oldest queue.
pub struct SubscriptionHandle {
    graph: Weak<Inner>,
    shared: Arc<SubShared>,
}

impl std::fmt::Debug for SubscriptionHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubscriptionHandle")
            .field("topic", &self.shared.topic)
            .field("policy", &self.shared.policy)
            .finish()
    }
}

impl SubscriptionHandle {
    pub fn topic(&self) -> &TopicName {
        &self.shared.topic
    }

    pub fn policy(&self) -> QueuePolicy {
        self.shared.policy
    }

    pub fn try_recv(&self) -> Option<MessageEnvelope> {
        self.shared
            .queue
            .lock()
            .pop_front()
            .map(Arc::unwrap_or_clone)
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<MessageEnvelope> {
        let mut q = self.shared.queue.lock();
        if q.is_empty() {
            self.shared.ready.wait_for(&mut q, timeout);
        }
        q.pop_front().map(Arc::unwrap_or_clone)
    }

    fn recv_blocking(&self) -> Option<MessageEnvelope> {
        let mut q = self.shared.queue.lock();
        loop {
            if let Some(msg) = q.pop_front() {
                return Some(Arc::unwrap_or_clone(msg));
            }
            if self.shared.closed.load(Ordering::Acquire) {
                return None;
            }
            self.shared.ready.wait(&mut q);
        }
    }

    pub fn drain(&self) -> Vec<MessageEnvelope> {
        self.shared
            .queue
            .lock()
            .drain(..)
            .map(Arc::unwrap_or_clone)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.shared.queue.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Messages discarded by the drop-oldest policy so far.
    pub fn dropped(&self) -> u64 {
        self.shared.dropped.load(Ordering::Relaxed)
    }

    /// Messages ever queued, including later-dropped ones.
    pub fn received(&self) -> u64 {
        self.shared.received.load(Ordering::Relaxed)
    }

    /// Registers a hook run after each enqueue, outside the graph lock.
    pub fn set_waker<F>(&self, waker: F)
    where
        F: Fn() + Send + Sync + 'static,
    {
        *self.shared.waker.lock() = Some(Arc::new(waker));
    }

    pub fn unsubscribe(self) {}
}

impl Drop for SubscriptionHandle {
    fn drop(&mut self) {
        if let Some(inner) = self.graph.upgrade() {
            inner.remove_subscriber(&self.shared.topic, self.shared.id);
        }
    }
}

/// Subscription serviced by a worker thread; see [`Graph::subscribe_callback`].
pub struct CallbackSubscription {
    shared: Arc<SubShared>,
    graph: Weak<Inner>,
    worker: Option<JoinHandle<()>>,
}

impl CallbackSubscription {
    pub fn dropped(&self) -> u64 {
        self.shared.dropped.load(Ordering::Relaxed)
    }
}

impl Drop for CallbackSubscription {
    fn drop(&mut self) {
        if let Some(inner) = self.graph.upgrade() {
            inner.remove_subscriber(&self.shared.topic, self.shared.id);
        }
        {
            let _q = self.shared.queue.lock();
            self.shared.closed.store(true, Ordering::Release);
        }
        self.shared.ready.notify_all();
        if let Some(worker) = self.worker.take() {
            // A callback that drops its own subscription must not join itself.
            if worker.thread().id() != std::thread::current().id() {
                let _ = worker.join();
            }
        }
    }
}
