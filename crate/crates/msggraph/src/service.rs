use std::sync::mpsc;
use std::sync::{Arc, Weak};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::graph::Inner;
use crate::{TopicName, Value};

/// Request/reply endpoint description.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ServiceSpec {
    pub name: TopicName,
    pub request_type: String,
    pub response_type: String,
}

impl ServiceSpec {
    pub fn new(
        name: TopicName,
        request_type: impl Into<String>,
        response_type: impl Into<String>,
    ) -> Self {
        Self {
            name,
            request_type: request_type.into(),
            response_type: response_type.into(),
        }
    }
}

/// Outcome of a service call other than a response.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServiceError {
    #[error("no provider for service {0}")]
    NoProvider(String),
    #[error("service call timed out")]
    Timeout,
    #[error("provider fault: {0}")]
    ProviderFault(String),
}

type Completion = Box<dyn FnOnce(Result<Value, ServiceError>) + Send>;

/// One-shot reply slot handed to a provider.
///
/// Consuming methods guarantee a single reply. Dropping an unanswered
/// responder reports `ProviderFault` to the caller.
pub struct Responder {
    completion: Option<Completion>,
}

impl Responder {
    pub(crate) fn new(completion: Completion) -> Self {
        Self {
            completion: Some(completion),
        }
    }

    pub fn respond(mut self, response: Value) {
        self.finish(Ok(response));
    }

    pub fn fault(mut self, reason: impl Into<String>) {
        self.finish(Err(ServiceError::ProviderFault(reason.into())));
    }

    pub fn fail(mut self, err: ServiceError) {
        self.finish(Err(err));
    }

    fn finish(&mut self, result: Result<Value, ServiceError>) {
        if let Some(done) = self.completion.take() {
            done(result);
        }
    }
}

impl Drop for Responder {
    fn drop(&mut self) {
        self.finish(Err(ServiceError::ProviderFault(
            "provider dropped the request without replying".into(),
        )));
    }
}

impl std::fmt::Debug for Responder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Responder")
            .field("answered", &self.completion.is_none())
            .finish()
    }
}

/// A call as delivered to a provider handler.
#[derive(Debug)]
pub struct ServiceRequest {
    pub service: TopicName,
    pub request: Value,
    pub responder: Responder,
}

pub(crate) type Handler = Arc<dyn Fn(ServiceRequest) + Send + Sync>;

/// Registration token for a service provider. Dropping it withdraws the
/// service.
pub struct ServiceHandle {
    pub(crate) graph: Weak<Inner>,
    pub(crate) spec: ServiceSpec,
    pub(crate) id: u64,
}

impl ServiceHandle {
    pub fn spec(&self) -> &ServiceSpec {
        &self.spec
    }

    pub fn unadvertise(self) {}
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        if let Some(inner) = self.graph.upgrade() {
            inner.remove_service(&self.spec.name, self.id);
        }
    }
}

/// Reply slot for a call whose result is collected later.
pub struct PendingCall {
    rx: mpsc::Receiver<(Instant, Result<Value, ServiceError>)>,
    started: Instant,
}

impl PendingCall {
    pub(crate) fn channel() -> (Completion, Self) {
        let (tx, rx) = mpsc::channel();
        let completion: Completion = Box::new(move |result| {
            // The receiver is gone once the caller gave up; late replies vanish.
            let _ = tx.send((Instant::now(), result));
        });
        (
            completion,
            Self {
                rx,
                started: Instant::now(),
            },
        )
    }

    /// Non-blocking probe.
    pub fn try_result(&self) -> Option<Result<Value, ServiceError>> {
        self.rx.try_recv().ok().map(|(_, r)| r)
    }

    /// Blocks until the reply arrives or `timeout` has elapsed since the call
    /// was issued. A reply produced after the deadline is discarded.
    pub fn wait(self, timeout: Duration) -> Result<Value, ServiceError> {
        let deadline = self.started + timeout;
        let remaining = deadline.saturating_duration_since(Instant::now());
        match self.rx.recv_timeout(remaining) {
            Ok((at, result)) if at <= deadline => result,
            Ok(_) => Err(ServiceError::Timeout),
            Err(mpsc::RecvTimeoutError::Timeout) => Err(ServiceError::Timeout),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(ServiceError::ProviderFault(
                "reply channel closed".into(),
            )),
        }
    }
}
