use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use msggraph::Graph;
use parking_lot::Mutex;
use tokio::sync::{watch, Notify};
use tokio::task::JoinHandle;
use tokio::time::Instant;
use tokio_tungstenite::tungstenite::Message;
use wirecodec::Encoding;

use crate::{DuctAction, DuctConfig, DuctCore, DuctError, Phase, Transmit};

/// A duct running on the current tokio runtime.
pub struct DuctHandle {
    core: Arc<Mutex<DuctCore>>,
    shutdown: watch::Sender<bool>,
    task: JoinHandle<Result<(), DuctError>>,
}

impl DuctHandle {
    pub fn core(&self) -> Arc<Mutex<DuctCore>> {
        Arc::clone(&self.core)
    }

    pub fn phase(&self) -> Phase {
        self.core.lock().phase()
    }

    /// Polls until the duct is live or `timeout` passes.
    pub async fn wait_live(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            if self.core.lock().is_live() {
                return true;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        false
    }

    pub fn is_finished(&self) -> bool {
        self.task.is_finished()
    }

    /// Stops the duct and closes its connection.
    pub async fn shutdown(self) -> Result<(), DuctError> {
        let _ = self.shutdown.send(true);
        self.join().await
    }

    /// Waits for the duct to stop on its own (only on terminal errors).
    pub async fn join(self) -> Result<(), DuctError> {
        self.task.await.unwrap_or(Ok(()))
    }
}

/// Starts a duct for `graph`. Must be called within a tokio runtime.
pub fn spawn(config: DuctConfig, graph: Graph) -> Result<DuctHandle, DuctError> {
    let core = DuctCore::new(config, graph, rand::random())?;
    let notify = Arc::new(Notify::new());
    let n = Arc::clone(&notify);
    core.set_waker(move || n.notify_one());
    let core = Arc::new(Mutex::new(core));
    let (shutdown, rx) = watch::channel(false);
    let task = tokio::spawn(drive(Arc::clone(&core), notify, rx));
    Ok(DuctHandle {
        core,
        shutdown,
        task,
    })
}

enum SessionEnd {
    Lost,
    Shutdown,
}

fn until(graph: &Graph, deadline_ns: u64) -> Duration {
    Duration::from_nanos(deadline_ns.saturating_sub(graph.now_ns()))
}

async fn drive(
    core: Arc<Mutex<DuctCore>>,
    notify: Arc<Notify>,
    mut shutdown: watch::Receiver<bool>,
) -> Result<(), DuctError> {
    let (graph, url, handshake) = {
        let c = core.lock();
        let cfg = c.config();
        (
            c.graph().clone(),
            cfg.url(),
            Duration::from_millis(cfg.handshake_timeout_ms),
        )
    };
    loop {
        let (action, deadline, failure) = {
            let mut c = core.lock();
            let action = c.tick(graph.now_ns());
            (action, c.next_deadline(), c.failure())
        };
        if let Some(err) = failure {
            return Err(err);
        }
        if action == Some(DuctAction::Connect) {
            tracing::debug!(%url, "connecting");
            match tokio::time::timeout(handshake, tokio_tungstenite::connect_async(&url)).await {
                Ok(Ok((ws, _))) => {
                    core.lock().on_connected(graph.now_ns());
                    match session(ws, &core, &notify, &mut shutdown).await {
                        SessionEnd::Lost => continue,
                        SessionEnd::Shutdown => return Ok(()),
                    }
                }
                Ok(Err(err)) => {
                    tracing::debug!(%err, "connect failed");
                    core.lock().on_connect_failed(graph.now_ns());
                }
                Err(_) => core.lock().on_connect_failed(graph.now_ns()),
            }
            continue;
        }
        let sleep = deadline.map(|d| until(&graph, d));
        tokio::select! {
            _ = notify.notified() => {}
            _ = tokio::time::sleep(sleep.unwrap_or_default()), if sleep.is_some() => {}
            _ = shutdown.changed() => return Ok(()),
        }
    }
}

fn to_message(t: &Transmit) -> Message {
    match t.frame.encoding {
        Encoding::Cbor => Message::Binary(t.frame.bytes.clone().into()),
        Encoding::Json => Message::Text(
            String::from_utf8(t.frame.bytes.clone())
                .expect("JSON encoder emits UTF-8")
                .into(),
        ),
    }
}

async fn session<S>(
    ws: tokio_tungstenite::WebSocketStream<S>,
    core: &Mutex<DuctCore>,
    notify: &Notify,
    shutdown: &mut watch::Receiver<bool>,
) -> SessionEnd
where
    S: tokio::io::AsyncRead + tokio::io::AsyncWrite + Unpin,
{
    let (graph, keepalive) = {
        let c = core.lock();
        (c.graph().clone(), Duration::from_millis(c.config().keepalive_ms))
    };
    let (mut sink, mut stream) = ws.split();
    let mut ping = tokio::time::interval_at(Instant::now() + keepalive, keepalive);
    let mut last_rx = Instant::now();
    loop {
        let (action, outgoing, deadline) = {
            let mut c = core.lock();
            let now = graph.now_ns();
            let action = c.tick(now);
            let mut outgoing = Vec::new();
            if action.is_none() {
                while let Some(t) = c.next_transmit(now) {
                    outgoing.push(t);
                }
            }
            (action, outgoing, c.next_deadline())
        };
        if action == Some(DuctAction::Close) {
            let _ = sink.close().await;
            return SessionEnd::Lost;
        }
        for (i, t) in outgoing.iter().enumerate() {
            if let Err(err) = sink.feed(to_message(t)).await {
                tracing::debug!(%err, "write failed");
                let mut c = core.lock();
                for lost in &outgoing[i..] {
                    c.on_transmit_failed(lost);
                }
                c.on_closed(graph.now_ns());
                return SessionEnd::Lost;
            }
        }
        if sink.flush().await.is_err() {
            core.lock().on_closed(graph.now_ns());
            return SessionEnd::Lost;
        }
        let sleep = deadline.map(|d| until(&graph, d));
        tokio::select! {
            incoming = stream.next() => {
                let (bytes, binary) = match incoming {
                    Some(Ok(Message::Text(t))) => (t.as_bytes().to_vec(), false),
                    Some(Ok(Message::Binary(b))) => (b.to_vec(), true),
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => {
                        core.lock().on_closed(graph.now_ns());
                        return SessionEnd::Lost;
                    }
                    Some(Ok(_)) => {
                        last_rx = Instant::now();
                        continue;
                    }
                };
                last_rx = Instant::now();
                let action = core.lock().on_message(graph.now_ns(), &bytes, binary);
                if action == Some(DuctAction::Close) {
                    let _ = sink.close().await;
                    return SessionEnd::Lost;
                }
            }
            _ = notify.notified() => {}
            _ = tokio::time::sleep(sleep.unwrap_or_default()), if sleep.is_some() => {}
            _ = ping.tick() => {
                if last_rx.elapsed() > keepalive * 2 {
                    tracing::info!("keepalive expired");
                    core.lock().on_closed(graph.now_ns());
                    return SessionEnd::Lost;
                }
                let _ = sink.send(Message::Ping(Vec::new().into())).await;
            }
            _ = shutdown.changed() => {
                let _ = sink.close().await;
                return SessionEnd::Shutdown;
            }
        }
    }
}
