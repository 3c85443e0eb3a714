use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use msggraph::{Clock, MonotonicClock};
use parking_lot::Mutex;
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{watch, Notify};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tokio_tungstenite::tungstenite::http::StatusCode;
use tokio_tungstenite::tungstenite::Message;
use wirecodec::Encoding;

use crate::tls::{acceptor, TlsFiles};
use crate::{Bridge, BridgeConfig, BridgeError, ConnId};

pub const DEFAULT_PORT: u16 = 8443;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub listen: SocketAddr,
    pub bridge: BridgeConfig,
    pub tls: Option<TlsFiles>,
    /// Relay counters are rewritten here as JSON every second and at exit.
    pub metrics_out: Option<PathBuf>,
}

impl ServerConfig {
    pub fn new(listen: SocketAddr, bridge: BridgeConfig) -> Self {
        Self {
            listen,
            bridge,
            tls: None,
            metrics_out: None,
        }
    }
}

/// A running server. Dropping the handle does not stop it; call
/// [`ServerHandle::shutdown`].
pub struct ServerHandle {
    local_addr: SocketAddr,
    bridge: Arc<Mutex<Bridge>>,
    shutdown: watch::Sender<bool>,
    task: JoinHandle<()>,
    metrics_out: Option<PathBuf>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn bridge(&self) -> Arc<Mutex<Bridge>> {
        Arc::clone(&self.bridge)
    }

    /// Listening sockets held by the server. Everything is multiplexed
    /// over the single bound port, so this is always one while running.
    pub fn listening_sockets(&self) -> usize {
        usize::from(!self.task.is_finished())
    }

    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        let _ = self.task.await;
        if let Some(path) = &self.metrics_out {
            write_metrics(&self.bridge, path);
        }
    }

    /// Runs until the process receives ctrl-c.
    pub async fn run_until_ctrl_c(self) {
        let _ = tokio::signal::ctrl_c().await;
        tracing::info!("shutting down");
        self.shutdown().await;
    }
}

/// Binds the single listening port and starts accepting connections.
pub async fn serve(config: ServerConfig) -> Result<ServerHandle, BridgeError> {
    let clock: Arc<dyn Clock> = Arc::new(MonotonicClock::new());
    let bridge = Arc::new(Mutex::new(Bridge::new(config.bridge, Arc::clone(&clock))?));
    let tls = config.tls.as_ref().map(acceptor).transpose()?;
    let listener = TcpListener::bind(config.listen)
        .await
        .map_err(|source| BridgeError::Bind {
            addr: config.listen,
            source,
        })?;
    let local_addr = listener.local_addr().map_err(|source| BridgeError::Bind {
        addr: config.listen,
        source,
    })?;
    tracing::info!(%local_addr, tls = tls.is_some(), "listening");
    let (shutdown, shutdown_rx) = watch::channel(false);
    let ctx = Ctx {
        bridge: Arc::clone(&bridge),
        clock,
        shutdown: shutdown_rx,
    };
    let metrics_out = config.metrics_out.clone();
    let task = tokio::spawn(accept_loop(listener, tls, ctx, metrics_out.clone()));
    Ok(ServerHandle {
        local_addr,
        bridge,
        shutdown,
        task,
        metrics_out,
    })
}

#[derive(Clone)]
struct Ctx {
    bridge: Arc<Mutex<Bridge>>,
    clock: Arc<dyn Clock>,
    shutdown: watch::Receiver<bool>,
}

async fn accept_loop(
    listener: TcpListener,
    tls: Option<tokio_rustls::TlsAcceptor>,
    mut ctx: Ctx,
    metrics_out: Option<PathBuf>,
) {
    let mut metrics_tick = tokio::time::interval(Duration::from_secs(1));
    let mut conns = tokio::task::JoinSet::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => {
                let (stream, peer) = match accepted {
                    Ok(pair) => pair,
                    Err(err) => {
                        tracing::warn!(%err, "accept failed");
                        continue;
                    }
                };
                let _ = stream.set_nodelay(true);
                let ctx = ctx.clone();
                let tls = tls.clone();
                conns.spawn(async move {
                    let result = match tls {
                        Some(tls) => match tls.accept(stream).await {
                            Ok(stream) => serve_conn(stream, ctx).await,
                            Err(err) => Err(format!("tls handshake: {err}")),
                        },
                        None => serve_conn::<TcpStream>(stream, ctx).await,
                    };
                    if let Err(err) = result {
                        tracing::debug!(%peer, %err, "connection ended");
                    }
                });
            }
            _ = metrics_tick.tick(), if metrics_out.is_some() => {
                if let Some(path) = &metrics_out {
                    write_metrics(&ctx.bridge, path);
                }
            }
            Some(_) = conns.join_next(), if !conns.is_empty() => {}
            _ = ctx.shutdown.changed() => break,
        }
    }
    // Connection tasks observe the same shutdown signal.
    while conns.join_next().await.is_some() {}
}

fn write_metrics(bridge: &Mutex<Bridge>, path: &std::path::Path) {
    let snapshot = {
        let b = bridge.lock();
        serde_json::json!({
            "connections": b.connections().len(),
            "routes": b.stats(),
        })
    };
    let text = serde_json::to_string_pretty(&snapshot).expect("metrics serialize");
    if let Err(err) = std::fs::write(path, text + "\n") {
        tracing::warn!(path = %path.display(), %err, "cannot write metrics");
    }
}

#[allow(clippy::result_large_err)] // handshake callback signature is fixed by tungstenite
async fn serve_conn<S>(stream: S, mut ctx: Ctx) -> Result<(), String>
where
    S: AsyncRead + AsyncWrite + Unpin,
{
    let mut path = String::new();
    let check = |req: &Request, resp: Response| -> Result<Response, ErrorResponse> {
        let requested = req.uri().path();
        if ctx.bridge.lock().knows_path(requested) {
            path = requested.to_owned();
            Ok(resp)
        } else {
            let mut refusal = ErrorResponse::new(Some(format!("no route serves {requested}")));
            *refusal.status_mut() = StatusCode::NOT_FOUND;
            Err(refusal)
        }
    };
    let ws = tokio_tungstenite::accept_hdr_async(stream, check)
        .await
        .map_err(|e| format!("upgrade refused: {e}"))?;
    let notify = Arc::new(Notify::new());
    let conn = {
        let mut b = ctx.bridge.lock();
        let conn = b.accept(&path).map_err(|e| e.to_string())?;
        let n = Arc::clone(&notify);
        b.set_waker(conn, move || n.notify_one())
            .map_err(|e| e.to_string())?;
        conn
    };
    let result = pump(ws, conn, &notify, &mut ctx).await;
    ctx.bridge.lock().disconnect(conn);
    result
}

async fn pump<S>(
    ws: tokio_tungstenite::WebSocketStream<S>,
    conn: ConnId,
    notify: &Notify,
    ctx: &mut Ctx,
) -> Result<(), String>
where
    S: AsyncRead + AsyncWrite + Unpin,
{
    let (mut sink, mut stream) = ws.split();
    loop {
        let (messages, close, wake) = {
            let mut b = ctx.bridge.lock();
            let out = b.poll(conn).map_err(|e| e.to_string())?;
            let messages: Vec<Message> = out
                .frames
                .iter()
                .map(|f| to_message(b.encode_for(conn, f)))
                .collect();
            (messages, out.close, out.next_wake_ns)
        };
        for m in messages {
            sink.feed(m).await.map_err(|e| e.to_string())?;
        }
        sink.flush().await.map_err(|e| e.to_string())?;
        if close {
            let _ = sink.close().await;
            return Ok(());
        }
        let sleep = wake.map(|at| Duration::from_nanos(at.saturating_sub(ctx.clock.now_ns())));
        tokio::select! {
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    ctx.bridge.lock().on_message(conn, text.as_bytes(), false).map_err(|e| e.to_string())?;
                }
                Some(Ok(Message::Binary(bytes))) => {
                    ctx.bridge.lock().on_message(conn, &bytes, true).map_err(|e| e.to_string())?;
                }
                Some(Ok(Message::Close(_))) | None => return Ok(()),
                Some(Ok(_)) => {}
                Some(Err(err)) => return Err(err.to_string()),
            },
            _ = notify.notified() => {}
            _ = tokio::time::sleep(sleep.unwrap_or_default()), if sleep.is_some() => {}
            _ = ctx.shutdown.changed() => {
                let _ = sink.close().await;
                return Ok(());
            }
        }
    }
}

fn to_message(frame: wirecodec::EncodedFrame) -> Message {
    match frame.encoding {
        Encoding::Cbor => Message::Binary(frame.bytes.into()),
        Encoding::Json => Message::Text(
            String::from_utf8(frame.bytes)
                .expect("JSON encoder emits UTF-8")
                .into(),
        ),
    }
}
