use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use bridge::{serve, BridgeConfig, Route, ServerConfig, ServerHandle, TlsFiles};
use futures_util::{SinkExt, StreamExt};
use msggraph::Value;
use tokio::io::{AsyncRead, AsyncWrite};
use tokio_tungstenite::tungstenite::{self, Message};
use tokio_tungstenite::WebSocketStream;
use wirecodec::{Encoding, Op, WireFrame, AUTH_FAILED_TEXT};

async fn start(routes: Vec<Route>) -> ServerHandle {
    let listen: SocketAddr = "127.0.0.1:0".parse().unwrap();
    serve(ServerConfig::new(listen, BridgeConfig::new(routes)))
        .await
        .unwrap()
}

async fn send<S: AsyncRead + AsyncWrite + Unpin>(ws: &mut WebSocketStream<S>, f: WireFrame, enc: Encoding) {
    let bytes = wirecodec::encode(&f, enc).unwrap().bytes;
    let msg = match enc {
        Encoding::Json => Message::Text(String::from_utf8(bytes).unwrap().into()),
        Encoding::Cbor => Message::Binary(bytes.into()),
    };
    ws.send(msg).await.unwrap();
}

async fn recv<S: AsyncRead + AsyncWrite + Unpin>(ws: &mut WebSocketStream<S>) -> Option<WireFrame> {
    loop {
        let next = tokio::time::timeout(Duration::from_secs(5), ws.next())
            .await
            .expect("timed out waiting for a frame");
        match next? {
            Ok(Message::Text(t)) => return Some(wirecodec::decode(t.as_bytes(), Encoding::Json).unwrap()),
            Ok(Message::Binary(b)) => return Some(wirecodec::decode(&b, Encoding::Cbor).unwrap()),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => continue,
        }
    }
}

type Ws = WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn join(addr: SocketAddr, route: &str, enc: Encoding, token: Option<&str>) -> Ws {
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/bridge/{route}"))
        .await
        .unwrap();
    send(&mut ws, WireFrame::hello(vec![1], vec![enc], token.map(str::to_owned)), Encoding::Json).await;
    let reply = recv(&mut ws).await.unwrap();
    assert_eq!(reply.op, Op::Hello);
    assert_eq!(reply.encoding_hint, Some(enc));
    ws
}

#[tokio::test]
async fn ducts_and_client_share_one_port() {
    let server = start(vec![Route::new("teamA").isolated(), Route::new("teamB").isolated()]).await;
    let addr = server.local_addr();
    let mut duct_a = join(addr, "teamA", Encoding::Cbor, None).await;
    let mut duct_b = join(addr, "teamB", Encoding::Json, None).await;
    let mut client = join(addr, "teamA", Encoding::Json, None).await;
    assert_eq!(server.listening_sockets(), 1);

    send(&mut client, WireFrame::subscribe("/scan", None, None), Encoding::Json).await;
    for duct in [&mut duct_a, &mut duct_b] {
        send(duct, WireFrame::advertise("/scan", "LaserScan", false), Encoding::Json).await;
    }
    // Let the subscription land before publishing.
    tokio::time::sleep(Duration::from_millis(50)).await;
    let payload = Value::map([("ranges", Value::Bytes(vec![1, 2, 3]))]);
    send(&mut duct_b, WireFrame::publish("/scan", Value::from("other group")), Encoding::Json).await;
    send(&mut duct_a, WireFrame::publish("/scan", payload.clone()), Encoding::Cbor).await;
    let got = recv(&mut client).await.unwrap();
    assert_eq!(got.op, Op::Publish);
    assert_eq!(got.msg, Some(payload));
    assert_eq!(server.bridge().lock().connections().len(), 3);

    drop(duct_b);
    client.close(None).await.unwrap();
    tokio::time::sleep(Duration::from_millis(100)).await;
    assert_eq!(server.bridge().lock().connections().len(), 1);
    server.shutdown().await;
}

#[tokio::test]
async fn unknown_path_refused_at_upgrade() {
    let server = start(vec![Route::new("teamA")]).await;
    let err = tokio_tungstenite::connect_async(format!("ws://{}/x", server.local_addr()))
        .await
        .unwrap_err();
    match err {
        tungstenite::Error::Http(resp) => assert_eq!(resp.status(), 404),
        other => panic!("unexpected {other:?}"),
    }
    assert!(server.bridge().lock().connections().is_empty());
    server.shutdown().await;
}

#[tokio::test]
async fn wrong_token_gets_status_then_close() {
    let server = start(vec![Route::new("teamA").with_token("pw")]).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}/bridge/teamA", server.local_addr()))
        .await
        .unwrap();
    send(&mut ws, WireFrame::hello(vec![1], vec![Encoding::Json], Some("bad".into())), Encoding::Json).await;
    let status = recv(&mut ws).await.unwrap();
    assert_eq!(status.op, Op::Status);
    assert_eq!(status.text.as_deref(), Some(AUTH_FAILED_TEXT));
    assert!(recv(&mut ws).await.is_none());

    let _ok = join(server.local_addr(), "teamA", Encoding::Cbor, Some("pw")).await;
    server.shutdown().await;
}

#[tokio::test]
async fn provider_disconnect_faults_inflight_call() {
    let server = start(vec![Route::new("teamA")]).await;
    let addr = server.local_addr();
    let mut duct = join(addr, "teamA", Encoding::Cbor, None).await;
    let mut client = join(addr, "teamA", Encoding::Json, None).await;
    send(&mut duct, WireFrame::advertise_service("/get_map", None), Encoding::Cbor).await;
    tokio::time::sleep(Duration::from_millis(50)).await;
    send(&mut client, WireFrame::call_service("7", "/get_map", Value::Null), Encoding::Json).await;
    let call = recv(&mut duct).await.unwrap();
    assert_eq!(call.op, Op::CallService);
    drop(duct);
    let reply = recv(&mut client).await.unwrap();
    assert_eq!(reply.id.as_deref(), Some("7"));
    assert_eq!(reply.result, Some(false));
    assert!(reply.text.unwrap().starts_with("provider fault"));
    server.shutdown().await;
}

#[tokio::test]
async fn metrics_file_written_on_shutdown() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.json");
    let mut config = ServerConfig::new("127.0.0.1:0".parse().unwrap(), BridgeConfig::new(vec![Route::new("a")]));
    config.metrics_out = Some(path.clone());
    let server = serve(config).await.unwrap();
    let mut ws = join(server.local_addr(), "a", Encoding::Json, None).await;
    send(&mut ws, WireFrame::advertise("/x", "T", false), Encoding::Json).await;
    send(&mut ws, WireFrame::publish("/x", Value::Int(1)), Encoding::Json).await;
    tokio::time::sleep(Duration::from_millis(50)).await;
    server.shutdown().await;
    let text = std::fs::read_to_string(&path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["routes"]["a"]["/x"]["published"], 1);
    assert_eq!(v["routes"]["a"]["/x"]["unrouted"], 1);
}

#[tokio::test]
async fn serves_tls_directly() {
    let cert = rcgen::generate_simple_self_signed(vec!["localhost".into()]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = TlsFiles {
        cert: dir.path().join("cert.pem"),
        key: dir.path().join("key.pem"),
    };
    std::fs::write(&files.cert, cert.cert.pem()).unwrap();
    std::fs::write(&files.key, cert.key_pair.serialize_pem()).unwrap();
    let mut config = ServerConfig::new("127.0.0.1:0".parse().unwrap(), BridgeConfig::new(vec![Route::new("a")]));
    config.tls = Some(files);
    let server = serve(config).await.unwrap();

    let mut roots = tokio_rustls::rustls::RootCertStore::empty();
    roots.add(cert.cert.der().clone()).unwrap();
    let client_cfg = tokio_rustls::rustls::ClientConfig::builder()
        .with_root_certificates(roots)
        .with_no_client_auth();
    let connector = tokio_rustls::TlsConnector::from(Arc::new(client_cfg));
    let tcp = tokio::net::TcpStream::connect(server.local_addr()).await.unwrap();
    let name = tokio_rustls::rustls::pki_types::ServerName::try_from("localhost").unwrap();
    let tls = connector.connect(name, tcp).await.unwrap();
    let (mut ws, _) = tokio_tungstenite::client_async("wss://localhost/bridge/a", tls)
        .await
        .unwrap();
    send(&mut ws, WireFrame::hello(vec![1], vec![Encoding::Cbor], None), Encoding::Json).await;
    let reply = recv(&mut ws).await.unwrap();
    assert_eq!(reply.encoding_hint, Some(Encoding::Cbor));
    server.shutdown().await;
}

#[tokio::test]
async fn bad_tls_files_fail_fast() {
    let mut config = ServerConfig::new("127.0.0.1:0".parse().unwrap(), BridgeConfig::new(vec![Route::new("a")]));
    config.tls = Some(TlsFiles {
        cert: "/nonexistent/cert.pem".into(),
        key: "/nonexistent/key.pem".into(),
    });
    assert!(matches!(serve(config).await, Err(bridge::BridgeError::Tls(_))));
}
