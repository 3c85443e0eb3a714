use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use bridge::{serve, BridgeConfig, Route, ServerConfig, TlsFiles, DEFAULT_PORT};
use clap::Parser;

/// Websocket bridge: one port, path-routed graphs.
#[derive(Debug, Parser)]
#[command(name = "bridge", version)]
struct Args {
    /// Address to listen on.
    #[arg(long, default_value_t = SocketAddr::from(([0, 0, 0, 0], DEFAULT_PORT)))]
    listen: SocketAddr,
    /// Route served at /bridge/<name>; `name:isolated` gives it its own graph.
    #[arg(long = "route", required = true, value_name = "NAME[:isolated]")]
    routes: Vec<Route>,
    /// Hello token required on a route.
    #[arg(long = "token", value_name = "ROUTE=SECRET", value_parser = parse_token)]
    tokens: Vec<(String, String)>,
    #[arg(long, requires = "tls_key")]
    tls_cert: Option<PathBuf>,
    #[arg(long, requires = "tls_cert")]
    tls_key: Option<PathBuf>,
    /// File receiving relay counters as JSON.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    #[arg(long, default_value = "info")]
    log_level: String,
}

fn parse_token(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((route, secret)) if !route.is_empty() && !secret.is_empty() => {
            Ok((route.to_owned(), secret.to_owned()))
        }
        _ => Err(format!("expected ROUTE=SECRET, got {s:?}")),
    }
}

fn build_config(args: Args) -> Result<ServerConfig, String> {
    let mut tokens: BTreeMap<String, String> = args.tokens.into_iter().collect();
    let mut routes = args.routes;
    for route in &mut routes {
        route.token = tokens.remove(&route.name);
    }
    if let Some(orphan) = tokens.keys().next() {
        return Err(format!("--token names unknown route {orphan:?}"));
    }
    let mut config = ServerConfig::new(args.listen, BridgeConfig::new(routes));
    config.tls = args
        .tls_cert
        .zip(args.tls_key)
        .map(|(cert, key)| TlsFiles { cert, key });
    config.metrics_out = args.metrics_out;
    Ok(config)
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&args.log_level))
        .init();
    let config = match build_config(args) {
        Ok(c) => c,
        Err(err) => {
            eprintln!("bridge: {err}");
            return ExitCode::from(2);
        }
    };
    match serve(config).await {
        Ok(handle) => {
            handle.run_until_ctrl_c().await;
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("bridge: {err}");
            ExitCode::FAILURE
        }
    }
}
