use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use duct::{spawn, DuctConfig};
use msggraph::Graph;

/// Device-side duct: mirrors local topics and services to a bridge.
#[derive(Debug, Parser)]
#[command(name = "ductd", version)]
struct Args {
    /// TOML file with the duct configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "info")]
    log_level: String,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&args.log_level))
        .init();
    let config = match DuctConfig::load(&args.config) {
        Ok(c) => c,
        Err(err) => {
            eprintln!("ductd: {err}");
            return ExitCode::from(2);
        }
    };
    let handle = match spawn(config, Graph::new()) {
        Ok(h) => h,
        Err(err) => {
            eprintln!("ductd: {err}");
            return ExitCode::from(2);
        }
    };
    let stopped = async {
        while !handle.is_finished() {
            tokio::time::sleep(std::time::Duration::from_millis(200)).await;
        }
    };
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = stopped => {}
    }
    match handle.shutdown().await {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("ductd: {err}");
            ExitCode::FAILURE
        }
    }
}
