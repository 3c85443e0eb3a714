use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use placement::{
    capacity_report, load_nodes, load_plan, load_session, load_sessions, plan, verify,
    PlacementError, Policy,
};

/// Plan, check and size session placements on GPU nodes.
#[derive(Debug, Parser)]
#[command(name = "placer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print a placement plan as JSON.
    Plan {
        #[arg(long)]
        nodes: PathBuf,
        #[arg(long)]
        sessions: PathBuf,
        /// ffd or best-fit.
        #[arg(long, default_value = "ffd")]
        policy: Policy,
    },
    /// Check a plan; exits 1 if it has violations.
    Verify {
        #[arg(long)]
        nodes: PathBuf,
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        plan: PathBuf,
    },
    /// Print how many copies of a session template fit at once.
    Capacity {
        #[arg(long)]
        nodes: PathBuf,
        #[arg(long)]
        template: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool, PlacementError> {
    match cli.command {
        Command::Plan {
            nodes,
            sessions,
            policy,
        } => {
            let p = plan(&load_nodes(&nodes)?, &load_sessions(&sessions)?, policy)?;
            println!("{}", serde_json::to_string_pretty(&p).expect("plan serializes"));
            Ok(true)
        }
        Command::Verify {
            nodes,
            sessions,
            plan,
        } => {
            let violations = verify(&load_plan(&plan)?, &load_nodes(&nodes)?, &load_sessions(&sessions)?);
            for v in &violations {
                println!("{v}");
            }
            if violations.is_empty() {
                println!("ok");
            }
            Ok(violations.is_empty())
        }
        Command::Capacity { nodes, template } => {
            println!("{}", capacity_report(&load_nodes(&nodes)?, &load_session(&template)?)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("placer: {err}");
            ExitCode::from(2)
        }
    }
}
