use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rapbench::{compare, RunReport, ScenarioSpec};
use wirecodec::Encoding;

#[derive(Parser)]
#[command(name = "rapbench", about = "Run relay scenarios and compare their reports")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario on the virtual clock.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario's encoding.
        #[arg(long)]
        encoding: Option<Encoding>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-metric deltas between two reports of the same scenario and seed.
    Compare { a: PathBuf, b: PathBuf },
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run {
            scenario,
            seed,
            encoding,
            out,
        } => {
            let mut spec = match ScenarioSpec::load(&scenario) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("rapbench: {e}");
                    return ExitCode::from(2);
                }
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(e) = encoding {
                spec.encoding = e;
            }
            let report = match rapbench::run(&spec) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("rapbench: {e}");
                    return ExitCode::from(2);
                }
            };
            if let Err(e) = report.write_dir(&out) {
                eprintln!("rapbench: {e}");
                return ExitCode::from(2);
            }
            print!("{report}");
            if report.violations().is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Cmd::Compare { a, b } => {
            let loaded = RunReport::load(&a).and_then(|ra| Ok((ra, RunReport::load(&b)?)));
            match loaded.and_then(|(ra, rb)| compare(&ra, &rb)) {
                Ok(c) => {
                    print!("{c}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("rapbench: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
