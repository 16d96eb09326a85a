//! Simulated RPKI validator with AFL-style coverage and planted bugs.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use batchfuzz::coverage_attribution::{CounterRegion, AFL_SHM_ENV};
use batchfuzz::sim_target::{run_validator, RunOptions, SimConfig};
use clap::Parser;

#[derive(Parser)]
#[command(about = "Validate an RPKI repository and write the accepted VRPs as CSV")]
struct Args {
    /// Repository directory holding rsync/ and optionally rrdp/.
    #[arg(long)]
    repo: PathBuf,
    #[arg(long)]
    tal: PathBuf,
    /// CSV output; not written if the run crashes.
    #[arg(long)]
    output: PathBuf,
    /// JSON simulation config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Writes exact counter values and first-touching objects as JSON.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Environment variable naming the coverage region.
    #[arg(long, default_value = AFL_SHM_ENV)]
    shm_env: String,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let config = match &args.config {
        None => SimConfig::default(),
        Some(p) => match std::fs::read_to_string(p).map_err(|e| e.to_string()).and_then(|t| {
            SimConfig::from_json(&t).map_err(|e| e.to_string())
        }) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: config {}: {e}", p.display());
                return ExitCode::from(2);
            }
        },
    };
    let region = match std::env::var_os(&args.shm_env) {
        None => None,
        Some(_) => match CounterRegion::from_env(&args.shm_env, config.map_size) {
            Ok(r) => Some(Arc::new(r)),
            Err(e) => {
                eprintln!("error: coverage region: {e}");
                return ExitCode::from(2);
            }
        },
    };
    let opts = RunOptions {
        repo: args.repo,
        tal: args.tal,
        output: Some(args.output),
        ground_truth: args.ground_truth,
        config,
        region,
    };
    match run_validator(&opts) {
        Ok(out) => {
            for line in &out.log {
                eprintln!("{line}");
            }
            if out.crashed.is_some() {
                std::process::abort();
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
