use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use homeguard::cli;
use homeguard::config::Config;

#[derive(Parser)]
#[command(name = "homeguard", version, about = "Smart-home access layer simulator")]
struct Args {
    /// Deployment/experiment configuration (JSON). Built-in testbed defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path for the command's main artifact.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Sample RSSI per technology and distance; write samples (CSV) or RMSE summary (JSON).
    SimulateRssi {
        /// Format of the file written to --out.
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Also write the RMSE summary JSON here.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Time admission against the private and proof-of-work ledgers.
    BenchChain {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        difficulty: Option<u32>,
    },
    /// Replay admission requests and write the resulting chain dump to --out.
    RunAccess {
        /// JSON array of {device_id, x, y}.
        #[arg(long)]
        requests: PathBuf,
    },
    /// Verify a chain dump; exit status 0 only if it is intact.
    VerifyChain {
        chain: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = seed {
        cfg.experiment.seed = seed;
    }
    Ok(cfg)
}

fn run(args: Args) -> Result<bool> {
    let cfg = load_config(args.config.as_deref(), args.seed)?;
    match args.command {
        Command::SimulateRssi { format, summary } => {
            let (csv, mut json) = match format {
                Format::Csv => (args.out.as_deref(), None),
                Format::Json => (None, args.out.as_deref()),
            };
            if summary.is_some() {
                json = summary.as_deref();
            }
            let reports = cli::cmd_simulate_rssi(&cfg, csv, json)?;
            if args.out.is_none() && summary.is_none() {
                println!("{}", serde_json::to_string_pretty(&reports)?);
            }
            Ok(true)
        }
        Command::BenchChain { trials, difficulty } => {
            let trials = trials.unwrap_or(cfg.experiment.trials);
            let difficulty = difficulty.unwrap_or(cfg.chain.difficulty);
            let run = cli::cmd_bench_chain(&cfg, trials, difficulty, args.out.as_deref())?;
            if args.out.is_none() {
                println!("{}", serde_json::to_string_pretty(&[&run.private, &run.public])?);
            }
            Ok(true)
        }
        Command::RunAccess { requests } => {
            let text =
                std::fs::read_to_string(&requests).with_context(|| format!("reading {}", requests.display()))?;
            let entries = cli::parse_requests(&text).with_context(|| requests.display().to_string())?;
            let mut stdout = std::io::stdout().lock();
            cli::cmd_run_access(&cfg, &entries, args.out.as_deref(), &mut stdout)?;
            Ok(true)
        }
        Command::VerifyChain { chain } => {
            let text = std::fs::read_to_string(&chain).with_context(|| format!("reading {}", chain.display()))?;
            let (len, v) = cli::cmd_verify_chain(&text, &cfg.chain).with_context(|| chain.display().to_string())?;
            match v.first_bad_index {
                None => {
                    println!("ok: {len} blocks verified");
                    Ok(true)
                }
                Some(bad) => {
                    eprintln!("chain invalid: first bad block at index {bad}");
                    Ok(false)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
