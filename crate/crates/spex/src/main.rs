use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spex::config::{parse_flags, ConfigError, ExperimentConfig};
use spex::eventlog::{self, LogError, LogHeader};
use spex::experiment::{self, RunError};
use spex::report::{self, ReportFormat};
use spex_core::executor::Flags;

#[derive(Parser)]
#[command(name = "spex", version, about = "Speculative tree-of-thought search on a simulated inference server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment: baseline and speculative variant on every seed.
    Run(RunArgs),
    /// Run the config's grid of batch sizes and flag sets.
    Sweep(RunArgs),
    /// Check an event log and re-execute the run it came from.
    Replay {
        /// JSON-lines event log written by `run --trace`.
        log: PathBuf,
    },
    /// Parse and validate a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: ReportFormat,
    /// Enabled techniques, e.g. `t1,t2,t3` or `none`.
    #[arg(long)]
    flags: Option<String>,
    /// Run the plain search only.
    #[arg(long)]
    baseline_only: bool,
    /// Write the event log of the first seed's run here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => c.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<LogError> for Failure {
    fn from(e: LogError) -> Self {
        match e {
            LogError::Run(r) => r.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<report::ReportError> for Failure {
    fn from(e: report::ReportError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(f) = &args.flags {
        cfg.spex.flags = parse_flags(f).map_err(Failure::Config)?;
    }
    if args.baseline_only {
        cfg.spex.flags = Flags::NONE;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_trace(cfg: &ExperimentConfig, path: &Path) -> Result<(), Failure> {
    let mut traced = cfg.clone();
    traced.spex.trace = true;
    let seed = traced.seed;
    let (_, run) = experiment::run_pair(&traced, seed)?;
    let header = LogHeader::new(cfg, seed, cfg.spex.flags);
    let file = File::create(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    eventlog::write_log(BufWriter::new(file), &header, &run.trace)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load(&args)?;
            let result = experiment::run_experiment(&cfg)?;
            if let Some(path) = &args.trace {
                write_trace(&cfg, path)?;
            }
            report::emit_report(&[result], args.format, args.out.as_deref())?;
        }
        Command::Sweep(args) => {
            let cfg = load(&args)?;
            let results = experiment::sweep(&cfg)?;
            if let Some(path) = &args.trace {
                write_trace(&cfg, path)?;
            }
            report::emit_report(&results, args.format, args.out.as_deref())?;
        }
        Command::Replay { log } => {
            let file = File::open(&log).map_err(|e| Failure::Runtime(format!("{}: {e}", log.display())))?;
            let summary = eventlog::replay(BufReader::new(file))?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("plain data"));
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!("{}: ok ({}, {} queries, {} repetitions)", config.display(), cfg.name, cfg.num_queries, cfg.repetitions);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
