//! `qreal`: batch runner for the stock scenarios.
//!
//! Exit codes: 0 on success, 1 on configuration or input errors, 2 when an
//! invariant is violated (including an inconsistent record history).

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qreal::QrealError;

mod config;
mod report;
mod run;

use config::{ConfigError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "qreal", version, about = "Single-reality trajectory ensembles with oracle comparisons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an ensemble and write histograms, oracle comparisons and audit counts.
    Run(Flags),
    /// Run the invariant audits and report pass/fail per invariant.
    Audit(Flags),
}

#[derive(Args, Clone)]
struct Flags {
    /// TOML config file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stock scenario name.
    #[arg(long)]
    scenario: Option<String>,
    /// Scenario parameter as key=value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    trials: Option<u64>,
    /// Seed of the first trial; trial i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated oracles to compare against: ci, unitary.
    #[arg(long)]
    compare: Option<String>,
    /// json or csv.
    #[arg(long)]
    format: Option<String>,
    /// Output file; standard output if omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also run the invariant audits during `run`.
    #[arg(long)]
    audit: bool,
    /// Test hook: insert an unchecked level swap on SUBSYSTEM before STEP.
    #[arg(long = "inject-record-flip", value_name = "SUBSYSTEM@STEP", hide = true)]
    inject_record_flip: Option<String>,
}

impl From<Flags> for Overrides {
    fn from(f: Flags) -> Self {
        Overrides {
            config: f.config,
            scenario: f.scenario,
            set: f.set,
            trials: f.trials,
            seed: f.seed,
            compare: f.compare,
            format: f.format,
            output: f.output,
            audit: f.audit,
            fault: f.inject_record_flip,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] QrealError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(QrealError::HistoryInconsistent { .. }) => 2,
            _ => 1,
        }
    }
}

fn emit(text: &str, cfg: &RunConfig) -> Result<(), CliError> {
    match &cfg.output {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn execute(cmd: Command) -> Result<bool, CliError> {
    let (flags, audit_only) = match cmd {
        Command::Run(f) => (f, false),
        Command::Audit(f) => (f, true),
    };
    let cfg = RunConfig::resolve(&flags.into())?;
    let spec = run::build_spec(&cfg)?;
    if audit_only {
        let audit = run::audit(&spec, &cfg)?;
        emit(&report::render_audit(&cfg, &audit), &cfg)?;
        return Ok(audit.passed());
    }
    let outcome = run::run(&spec, &cfg)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    emit(&report::render_run(&cfg, &spec, &outcome), &cfg)?;
    Ok(outcome.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: invariant violation");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
