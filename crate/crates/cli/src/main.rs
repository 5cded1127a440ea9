//! `wdmcqf`: optimize, sweep, simulate, plan-fiber and table1 runs from a
//! single configuration file.

mod commands;
mod config;
mod output;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::{Diagnostic, RunConfig, Source};
use output::{Format, Table};

#[derive(Debug, Parser)]
#[command(name = "wdmcqf", version, about = "WDM coherent quantum fingerprinting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file (TOML, or JSON by extension or leading `{`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Monte Carlo seed; overrides `montecarlo.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for sweeps and simulations.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Minimal photon number for one (n, k, distance) point.
    Optimize,
    /// Communication over an (n, k, distance) grid.
    Sweep,
    /// Seeded Monte Carlo of the detector counts.
    Simulate,
    /// Validate a fiber loop and channel timing plan.
    PlanFiber,
    /// Recompute the published experimental table.
    Table1,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(Diagnostic),
    #[error("{0}")]
    Guard(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Guard(_) => 3,
        }
    }
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::Config(Diagnostic {
        file: Some(path.to_path_buf()),
        line: None,
        key: String::new(),
        message: e.to_string(),
    })
}

fn write_table(table: &Table, format: Format, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(path) => {
            let file = File::create(path).map_err(|e| io_error(path, e))?;
            let mut w = BufWriter::new(file);
            table
                .write(format, &mut w)
                .and_then(|_| w.flush())
                .map_err(|e| io_error(path, e))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            match table.write(format, &mut lock) {
                // a closed reader (`| head`) is not a failure of the run
                Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
                other => other.map_err(|e| io_error(Path::new("<stdout>"), e)),
            }
        }
    }
}

fn run(cli: Cli) -> Result<Option<String>, CliError> {
    let (mut cfg, source) = match &cli.config {
        Some(path) => config::load(path).map_err(CliError::Config)?,
        None => (RunConfig::default(), Source::default()),
    };
    if let Some(seed) = cli.seed {
        cfg.montecarlo.seed = seed;
    }
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Config(source.diagnostic("--threads", "must be >= 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(source.diagnostic("--threads", e.to_string())))?;
    }
    let format = cli.format.or(cfg.output.format).unwrap_or_default();
    let out = cli.out.clone().or(cfg.output.path.clone());

    let report = match cli.command {
        Command::Optimize => commands::optimize(&cfg, &source)?,
        Command::Sweep => commands::sweep_cmd(&cfg, &source)?,
        Command::Simulate => commands::simulate(&cfg, &source)?,
        Command::PlanFiber => commands::plan_fiber(&cfg, &source)?,
        Command::Table1 => commands::table1_cmd(&cfg, &source)?,
    };
    write_table(&report.table, format, out.as_deref())?;
    if let Some((path, table)) = &report.trials {
        write_table(table, Format::Csv, Some(path))?;
    }
    Ok(report.failure)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(reason)) => {
            eprintln!("wdmcqf: {reason}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
