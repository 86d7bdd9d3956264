//! `cmvspec`: command-line driver for the cmvspec-core experiments.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Report;
use crate::config::{Prepared, RunConfig};
use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "cmvspec",
    version,
    about = "Numerical experiments on quasi-periodic CMV matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-scale Lyapunov exponents over a θ grid.
    Lyapunov(RunArgs),
    /// Interval-coverage scan of an arc of the circle.
    SpectrumScan(RunArgs),
    /// Large-deviation scan of log‖M_n‖ or log|φ|.
    Ldt(RunArgs),
    /// Decay profiles of central eigenvectors.
    Localize(RunArgs),
    /// Inductive multiscale run up to the schedule's s_max.
    Multiscale(RunArgs),
    /// Residuals of the operator identities on random corpora.
    IdentitySuite(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config JSON, or the manifest.json of an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed (overrides the config's `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "CMVSPEC_WORKERS")]
    workers: Option<usize>,
}

type Runner = fn(&RunConfig, &Prepared) -> Result<Report, CliError>;

impl Command {
    fn parts(&self) -> (&'static str, &RunArgs, Runner) {
        match self {
            Self::Lyapunov(a) => ("lyapunov", a, commands::lyapunov),
            Self::SpectrumScan(a) => ("spectrum-scan", a, commands::spectrum_scan),
            Self::Ldt(a) => ("ldt", a, commands::ldt),
            Self::Localize(a) => ("localize", a, commands::localize),
            Self::Multiscale(a) => ("multiscale", a, commands::multiscale),
            Self::IdentitySuite(a) => ("identity-suite", a, commands::identity_suite),
        }
    }
}

fn output_dir(args: &RunArgs, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("cmvspec-out"));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    dir.canonicalize()
        .map_err(|e| CliError::Config(format!("cannot resolve {}: {e}", dir.display())))
}

fn run(name: &str, args: &RunArgs, runner: Runner) -> Result<(PathBuf, Report), CliError> {
    let mut cfg = config::load(&args.config, name)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let dir = output_dir(args, &cfg)?;
    let prepared = config::prepare(&cfg)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let report = pool.install(|| runner(&cfg, &prepared))?;
    let hash = manifest::write_all(&dir, name, &cfg, &report.files)?;
    println!(
        "{name}: wrote {} file(s) and manifest.json to {}",
        report.files.len(),
        display(&dir)
    );
    println!("content hash {hash}");
    Ok((dir, report))
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args, runner) = cli.command.parts();
    match run(name, args, runner) {
        Ok((_, report)) => {
            for line in &report.lines {
                println!("{line}");
            }
            match report.failure {
                None => ExitCode::SUCCESS,
                Some(e) => {
                    eprintln!("{e}");
                    ExitCode::from(e.exit_code())
                }
            }
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
