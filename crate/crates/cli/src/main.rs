//! Command-line experiment harness: TOML config in, CSV tables out.

mod commands;
mod config;
mod error;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::commands::Outcome;
use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Version tag of the CSV layout, written to `report.csv`.
const FORMAT_VERSION: &str = "1";

#[derive(Parser)]
#[command(name = "cbsde", version, about = "Penalized BSDE experiments for singular/regular control")]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `mc.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Penalized values y0(j) along the schedule.
    Solve,
    /// Strong and weak evaluation of the extracted feedback policy.
    Policy,
    /// Terminal-jump diagnostic with and without the face-lift.
    Facelift,
    /// BSDE limit against the finite-difference and brute-force oracles.
    OracleCompare,
    /// Randomized checks of the model assumptions.
    Validate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Policy => "policy",
            Command::Facelift => "facelift",
            Command::OracleCompare => "oracle-compare",
            Command::Validate => "validate",
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.mc.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.output.dir = dir.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn inputs_hash(command: Command, cfg: &ExperimentConfig) -> String {
    let mut h = Sha256::new();
    h.update(command.name().as_bytes());
    h.update(b"\n");
    // output location does not change any number
    let mut canonical = cfg.clone();
    canonical.output.dir = String::new();
    h.update(canonical.to_toml().as_bytes());
    hex::encode(h.finalize())
}

fn append_report(dir: &Path, fields: &[String]) -> Result<(), CliError> {
    let path = dir.join("report.csv");
    let fresh = !path.exists();
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    let io = |e: csv::Error| CliError::Io(std::io::Error::other(e));
    if fresh {
        w.write_record(["format_version", "command", "inputs_sha256", "status", "outputs", "wall_seconds"])
            .map_err(io)?;
    }
    w.write_record(fields).map_err(io)?;
    w.flush()?;
    Ok(())
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let cfg = load(cli)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let out = PathBuf::from(&cfg.output.dir);
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.resolved.toml"), cfg.to_toml())?;
    let start = Instant::now();
    let result = match cli.command {
        Command::Solve => commands::solve(&cfg, &out),
        Command::Policy => commands::policy(&cfg, &out),
        Command::Facelift => commands::facelift(&cfg, &out),
        Command::OracleCompare => commands::oracle_compare(&cfg, &out),
        Command::Validate => commands::validate(&cfg, &out),
    };
    let status = match &result {
        Ok(o) if o.failed_checks => "checks_failed".to_string(),
        Ok(_) => "ok".to_string(),
        Err(e) => format!("exit_{}", e.exit_code()),
    };
    let outputs = result
        .as_ref()
        .map(|o| {
            o.files
                .iter()
                .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
                .collect::<Vec<_>>()
                .join(";")
        })
        .unwrap_or_default();
    append_report(
        &out,
        &[
            FORMAT_VERSION.into(),
            cli.command.name().into(),
            inputs_hash(cli.command, &cfg),
            status,
            outputs,
            format!("{:.3}", start.elapsed().as_secs_f64()),
        ],
    )?;
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}", outcome.summary);
            if outcome.failed_checks {
                eprintln!("error: model checks failed, see validation.csv");
                ExitCode::from(4)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
