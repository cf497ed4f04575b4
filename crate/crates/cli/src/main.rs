//! `torusflow` command-line driver.
//!
//! Exit status: 0 on success, 2 on a configuration error, 3 when a solver
//! fails or an invariant check does not pass.

mod commands;
mod config;
mod error;
mod output;
mod plot;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{RawConfig, RunConfig};
use error::CliError;
use output::Output;

#[derive(Parser, Debug)]
#[command(
    name = "torusflow",
    version,
    about = "Logarithmic-diffusion gradient flow laboratory on a flat torus"
)]
struct Cli {
    /// INI run configuration; every key has a default.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Seed for initial noise and randomized diagnostics; overrides [run] seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Runs one configuration per value, concurrently, each in its own
    /// subdirectory. KEY is `lambda`, `seed` or `section.key`.
    #[arg(long, global = true, value_name = "KEY=v1,v2,...")]
    sweep: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Integrate the flow; writes trajectory and diagnostics CSV, checkpoint, summary and plots.
    Simulate,
    /// Newton solve for a stationary state, with optional continuation and multi-start probe.
    Stationary,
    /// Low spectrum of the linearized operator at the configured state.
    Spectrum,
    /// Critical-manifold chart and the chart inequality ratios.
    Manifold,
    /// Decay-rate and exponent fits along a trajectory.
    Rates,
    /// Built-in invariant suite; exits nonzero if any check fails.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Stationary => "stationary",
            Self::Spectrum => "spectrum",
            Self::Manifold => "manifold",
            Self::Rates => "rates",
            Self::Verify => "verify",
        }
    }
}

fn run_one(command: Command, cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let mut out = Output::create(dir, command.name(), cfg.hash())?;
    match command {
        Command::Simulate => commands::simulate(cfg, &mut out),
        Command::Stationary => commands::stationary(cfg, &mut out),
        Command::Spectrum => commands::spectrum(cfg, &mut out),
        Command::Manifold => commands::manifold(cfg, &mut out),
        Command::Rates => commands::rates(cfg, &mut out),
        Command::Verify => verify::verify(cfg.seed, serde_json::json!({ "seed": cfg.seed }), &mut out),
    }
}

/// Directory name for one sweep value.
fn sweep_dir(key: &str, value: &str) -> String {
    format!("{key}_{value}")
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn configs(cli: &Cli) -> Result<Vec<(RunConfig, PathBuf)>, CliError> {
    let mut raw = match &cli.config {
        Some(path) => RawConfig::load(path)?,
        None => RawConfig::default(),
    };
    if let Some(seed) = cli.seed {
        raw.set("seed", &seed.to_string())?;
    }
    let Some(sweep) = &cli.sweep else {
        return Ok(vec![(RunConfig::from_raw(&raw)?, cli.out.clone())]);
    };
    let (key, values) = sweep
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--sweep '{sweep}' must look like KEY=v1,v2,...")))?;
    let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(CliError::Config(format!("--sweep '{sweep}' lists no values")));
    }
    values
        .iter()
        .map(|v| {
            let mut r = raw.clone();
            r.set(key.trim(), v)?;
            let cfg = RunConfig::from_raw(&r).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("sweep value {key}={v}: {m}")),
                other => other,
            })?;
            Ok((cfg, cli.out.join(sweep_dir(key.trim(), v))))
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let runs = match configs(&cli) {
        Ok(runs) => runs,
        Err(e) => {
            eprintln!("torusflow: {e}");
            return error::exit_code(&Err(e));
        }
    };
    for (cfg, dir) in &runs {
        for w in cfg.warnings() {
            eprintln!("warning ({}): {w}", dir.display());
        }
    }
    let results: Vec<Result<(), CliError>> = if runs.len() == 1 {
        vec![run_one(cli.command, &runs[0].0, &runs[0].1)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = runs
                .iter()
                .map(|(cfg, dir)| s.spawn(move || run_one(cli.command, cfg, dir)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("run thread panicked"))
                .collect()
        })
    };
    let mut worst: Result<(), CliError> = Ok(());
    for ((_, dir), result) in runs.iter().zip(results) {
        if let Err(e) = result {
            eprintln!("torusflow {} ({}): {e}", cli.command.name(), dir.display());
            let replace = match &worst {
                Ok(()) => true,
                Err(w) => e.exit_code() > w.exit_code(),
            };
            if replace {
                worst = Err(e);
            }
        }
    }
    error::exit_code(&worst)
}
