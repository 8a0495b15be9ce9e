//! Batch experiment runner: dequantization sweeps, dynamics runs,
//! trace-formula checks, and the dispersion bound conversion.
//!
//! Exit codes: 0 pass, 2 usage or schema error, 3 statistically
//! inconclusive, 4 numerical failure.

mod config;
mod dequantize;
mod evolve;
mod trace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pcsft_core::format_float;
use pcsft_core::units::alpha_bound_from_b;

use config::{usage, AppError, LoadedConfig, RunSettings};

#[derive(Parser)]
#[command(name = "pcsft", version, about = "Prequantum field laboratory runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment description.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep classical vs quantum averages over a dispersion grid and fit
    /// the remainder order.
    Dequantize(RunArgs),
    /// Integrate one Hamilton-Schrodinger trajectory and check drift.
    Evolve(RunArgs),
    /// Monte Carlo check of the covariance trace identity on random pairs.
    TraceCheck(RunArgs),
    /// Convert the experimental nonlinearity bound (eV) into the
    /// dispersion bound (eV).
    AlphaBound {
        #[arg(long = "b-ev", allow_negative_numbers = true)]
        b_ev: f64,
    },
}

/// PCSFT_THREADS caps the worker pool; unset or empty leaves rayon's
/// default. Applies identically to all commands, and results do not depend
/// on it: parallel reductions are ordered.
fn init_threads() -> Result<(), AppError> {
    let Ok(raw) = std::env::var("PCSFT_THREADS") else {
        return Ok(());
    };
    if raw.trim().is_empty() {
        return Ok(());
    }
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| AppError::Usage(format!("PCSFT_THREADS must be a positive integer, got \"{raw}\"")))?;
    if threads == 0 {
        return Err(AppError::Usage(
            "PCSFT_THREADS must be a positive integer, got \"0\"".into(),
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| AppError::Usage(format!("cannot size the thread pool: {e}")))
}

fn dispatch(command: Command) -> Result<(), AppError> {
    match command {
        Command::Dequantize(args) => {
            let loaded = LoadedConfig::read(&args.config)?;
            let cfg: dequantize::DequantizeConfig = loaded.parse()?;
            let settings = RunSettings::new(&cfg.globals(), &loaded, args.seed, args.out)?;
            dequantize::run(cfg, &settings)
        }
        Command::Evolve(args) => {
            let loaded = LoadedConfig::read(&args.config)?;
            let cfg: evolve::EvolveConfig = loaded.parse()?;
            let settings = RunSettings::new(&cfg.globals(), &loaded, args.seed, args.out)?;
            evolve::run(cfg, &settings)
        }
        Command::TraceCheck(args) => {
            let loaded = LoadedConfig::read(&args.config)?;
            let cfg: trace::TraceConfig = loaded.parse()?;
            let settings = RunSettings::new(&cfg.globals(), &loaded, args.seed, args.out)?;
            trace::run(cfg, &settings)
        }
        Command::AlphaBound { b_ev } => {
            let bound = alpha_bound_from_b(b_ev).map_err(usage)?;
            println!("alpha_upper_bound_eV={}", format_float(bound.upper_bound_ev));
            eprintln!("note: {}", bound.note);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = init_threads().and_then(|()| dispatch(cli.command));
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
