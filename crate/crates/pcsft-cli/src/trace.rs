//! `trace-check`: Monte Carlo validation of the covariance trace identity
//! E (A psi, psi) = tr(B_c A_c) on random operator/state pairs.

use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use pcsft_core::dequantization::{trace_formula_check, TraceCheck};
use pcsft_core::format_float;
use pcsft_core::phase_space::SymplecticOperator;
use pcsft_core::states::{substream_seed, DensityOperator, GaussianState};

use crate::config::{usage, AppError, Globals, Precision, RunSettings};

/// Below this sample count, 4-sigma excursions are reported but do not fail
/// the run: the normal-tail budget is only trustworthy at scale.
pub const HARD_FAIL_COUNT: usize = 1_000;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    precision: Precision,
    #[serde(default = "default_n")]
    n: usize,
    #[serde(default = "default_trials")]
    trials: usize,
    #[serde(default = "default_count")]
    count: usize,
}

fn default_n() -> usize {
    3
}

fn default_trials() -> usize {
    20
}

fn default_count() -> usize {
    100_000
}

impl TraceConfig {
    pub fn globals(&self) -> Globals {
        Globals {
            seed: self.seed,
            precision: self.precision,
            output_dir: self
                .output_dir
                .clone()
                .unwrap_or_else(|| Globals::default().output_dir),
        }
    }
}

pub fn run(config: TraceConfig, settings: &RunSettings) -> Result<(), AppError> {
    if config.n == 0 || config.trials == 0 {
        return Err(AppError::Usage(
            "n and trials must both be positive".into(),
        ));
    }
    // draw every trial's inputs sequentially so the table is identical for
    // any thread count; the Monte Carlo averages then run in parallel on
    // per-trial substreams
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut cases = Vec::with_capacity(config.trials);
    for _ in 0..config.trials {
        let a = SymplecticOperator::random(config.n, &mut rng);
        let d = DensityOperator::random(config.n, &mut rng);
        let alpha = 10f64.powf(rng.random_range(-1.0..1.0));
        let state = GaussianState::from_density_operator(&d, alpha).map_err(usage)?;
        cases.push((a, state));
    }
    let checks: Vec<Result<TraceCheck, _>> = cases
        .par_iter()
        .enumerate()
        .map(|(i, (a, state))| {
            trace_formula_check(a, state, config.count, substream_seed(settings.seed, i as u64))
        })
        .collect();

    settings.prepare_out_dir()?;
    settings.write_manifest()?;
    let mut csv = String::from("trial,mc,analytic,residual,std_error,sigmas,pass\n");
    let mut failures = 0usize;
    for (i, check) in checks.iter().enumerate() {
        let check = check.as_ref().map_err(|e| usage(e.to_string()))?;
        if !check.pass {
            failures += 1;
        }
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            i,
            format_float(check.mc.value),
            format_float(check.analytic),
            format_float(check.residual),
            format_float(check.mc.std_error),
            format_float(check.sigmas),
            check.pass,
        ));
    }
    settings.write_file("residuals.csv", csv.as_bytes())?;
    println!(
        "{} trials at count {}: {} within 4 sigma",
        config.trials,
        config.count,
        config.trials - failures
    );
    if failures == 0 {
        Ok(())
    } else if config.count < HARD_FAIL_COUNT {
        println!("{failures} excursion(s) tolerated below count {HARD_FAIL_COUNT}");
        Ok(())
    } else {
        Err(AppError::Numerical(format!(
            "{failures} trial(s) beyond 4 standard errors"
        )))
    }
}
