//! Dequantization: the correspondence between Gaussian field ensembles and
//! density operators, and between classical variables and quantum observables.
//!
//! The central identities, with B the real covariance, B_c = 2B its complex
//! form and alpha = tr B:
//!
//! * trace formula: E (A psi, psi) = tr(B_c A_c) for J-commuting A;
//! * state map: rho = B_c / alpha, a density operator;
//! * variable map: f -> f''(0) read as a Hermitian matrix, giving the
//!   expansion E f(psi) = (alpha/2) tr(rho f''(0)) + O(alpha^2).
//!
//! The asymptotic verification fits the remainder of that expansion against
//! alpha on a log-log grid; the slope should approach 2.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};
use thiserror::Error;

use crate::format_float;
use crate::phase_space::{ComplexOperator, StructureError, SymplecticOperator};
use crate::states::{sample_batch, substream_seed, DensityOperator, GaussianState, StateError, SAMPLE_BATCH};
use crate::variables::{ClassicalVariable, Term, VariableError};

/// Monte Carlo agreement threshold, in standard errors.
pub const SIGMA_BAND: f64 = 4.0;

/// Points whose remainder is below this multiple of its standard error are
/// excluded from the slope fit.
pub const NOISE_EXCLUSION: f64 = 10.0;

/// Relative floor below which a remainder is considered exactly zero.
pub const EXACTNESS_FLOOR: f64 = 1e-12;

const ALPHA_SEED_SALT: u64 = 0xA1FA;

#[derive(Debug, Error)]
pub enum DequantizationError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Variable(#[from] VariableError),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error("sample {index} evaluated to a non-finite value")]
    NonFiniteSample { index: usize },
    #[error("sample count must be at least 2, got {0}")]
    BadCount(usize),
    #[error("trace has imaginary residual {0:.3e}, inputs are not Hermitian enough")]
    ImaginaryResidual(f64),
    #[error("alphas must be at least 2 positive values, strictly decreasing: {0}")]
    BadAlphas(String),
    #[error("closed-form expectations need polynomial terms only")]
    NotPolynomial,
    #[error("variable is on n={var_n} but state is on n={state_n}")]
    SpaceMismatch { var_n: usize, state_n: usize },
}

/// A Monte Carlo (or exact) estimate of a classical average.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AverageEstimate {
    pub value: f64,
    /// Standard error of the mean; zero for closed-form values.
    pub std_error: f64,
    /// Number of samples; zero for closed-form values.
    pub count: usize,
    pub seed: u64,
}

impl AverageEstimate {
    pub fn exact(value: f64, seed: u64) -> Self {
        Self {
            value,
            std_error: 0.0,
            count: 0,
            seed,
        }
    }
}

/// How classical averages are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AverageMethod {
    /// Closed form for polynomial variables, Monte Carlo otherwise.
    Auto,
    Isserlis,
    MonteCarlo,
}

fn is_polynomial(f: &ClassicalVariable) -> bool {
    f.terms().iter().all(|t| !matches!(t, Term::Smooth(_)))
}

/// Monte Carlo average of f over the Gaussian ensemble. Batches run in
/// parallel; each batch k draws from the substream of (seed, k) and the
/// batch results are reduced in index order, so the estimate is identical
/// for any thread count.
pub fn classical_average(
    f: &ClassicalVariable,
    state: &GaussianState,
    count: usize,
    seed: u64,
) -> Result<AverageEstimate, DequantizationError> {
    if count < 2 {
        return Err(DequantizationError::BadCount(count));
    }
    if f.n() != state.space().n() {
        return Err(DequantizationError::SpaceMismatch {
            var_n: f.n(),
            state_n: state.space().n(),
        });
    }
    let l = state.sampling_factor();
    let batches = count.div_ceil(SAMPLE_BATCH);
    struct BatchStat {
        sum: f64,
        sum_sq: f64,
    }
    let stats: Vec<Result<BatchStat, DequantizationError>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let len = SAMPLE_BATCH.min(count - b * SAMPLE_BATCH);
            let mut stat = BatchStat {
                sum: 0.0,
                sum_sq: 0.0,
            };
            let mut failed: Option<usize> = None;
            let mut offset = 0usize;
            sample_batch(&l, seed, b as u64, len, |v| {
                if failed.is_none() {
                    match f.evaluate(v) {
                        Ok(y) => {
                            stat.sum += y;
                            stat.sum_sq += y * y;
                        }
                        Err(_) => failed = Some(b * SAMPLE_BATCH + offset),
                    }
                }
                offset += 1;
            });
            match failed {
                Some(index) => Err(DequantizationError::NonFiniteSample { index }),
                None => Ok(stat),
            }
        })
        .collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for stat in stats {
        let stat = stat?;
        sum += stat.sum;
        sum_sq += stat.sum_sq;
    }
    let nf = count as f64;
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
    Ok(AverageEstimate {
        value: mean,
        std_error: (var / nf).sqrt(),
        count,
        seed,
    })
}

/// tr(D A), which is real for Hermitian inputs; the imaginary residual is
/// required to stay below 1e-10 relative.
pub fn quantum_average(
    a: &ComplexOperator,
    d: &DensityOperator,
) -> Result<f64, DequantizationError> {
    if a.n() != d.n() {
        return Err(DequantizationError::SpaceMismatch {
            var_n: a.n(),
            state_n: d.n(),
        });
    }
    let n = a.n();
    let mut z = num_complex::Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            z += d.matrix()[(i, j)] * a.matrix()[(j, i)];
        }
    }
    if z.im.abs() > 1e-10 * (1.0 + z.re.abs()) {
        return Err(DequantizationError::ImaginaryResidual(z.im));
    }
    Ok(z.re)
}

/// Density operator of a Gaussian state: the complex covariance of the
/// dispersion-normalized ensemble, rho = B_c / alpha. Unit trace is automatic
/// because tr_c B_c = tr B.
pub fn dequantize_state(state: &GaussianState) -> Result<DensityOperator, DequantizationError> {
    let scaled = state.scale_state()?;
    Ok(DensityOperator::new(
        scaled.complex_covariance().matrix().clone(),
    )?)
}

/// Quantum observable of a classical variable: the complex form of the full
/// Hessian f''(0), so f(psi) = (1/2)(A psi, psi) returns A itself.
pub fn dequantize_variable(
    f: &ClassicalVariable,
) -> Result<ComplexOperator, DequantizationError> {
    Ok(f.hessian_at_zero()?.operator.to_complex_operator())
}

/// Outcome of one trace-formula comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceCheck {
    pub mc: AverageEstimate,
    pub analytic: f64,
    pub residual: f64,
    /// Residual over the Monte Carlo standard error.
    pub sigmas: f64,
    pub pass: bool,
}

/// Monte Carlo check of E (A psi, psi) = tr(B_c A_c).
pub fn trace_formula_check(
    a: &SymplecticOperator,
    state: &GaussianState,
    count: usize,
    seed: u64,
) -> Result<TraceCheck, DequantizationError> {
    let f = ClassicalVariable::quadratic(1.0, a.clone());
    let mc = classical_average(&f, state, count, seed)?;
    let bc = state.complex_covariance();
    let ac = a.to_complex_operator();
    let n = a.n();
    let mut z = num_complex::Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            z += bc.matrix()[(i, j)] * ac.matrix()[(j, i)];
        }
    }
    if z.im.abs() > 1e-10 * (1.0 + z.re.abs()) {
        return Err(DequantizationError::ImaginaryResidual(z.im));
    }
    let analytic = z.re;
    let residual = (mc.value - analytic).abs();
    let sigmas = if mc.std_error > 0.0 {
        residual / mc.std_error
    } else if residual == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(TraceCheck {
        mc,
        analytic,
        residual,
        sigmas,
        pass: sigmas <= SIGMA_BAND,
    })
}

/// Exact Gaussian expectation of a polynomial variable over the state.
///
/// Quadratic terms use E (A psi, psi) = tr(A B); factored quartics use the
/// fourth-moment identity E[(G1 psi, psi)(G2 psi, psi)] =
/// tr(G1 B) tr(G2 B) + 2 tr(G1 B G2 B); kernel quartics apply the same
/// identity pointwise.
pub fn isserlis_expectation(
    f: &ClassicalVariable,
    state: &GaussianState,
) -> Result<f64, DequantizationError> {
    if f.n() != state.space().n() {
        return Err(DequantizationError::SpaceMismatch {
            var_n: f.n(),
            state_n: state.space().n(),
        });
    }
    let b = state.covariance();
    let n = f.n();
    let mut total = 0.0;
    for term in f.terms() {
        total += match term {
            Term::Quadratic { coeff, op } => {
                // tr(A B) through the blocks: 2 (tr(R R_B) - tr(T T_B))
                let rb = b.view((0, 0), (n, n));
                let tb = b.view((0, n), (n, n));
                let tr_r = op.r().component_mul(&rb.transpose()).sum();
                let tr_t = op.t().component_mul(&tb.transpose()).sum();
                coeff * 2.0 * (tr_r - tr_t)
            }
            Term::FactoredQuartic { coeff, g1, g2 } => {
                let m1 = g1.assemble() * b;
                let m2 = g2.assemble() * b;
                coeff * (m1.trace() * m2.trace() + 2.0 * (&m1 * &m2).trace())
            }
            Term::KernelQuartic { coeff, weight } => {
                let mut sum = 0.0;
                for x in 0..n {
                    let sq = b[(x, x)];
                    let sp = b[(n + x, n + x)];
                    let c = b[(x, n + x)];
                    sum += 3.0 * sq * sq + 3.0 * sp * sp + 2.0 * sq * sp + 4.0 * c * c;
                }
                coeff * weight * sum
            }
            Term::Smooth(_) => return Err(DequantizationError::NotPolynomial),
        };
    }
    Ok(total)
}

/// What the asymptotic fit concluded.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum FitStatus {
    /// Least-squares slope of log |remainder| against log alpha.
    Fitted { slope: f64, intercept: f64 },
    /// All remainders sit at the round-off floor: the expansion is exact.
    Exact,
    /// Too few remainders rise above their noise floor to fit a slope.
    NoiseDominated,
}

/// Asymptotic expansion report: classical averages against the first-order
/// quantum term over a decreasing alpha grid, and the fitted remainder order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub alphas: Vec<f64>,
    pub classical: Vec<AverageEstimate>,
    pub quantum_term: Vec<f64>,
    pub remainder: Vec<f64>,
    /// Whether each point entered the slope fit.
    pub used_in_fit: Vec<bool>,
    pub fit: FitStatus,
    pub method: AverageMethod,
}

impl AsymptoticsReport {
    /// Columns: alpha, classical, classical_stderr, quantum_term, remainder.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "alpha,classical,classical_stderr,quantum_term,remainder")?;
        for i in 0..self.alphas.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                format_float(self.alphas[i]),
                format_float(self.classical[i].value),
                format_float(self.classical[i].std_error),
                format_float(self.quantum_term[i]),
                format_float(self.remainder[i]),
            )?;
        }
        Ok(())
    }
}

fn validate_alphas(alphas: &[f64]) -> Result<(), DequantizationError> {
    if alphas.len() < 2 {
        return Err(DequantizationError::BadAlphas(format!(
            "got {} point(s)",
            alphas.len()
        )));
    }
    for w in alphas.windows(2) {
        if !(w[0] > w[1]) {
            return Err(DequantizationError::BadAlphas(format!(
                "{} does not decrease to {}",
                w[0], w[1]
            )));
        }
    }
    if !alphas.iter().all(|&a| a > 0.0 && a.is_finite()) {
        return Err(DequantizationError::BadAlphas(
            "all alphas must be positive and finite".into(),
        ));
    }
    Ok(())
}

/// Compare classical averages of f under ensembles of shrinking dispersion
/// against the first-order term (alpha/2) tr(D f''(0)), and fit the order of
/// the remainder in alpha.
pub fn verify_asymptotics(
    f: &ClassicalVariable,
    d: &DensityOperator,
    alphas: &[f64],
    count: usize,
    seed: u64,
    method: AverageMethod,
) -> Result<AsymptoticsReport, DequantizationError> {
    validate_alphas(alphas)?;
    let method = match method {
        AverageMethod::Auto => {
            if is_polynomial(f) {
                AverageMethod::Isserlis
            } else {
                AverageMethod::MonteCarlo
            }
        }
        AverageMethod::Isserlis if !is_polynomial(f) => {
            return Err(DequantizationError::NotPolynomial)
        }
        m => m,
    };
    let observable = dequantize_variable(f)?;
    let q_avg = quantum_average(&observable, d)?;
    let mut classical = Vec::with_capacity(alphas.len());
    let mut quantum_term = Vec::with_capacity(alphas.len());
    let mut remainder = Vec::with_capacity(alphas.len());
    for (i, &alpha) in alphas.iter().enumerate() {
        let state = GaussianState::from_density_operator(d, alpha)?;
        let est = match method {
            AverageMethod::Isserlis => {
                AverageEstimate::exact(isserlis_expectation(f, &state)?, seed)
            }
            AverageMethod::MonteCarlo => {
                let alpha_seed = substream_seed(seed ^ ALPHA_SEED_SALT, i as u64);
                classical_average(f, &state, count, alpha_seed)?
            }
            AverageMethod::Auto => unreachable!(),
        };
        let qt = alpha / 2.0 * q_avg;
        let mut rem = est.value - qt;
        // on the closed-form path, a difference at the round-off floor is
        // evaluation noise of two algebraically identical traces, not an
        // asymptotic remainder: report it as the zero it stands for
        if method == AverageMethod::Isserlis
            && rem.abs() <= EXACTNESS_FLOOR * (1.0 + est.value.abs())
        {
            rem = 0.0;
        }
        remainder.push(rem);
        quantum_term.push(qt);
        classical.push(est);
    }
    // a point participates in the fit only when its remainder clearly rises
    // above both its statistical noise and the round-off floor
    let used_in_fit: Vec<bool> = (0..alphas.len())
        .map(|i| {
            let noise = NOISE_EXCLUSION * classical[i].std_error;
            let floor = EXACTNESS_FLOOR * (1.0 + classical[i].value.abs());
            remainder[i].abs() > noise.max(floor)
        })
        .collect();
    let used = used_in_fit.iter().filter(|&&u| u).count();
    let fit = if used >= 2 {
        let xs: Vec<f64> = alphas
            .iter()
            .zip(&used_in_fit)
            .filter(|(_, &u)| u)
            .map(|(&a, _)| a.ln())
            .collect();
        let ys: Vec<f64> = remainder
            .iter()
            .zip(&used_in_fit)
            .filter(|(_, &u)| u)
            .map(|(&r, _)| r.abs().ln())
            .collect();
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
        let slope = sxy / sxx;
        FitStatus::Fitted {
            slope,
            intercept: ym - slope * xm,
        }
    } else if method == AverageMethod::Isserlis
        && remainder
            .iter()
            .zip(&classical)
            .all(|(r, c)| r.abs() <= EXACTNESS_FLOOR * (1.0 + c.value.abs()))
    {
        FitStatus::Exact
    } else {
        FitStatus::NoiseDominated
    };
    Ok(AsymptoticsReport {
        alphas: alphas.to_vec(),
        classical,
        quantum_term,
        remainder,
        used_in_fit,
        fit,
        method,
    })
}
