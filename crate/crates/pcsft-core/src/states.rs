//! Gaussian ensembles of classical fields and density operators.
//!
//! A state of the classical field theory is a Gaussian measure on phase space
//! with zero mean and a covariance operator B that commutes with the symplectic
//! structure J. Its trace alpha = tr B is the dispersion of the ensemble; the
//! quantum-like regime is alpha -> 0. On the complex side the covariance of the
//! field Psi = q + i p is B_c = 2B under the block correspondence of
//! [`crate::phase_space`].

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phase_space::{
    ComplexOperator, PhaseSpace, PhaseVector, Representation, StructureError, STRUCTURE_TOL,
};

/// Samples are drawn in fixed-size batches; batch k uses the RNG substream
/// derived from (seed, k), so results do not depend on how batches are scheduled.
pub const SAMPLE_BATCH: usize = 8192;

/// Relative eigenvalue floor: eigenvalues of B above -PSD_TOL * norm are
/// treated as zero, anything lower is rejected.
pub const PSD_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("covariance must be a 2n x 2n symmetric matrix (max deviation {dev:.3e})")]
    NonSymmetric { dev: f64 },
    #[error("covariance must commute with J (max deviation {dev:.3e})")]
    NotJCommuting { dev: f64 },
    #[error("matrix is not positive semidefinite (eigenvalue {eig:.3e})")]
    NotPositive { eig: f64 },
    #[error("density operator trace must be 1, got {trace}")]
    BadTrace { trace: f64 },
    #[error("dispersion must be positive and finite, got {0}")]
    BadAlpha(f64),
    #[error("state has zero dispersion, cannot rescale")]
    Degenerate,
    #[error("covariance size {got} does not match space dimension 2n = {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("schema: declared alpha {declared} differs from tr B = {actual}")]
    AlphaMismatch { declared: f64, actual: f64 },
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// SplitMix64 finalizer; decorrelates nearby seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the RNG substream used for one sampling batch.
pub fn substream_seed(seed: u64, batch: u64) -> u64 {
    splitmix64(seed ^ batch.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1))
}

/// A trace-one Hermitian positive semidefinite matrix: a quantum state.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    m: DMatrix<Complex64>,
}

impl DensityOperator {
    pub fn new(m: DMatrix<Complex64>) -> Result<Self, StateError> {
        let op = ComplexOperator::new(m)?;
        let m = op.matrix().clone();
        let trace = m.trace();
        if (trace.re - 1.0).abs() > 1e-10 || trace.im.abs() > 1e-10 {
            return Err(StateError::BadTrace { trace: trace.re });
        }
        let eigs = m.clone().symmetric_eigen().eigenvalues;
        let scale = eigs.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
        if let Some(&min) = eigs
            .iter()
            .filter(|&&x| x < -PSD_TOL * (1.0 + scale))
            .min_by(|a, b| a.partial_cmp(b).unwrap())
        {
            return Err(StateError::NotPositive { eig: min });
        }
        Ok(Self { m })
    }

    /// Normalize an unnormalized Hermitian PSD matrix to unit trace.
    pub fn normalized(m: DMatrix<Complex64>) -> Result<Self, StateError> {
        let trace = m.trace().re;
        if !(trace > 0.0) || !trace.is_finite() {
            return Err(StateError::BadTrace { trace });
        }
        Self::new(m / Complex64::new(trace, 0.0))
    }

    /// Random full-rank density operator D = G G* / tr(G G*).
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let g = DMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let gg = &g * g.adjoint();
        Self::normalized(gg).expect("G G* is Hermitian PSD by construction")
    }

    /// Maximally mixed state I/n.
    pub fn maximally_mixed(n: usize) -> Self {
        Self {
            m: DMatrix::identity(n, n) / Complex64::new(n as f64, 0.0),
        }
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.m
    }
}

/// Zero-mean Gaussian measure on phase space with J-commuting covariance B.
#[derive(Debug, Clone)]
pub struct GaussianState {
    space: PhaseSpace,
    b: DMatrix<f64>,
    alpha: f64,
}

impl GaussianState {
    /// Validates symmetry, commutation with J, and positive semidefiniteness
    /// (eigenvalues down to -PSD_TOL * scale are tolerated).
    pub fn new(space: PhaseSpace, b: DMatrix<f64>) -> Result<Self, StateError> {
        let n = space.n();
        if b.nrows() != 2 * n || b.ncols() != 2 * n {
            return Err(StateError::SizeMismatch {
                expected: 2 * n,
                got: b.nrows(),
            });
        }
        let scale = 1.0 + b.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
        let sym_dev = (&b - b.transpose())
            .iter()
            .fold(0.0_f64, |a, &x| a.max(x.abs()));
        if sym_dev > STRUCTURE_TOL * scale {
            return Err(StateError::NonSymmetric { dev: sym_dev });
        }
        // JB = BJ in block terms: B11 = B22 and B12 = -B21
        let b11 = b.view((0, 0), (n, n));
        let b12 = b.view((0, n), (n, n));
        let b21 = b.view((n, 0), (n, n));
        let b22 = b.view((n, n), (n, n));
        let comm_dev = (b11 - b22)
            .iter()
            .chain((b12 + b21).iter())
            .fold(0.0_f64, |a, &x| a.max(x.abs()));
        if comm_dev > STRUCTURE_TOL * scale {
            return Err(StateError::NotJCommuting { dev: comm_dev });
        }
        let eigs = b.clone().symmetric_eigen().eigenvalues;
        let eig_scale = eigs.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
        if let Some(&min) = eigs
            .iter()
            .filter(|&&x| x < -PSD_TOL * (1.0 + eig_scale))
            .min_by(|a, b| a.partial_cmp(b).unwrap())
        {
            return Err(StateError::NotPositive { eig: min });
        }
        let alpha = b.trace();
        Ok(Self { space, b, alpha })
    }

    /// Gaussian state with covariance B = (alpha/2) * realify(D), the unique
    /// J-commuting covariance of dispersion alpha that dequantizes back to D.
    pub fn from_density_operator(d: &DensityOperator, alpha: f64) -> Result<Self, StateError> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(StateError::BadAlpha(alpha));
        }
        let n = d.n();
        let space = PhaseSpace::abstract_basis(n)?;
        let half = alpha / 2.0;
        let mut b = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let z = d.matrix()[(i, j)];
                b[(i, j)] = half * z.re;
                b[(n + i, n + j)] = half * z.re;
                b[(i, n + j)] = -half * z.im;
                b[(n + i, j)] = half * z.im;
            }
        }
        Self::new(space, b)
    }

    /// Isotropic state B = (alpha / 2n) * identity, the image of the maximally
    /// mixed density operator.
    pub fn isotropic(space: PhaseSpace, alpha: f64) -> Result<Self, StateError> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(StateError::BadAlpha(alpha));
        }
        let n = space.n();
        let b = DMatrix::identity(2 * n, 2 * n) * (alpha / (2.0 * n as f64));
        Self::new(space, b)
    }

    pub fn space(&self) -> &PhaseSpace {
        &self.space
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Dispersion of the ensemble: E ||psi||^2 = tr B.
    pub fn dispersion(&self) -> f64 {
        self.alpha
    }

    /// The unit-dispersion state with covariance B / alpha.
    pub fn scale_state(&self) -> Result<Self, StateError> {
        if !(self.alpha > 0.0) {
            return Err(StateError::Degenerate);
        }
        Ok(Self {
            space: self.space.clone(),
            b: &self.b / self.alpha,
            alpha: 1.0,
        })
    }

    /// Covariance of the complex field Psi = q + i p: B_c = 2B read through
    /// the block correspondence. Hermitian and PSD by construction of B.
    pub fn complex_covariance(&self) -> ComplexOperator {
        let n = self.space.n();
        let m = DMatrix::from_fn(n, n, |i, j| {
            // 2B = [[R, T], [-T, R]] maps to R - iT
            Complex64::new(2.0 * self.b[(i, j)], -2.0 * self.b[(i, j + n)])
        });
        ComplexOperator::new(m).expect("2B is Hermitian because B is symmetric and J-commuting")
    }

    /// A factor L with L L^T = B, for sampling. Cholesky when B is positive
    /// definite; otherwise the symmetric eigendecomposition with negative
    /// eigenvalues clipped to zero.
    pub fn sampling_factor(&self) -> DMatrix<f64> {
        if let Some(ch) = self.b.clone().cholesky() {
            return ch.l();
        }
        let se = self.b.clone().symmetric_eigen();
        let mut v = se.eigenvectors;
        for (mut col, &eig) in v.column_iter_mut().zip(se.eigenvalues.iter()) {
            col *= eig.max(0.0).sqrt();
        }
        v
    }

    /// Draw `count` fields. Deterministic in (seed, count): batch k consumes
    /// the substream of (seed, k), so any parallel schedule that reduces in
    /// batch order reproduces the sequential result bit for bit.
    pub fn sample(&self, seed: u64, count: usize) -> Vec<PhaseVector> {
        let l = self.sampling_factor();
        let mut out = Vec::with_capacity(count);
        let mut batch = 0u64;
        while out.len() < count {
            let take = SAMPLE_BATCH.min(count - out.len());
            sample_batch(&l, seed, batch, take, |v| out.push(v.clone()));
            batch += 1;
        }
        out
    }
}

/// Generate one batch of fields psi = L z, z standard normal, and feed them to
/// `visit`. `l` must come from [`GaussianState::sampling_factor`].
pub fn sample_batch(
    l: &DMatrix<f64>,
    seed: u64,
    batch: u64,
    len: usize,
    mut visit: impl FnMut(&PhaseVector),
) {
    let dim = l.nrows();
    let n = dim / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, batch));
    let mut z = DVector::<f64>::zeros(dim);
    for _ in 0..len {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let x = l * &z;
        let v = PhaseVector {
            q: x.rows(0, n).into_owned(),
            p: x.rows(n, n).into_owned(),
        };
        visit(&v);
    }
}

/// JSON form of a Gaussian state.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSchema {
    pub n: usize,
    pub representation: Representation,
    pub alpha: f64,
    /// Row-major (2n)^2 covariance entries.
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl GaussianState {
    pub fn to_schema(&self, name: Option<String>) -> StateSchema {
        let dim = 2 * self.space.n();
        let mut b = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                b.push(self.b[(i, j)]);
            }
        }
        StateSchema {
            n: self.space.n(),
            representation: self.space.representation().clone(),
            alpha: self.alpha,
            b,
            name,
        }
    }

    pub fn from_schema(s: &StateSchema) -> Result<Self, StateError> {
        let space = match s.representation {
            Representation::AbstractBasis => PhaseSpace::abstract_basis(s.n)?,
            Representation::SpatialGrid {
                dim,
                points_per_axis,
                box_length,
            } => {
                let space = PhaseSpace::spatial_grid(dim, points_per_axis, box_length)?;
                if space.n() != s.n {
                    return Err(StateError::SizeMismatch {
                        expected: space.n(),
                        got: s.n,
                    });
                }
                space
            }
        };
        let dim = 2 * s.n;
        if s.b.len() != dim * dim {
            return Err(StateError::SizeMismatch {
                expected: dim * dim,
                got: s.b.len(),
            });
        }
        let b = DMatrix::from_row_slice(dim, dim, &s.b);
        let state = Self::new(space, b)?;
        if (state.alpha - s.alpha).abs() > 1e-9 * (1.0 + s.alpha.abs()) {
            return Err(StateError::AlphaMismatch {
                declared: s.alpha,
                actual: state.alpha,
            });
        }
        Ok(state)
    }

    pub fn to_json(&self, name: Option<String>) -> String {
        serde_json::to_string_pretty(&self.to_schema(name)).expect("schema serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, StateError> {
        let schema: StateSchema = serde_json::from_str(text)?;
        Self::from_schema(&schema)
    }
}
