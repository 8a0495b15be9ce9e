//! Phase space of classical fields.
//!
//! A classical field is a point psi = (q, p) in Omega = Q x P with Q = P = R^n.
//! The symplectic structure is the block operator J(q, p) = (p, -q). Identifying
//! Omega with C^n through Psi = q + i p turns J into multiplication by -i, real
//! quadratic forms of J-commuting operators into Hermitian forms, and the real
//! scalar product into the real part of the complex one.
//!
//! Complex inner products here are conjugate-linear in the FIRST argument:
//! `<u, v> = sum conj(u_k) v_k`, so `Re<u, v> = (u, v)_real`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Complex representation of a field, Psi = q + i p.
pub type Field = DVector<Complex64>;

/// Relative tolerance for structural checks (symmetry, antisymmetry, Hermiticity).
pub const STRUCTURE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum StructureError {
    #[error("matrix block must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("blocks must share one dimension, got {left} and {right}")]
    BlockMismatch { left: usize, right: usize },
    #[error("R block is not symmetric (max deviation {dev:.3e})")]
    NonSymmetricR { dev: f64 },
    #[error("T block is not antisymmetric (max deviation {dev:.3e})")]
    NonAntisymmetricT { dev: f64 },
    #[error("matrix is not Hermitian (max deviation {dev:.3e})")]
    NonHermitian { dev: f64 },
    #[error("dimension mismatch: operator on n={expected}, vector has n={got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("entries must be finite")]
    NonFinite,
    #[error("phase space dimension must be at least 1")]
    EmptySpace,
    #[error("grid dimension must be 1, 2 or 3, got {0}")]
    BadGridDim(u8),
    #[error("grid must have at least 2 points per axis and a positive box length")]
    BadGrid,
}

/// How the n coordinates of the field are indexed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Representation {
    /// Plain orthonormal basis of R^n, no spatial meaning attached.
    AbstractBasis,
    /// Uniform periodic grid with `points_per_axis`^dim sites on a box of side
    /// `box_length`; coordinates are field values at sites in row-major order.
    SpatialGrid {
        dim: u8,
        points_per_axis: usize,
        box_length: f64,
    },
}

/// Finite-dimensional truncation of the phase space Omega = Q x P.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpace {
    n: usize,
    representation: Representation,
}

impl PhaseSpace {
    /// Space of dimension n over an abstract orthonormal basis.
    pub fn abstract_basis(n: usize) -> Result<Self, StructureError> {
        if n == 0 {
            return Err(StructureError::EmptySpace);
        }
        Ok(Self {
            n,
            representation: Representation::AbstractBasis,
        })
    }

    /// Space whose coordinates sample a periodic box; n = points_per_axis^dim.
    pub fn spatial_grid(dim: u8, points_per_axis: usize, box_length: f64) -> Result<Self, StructureError> {
        if !(1..=3).contains(&dim) {
            return Err(StructureError::BadGridDim(dim));
        }
        if points_per_axis < 2 || !(box_length > 0.0) || !box_length.is_finite() {
            return Err(StructureError::BadGrid);
        }
        let n = points_per_axis.pow(dim as u32);
        Ok(Self {
            n,
            representation: Representation::SpatialGrid {
                dim,
                points_per_axis,
                box_length,
            },
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn representation(&self) -> &Representation {
        &self.representation
    }

    /// Quadrature weight of one grid site (dx^dim), or 1 for abstract bases.
    pub fn site_weight(&self) -> f64 {
        match self.representation {
            Representation::AbstractBasis => 1.0,
            Representation::SpatialGrid {
                dim,
                points_per_axis,
                box_length,
            } => (box_length / points_per_axis as f64).powi(dim as i32),
        }
    }
}

/// A point (q, p) of phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl PhaseVector {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Result<Self, StructureError> {
        if q.len() != p.len() {
            return Err(StructureError::BlockMismatch {
                left: q.len(),
                right: p.len(),
            });
        }
        if q.is_empty() {
            return Err(StructureError::EmptySpace);
        }
        if !(q.iter().all(|x| x.is_finite()) && p.iter().all(|x| x.is_finite())) {
            return Err(StructureError::NonFinite);
        }
        Ok(Self { q, p })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            q: DVector::zeros(n),
            p: DVector::zeros(n),
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    /// Flat 2n real coordinate vector (q stacked over p).
    pub fn to_flat(&self) -> DVector<f64> {
        let n = self.n();
        let mut v = DVector::zeros(2 * n);
        v.rows_mut(0, n).copy_from(&self.q);
        v.rows_mut(n, n).copy_from(&self.p);
        v
    }

    pub fn from_flat(v: &DVector<f64>) -> Result<Self, StructureError> {
        if v.is_empty() || !v.len().is_multiple_of(2) {
            return Err(StructureError::BlockMismatch {
                left: v.len(),
                right: v.len(),
            });
        }
        let n = v.len() / 2;
        Self::new(v.rows(0, n).into_owned(), v.rows(n, n).into_owned())
    }

    /// Complex representation Psi = q + i p.
    pub fn to_field(&self) -> Field {
        Field::from_iterator(
            self.n(),
            self.q.iter().zip(self.p.iter()).map(|(&q, &p)| Complex64::new(q, p)),
        )
    }

    pub fn from_field(f: &Field) -> Self {
        Self {
            q: DVector::from_iterator(f.len(), f.iter().map(|z| z.re)),
            p: DVector::from_iterator(f.len(), f.iter().map(|z| z.im)),
        }
    }

    /// Real scalar product (u, v) = (q_u, q_v) + (p_u, p_v).
    pub fn real_inner(&self, other: &Self) -> f64 {
        self.q.dot(&other.q) + self.p.dot(&other.p)
    }

    pub fn norm_squared(&self) -> f64 {
        self.real_inner(self)
    }
}

/// Symplectic structure: J(q, p) = (p, -q). Satisfies J o J = -identity.
pub fn apply_j(v: &PhaseVector) -> PhaseVector {
    PhaseVector {
        q: v.p.clone(),
        p: -&v.q,
    }
}

/// Complex inner product of u, v as fields, conjugate-linear in `u`.
pub fn complex_inner(u: &PhaseVector, v: &PhaseVector) -> Complex64 {
    // <u, v> = sum conj(q_u + i p_u) (q_v + i p_v)
    let re = u.q.dot(&v.q) + u.p.dot(&v.p);
    let im = u.q.dot(&v.p) - u.p.dot(&v.q);
    Complex64::new(re, im)
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, &x| a.max(x.abs()))
}

/// A real operator commuting with J, stored through its blocks:
/// A = [[R, T], [-T, R]] with R symmetric and T antisymmetric. Such operators
/// are exactly the self-adjoint ones that commute with J, and correspond to
/// Hermitian matrices R - iT on the complex side.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticOperator {
    r: DMatrix<f64>,
    t: DMatrix<f64>,
}

impl SymplecticOperator {
    pub fn new(r: DMatrix<f64>, t: DMatrix<f64>) -> Result<Self, StructureError> {
        if r.nrows() != r.ncols() {
            return Err(StructureError::NotSquare {
                rows: r.nrows(),
                cols: r.ncols(),
            });
        }
        if r.nrows() != t.nrows() || t.nrows() != t.ncols() {
            return Err(StructureError::BlockMismatch {
                left: r.nrows(),
                right: t.nrows(),
            });
        }
        if !(r.iter().all(|x| x.is_finite()) && t.iter().all(|x| x.is_finite())) {
            return Err(StructureError::NonFinite);
        }
        let scale = 1.0 + max_abs(&r).max(max_abs(&t));
        let sym_dev = max_abs(&(&r - r.transpose()));
        if sym_dev > STRUCTURE_TOL * scale {
            return Err(StructureError::NonSymmetricR { dev: sym_dev });
        }
        let anti_dev = max_abs(&(&t + t.transpose()));
        if anti_dev > STRUCTURE_TOL * scale {
            return Err(StructureError::NonAntisymmetricT { dev: anti_dev });
        }
        Ok(Self { r, t })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            r: DMatrix::identity(n, n),
            t: DMatrix::zeros(n, n),
        }
    }

    pub fn zero(n: usize) -> Self {
        Self {
            r: DMatrix::zeros(n, n),
            t: DMatrix::zeros(n, n),
        }
    }

    /// Random operator with uniform O(1) entries: R the symmetric and T the
    /// antisymmetric part of independent uniform matrices.
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        Self {
            r: (&a + a.transpose()) * 0.5,
            t: (&b - b.transpose()) * 0.5,
        }
    }

    pub fn n(&self) -> usize {
        self.r.nrows()
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// Apply without materializing the 2n x 2n matrix:
    /// A(q, p) = (Rq + Tp, Rp - Tq).
    pub fn apply(&self, v: &PhaseVector) -> Result<PhaseVector, StructureError> {
        if v.n() != self.n() {
            return Err(StructureError::DimensionMismatch {
                expected: self.n(),
                got: v.n(),
            });
        }
        Ok(PhaseVector {
            q: &self.r * &v.q + &self.t * &v.p,
            p: &self.r * &v.p - &self.t * &v.q,
        })
    }

    /// Real quadratic form (A psi, psi).
    pub fn quadratic_form(&self, v: &PhaseVector) -> Result<f64, StructureError> {
        Ok(self.apply(v)?.real_inner(v))
    }

    /// Dense 2n x 2n block matrix [[R, T], [-T, R]].
    pub fn assemble(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        a.view_mut((0, 0), (n, n)).copy_from(&self.r);
        a.view_mut((0, n), (n, n)).copy_from(&self.t);
        a.view_mut((n, 0), (n, n)).copy_from(&(-&self.t));
        a.view_mut((n, n), (n, n)).copy_from(&self.r);
        a
    }

    /// Hermitian matrix acting on Psi = q + i p: M = R - iT.
    pub fn to_complex_operator(&self) -> ComplexOperator {
        let n = self.n();
        let m = DMatrix::from_fn(n, n, |i, j| Complex64::new(self.r[(i, j)], -self.t[(i, j)]));
        ComplexOperator { m }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            r: &self.r * c,
            t: &self.t * c,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self, StructureError> {
        if self.n() != other.n() {
            return Err(StructureError::DimensionMismatch {
                expected: self.n(),
                got: other.n(),
            });
        }
        Ok(Self {
            r: &self.r + &other.r,
            t: &self.t + &other.t,
        })
    }

    /// Frobenius norm of the assembled operator.
    pub fn norm(&self) -> f64 {
        (2.0 * (self.r.norm_squared() + self.t.norm_squared())).sqrt()
    }
}

/// A Hermitian operator on the complex representation C^n.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexOperator {
    m: DMatrix<Complex64>,
}

impl ComplexOperator {
    pub fn new(m: DMatrix<Complex64>) -> Result<Self, StructureError> {
        if m.nrows() != m.ncols() {
            return Err(StructureError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if !m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(StructureError::NonFinite);
        }
        let scale = 1.0 + m.iter().fold(0.0_f64, |a, z| a.max(z.norm()));
        let dev = (&m - m.adjoint()).iter().fold(0.0_f64, |a, z| a.max(z.norm()));
        if dev > STRUCTURE_TOL * scale {
            return Err(StructureError::NonHermitian { dev });
        }
        Ok(Self { m })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: DMatrix::identity(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.m
    }

    pub fn apply(&self, f: &Field) -> Result<Field, StructureError> {
        if f.len() != self.n() {
            return Err(StructureError::DimensionMismatch {
                expected: self.n(),
                got: f.len(),
            });
        }
        Ok(&self.m * f)
    }

    /// Trace; real up to round-off for Hermitian input, returned as such.
    pub fn trace(&self) -> f64 {
        self.m.trace().re
    }

    /// Real block form [[R, T], [-T, R]] with R = Re M, T = -Im M.
    /// Inverse of `SymplecticOperator::to_complex_operator`.
    pub fn to_symplectic_operator(&self) -> Result<SymplecticOperator, StructureError> {
        let n = self.n();
        let r = DMatrix::from_fn(n, n, |i, j| self.m[(i, j)].re);
        let t = DMatrix::from_fn(n, n, |i, j| -self.m[(i, j)].im);
        SymplecticOperator::new(r, t)
    }
}
