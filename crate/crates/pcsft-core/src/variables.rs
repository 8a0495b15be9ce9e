//! Classical variables: smooth real functions of the field with f(0) = 0.
//!
//! Variables are sums of terms. Polynomial terms (quadratic forms and two
//! quartic shapes) carry their operators explicitly and admit closed-form
//! Gaussian expectations; arbitrary smooth terms are opaque callables whose
//! second derivative at zero is recovered by finite differences. The second
//! derivative at the origin, f''(0), is what survives dequantization, so it
//! gets first-class treatment here.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phase_space::{apply_j, PhaseSpace, PhaseVector, StructureError, SymplecticOperator};

/// Threshold on |f(J psi) - f(psi)| / (1 + |f(psi)|) for J-invariance.
pub const J_INVARIANCE_TOL: f64 = 1e-10;

/// Relative disagreement between the two Richardson levels above which a
/// callable is declared non-smooth at the origin.
pub const FD_RESIDUAL_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum VariableError {
    #[error("dimension mismatch: variable on n={expected}, argument has n={got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("term operator has n={got}, variable declared n={expected}")]
    TermMismatch { expected: usize, got: usize },
    #[error("variable must vanish at the origin, got f(0) = {0:.3e}")]
    NotZeroAtOrigin(f64),
    #[error("evaluation returned a non-finite value")]
    NonFinite,
    #[error("finite differences do not converge at the origin (residual {residual:.3e}); the callable is not smooth there")]
    NonSmoothAtZero { residual: f64 },
    #[error("scaling factor alpha must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("smooth terms cannot be serialized; express them through operator terms or a named preset")]
    SmoothNotSerializable,
    #[error("kernel quartic terms require a spatial grid space")]
    KernelNeedsGrid,
    #[error(transparent)]
    Structure(#[from] StructureError),
}

/// One additive term of a classical variable.
#[derive(Clone)]
pub enum Term {
    /// coeff * (A psi, psi)
    Quadratic { coeff: f64, op: SymplecticOperator },
    /// coeff * (G1 psi, psi) * (G2 psi, psi)
    FactoredQuartic {
        coeff: f64,
        g1: SymplecticOperator,
        g2: SymplecticOperator,
    },
    /// coeff * sum_x w |Psi(x)|^4 on a grid with site weight w
    KernelQuartic { coeff: f64, weight: f64 },
    /// An opaque smooth function vanishing at the origin.
    Smooth(SmoothTerm),
}

/// Callable term with a declared growth class and an optional analytic
/// second derivative at the origin.
#[derive(Clone)]
pub struct SmoothTerm {
    pub func: Arc<dyn Fn(&PhaseVector) -> f64 + Send + Sync>,
    pub hessian_at_zero: Option<SymplecticOperator>,
    /// Declared |f(psi)| <= c exp(r ||psi||) bound; ensembles may rely on it.
    pub exponential_growth: bool,
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Quadratic { coeff, .. } => write!(f, "Quadratic(coeff={coeff})"),
            Term::FactoredQuartic { coeff, .. } => write!(f, "FactoredQuartic(coeff={coeff})"),
            Term::KernelQuartic { coeff, weight } => {
                write!(f, "KernelQuartic(coeff={coeff}, weight={weight})")
            }
            Term::Smooth(s) => write!(
                f,
                "Smooth(analytic_hessian={}, exponential_growth={})",
                s.hessian_at_zero.is_some(),
                s.exponential_growth
            ),
        }
    }
}

/// A classical variable on a fixed n-dimensional phase space.
#[derive(Debug, Clone)]
pub struct ClassicalVariable {
    n: usize,
    terms: Vec<Term>,
}

/// Result of extracting f''(0), with the residuals of the two repairs applied
/// to the raw finite-difference matrix.
#[derive(Debug, Clone)]
pub struct HessianAtZero {
    pub operator: SymplecticOperator,
    /// Relative size of the part of the symmetrized Hessian removed by the
    /// projection onto J-commuting operators.
    pub projection_residual: f64,
    /// Relative disagreement of the two Richardson levels (zero when every
    /// term had an analytic Hessian).
    pub fd_residual: f64,
}

impl ClassicalVariable {
    pub fn new(n: usize, terms: Vec<Term>) -> Result<Self, VariableError> {
        if n == 0 {
            return Err(VariableError::TermMismatch { expected: 1, got: 0 });
        }
        for term in &terms {
            match term {
                Term::Quadratic { op, .. } => {
                    if op.n() != n {
                        return Err(VariableError::TermMismatch {
                            expected: n,
                            got: op.n(),
                        });
                    }
                }
                Term::FactoredQuartic { g1, g2, .. } => {
                    for g in [g1, g2] {
                        if g.n() != n {
                            return Err(VariableError::TermMismatch {
                                expected: n,
                                got: g.n(),
                            });
                        }
                    }
                }
                Term::KernelQuartic { weight, .. } => {
                    if !(*weight > 0.0) || !weight.is_finite() {
                        return Err(VariableError::KernelNeedsGrid);
                    }
                }
                Term::Smooth(s) => {
                    let at_zero = (s.func)(&PhaseVector::zeros(n));
                    if !at_zero.is_finite() {
                        return Err(VariableError::NonFinite);
                    }
                    if at_zero.abs() > 1e-12 {
                        return Err(VariableError::NotZeroAtOrigin(at_zero));
                    }
                    if let Some(h) = &s.hessian_at_zero {
                        if h.n() != n {
                            return Err(VariableError::TermMismatch {
                                expected: n,
                                got: h.n(),
                            });
                        }
                    }
                }
            }
        }
        Ok(Self { n, terms })
    }

    /// Quadratic form coeff * (A psi, psi) as a single-term variable.
    pub fn quadratic(coeff: f64, op: SymplecticOperator) -> Self {
        let n = op.n();
        Self {
            n,
            terms: vec![Term::Quadratic { coeff, op }],
        }
    }

    /// Kernel quartic bound to the quadrature weight of `space`.
    pub fn kernel_quartic(coeff: f64, space: &PhaseSpace) -> Result<Term, VariableError> {
        match space.representation() {
            crate::phase_space::Representation::SpatialGrid { .. } => Ok(Term::KernelQuartic {
                coeff,
                weight: space.site_weight(),
            }),
            _ => Err(VariableError::KernelNeedsGrid),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// f(psi).
    pub fn evaluate(&self, v: &PhaseVector) -> Result<f64, VariableError> {
        if v.n() != self.n {
            return Err(VariableError::DimensionMismatch {
                expected: self.n,
                got: v.n(),
            });
        }
        let mut total = 0.0;
        for term in &self.terms {
            total += match term {
                Term::Quadratic { coeff, op } => coeff * op.quadratic_form(v)?,
                Term::FactoredQuartic { coeff, g1, g2 } => {
                    coeff * g1.quadratic_form(v)? * g2.quadratic_form(v)?
                }
                Term::KernelQuartic { coeff, weight } => {
                    let sum: f64 = v
                        .q
                        .iter()
                        .zip(v.p.iter())
                        .map(|(&q, &p)| {
                            let s = q * q + p * p;
                            s * s
                        })
                        .sum();
                    coeff * weight * sum
                }
                Term::Smooth(s) => (s.func)(v),
            };
        }
        if !total.is_finite() {
            return Err(VariableError::NonFinite);
        }
        Ok(total)
    }

    /// Second derivative at the origin as a J-commuting operator.
    ///
    /// Polynomial terms contribute analytically (2 * coeff * A for quadratic
    /// forms, nothing for quartics). Smooth terms use their analytic Hessian
    /// when declared, otherwise central finite differences with two-level
    /// Richardson extrapolation; the raw matrix is then symmetrized and
    /// projected onto the J-commutant, and both repairs are reported.
    pub fn hessian_at_zero(&self) -> Result<HessianAtZero, VariableError> {
        let n = self.n;
        let mut acc = SymplecticOperator::zero(n);
        let mut projection_residual = 0.0_f64;
        let mut fd_residual = 0.0_f64;
        for term in &self.terms {
            match term {
                Term::Quadratic { coeff, op } => {
                    acc = acc.add(&op.scale(2.0 * coeff))?;
                }
                Term::FactoredQuartic { .. } | Term::KernelQuartic { .. } => {}
                Term::Smooth(s) => {
                    if let Some(h) = &s.hessian_at_zero {
                        acc = acc.add(h)?;
                    } else {
                        let (op, proj, fd) = fd_hessian_at_zero(&s.func, n)?;
                        acc = acc.add(&op)?;
                        projection_residual = projection_residual.max(proj);
                        fd_residual = fd_residual.max(fd);
                    }
                }
            }
        }
        Ok(HessianAtZero {
            operator: acc,
            projection_residual,
            fd_residual,
        })
    }

    /// Monte Carlo test of f(J psi) = f(psi) on the unit sphere.
    pub fn is_j_invariant(&self, trials: usize, seed: u64) -> Result<bool, VariableError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..trials {
            let mut x = DVector::<f64>::zeros(2 * self.n);
            for xi in x.iter_mut() {
                *xi = rng.sample(StandardNormal);
            }
            let norm = x.norm();
            if norm == 0.0 {
                continue;
            }
            x /= norm;
            let v = PhaseVector::from_flat(&x)?;
            let fv = self.evaluate(&v)?;
            let fjv = self.evaluate(&apply_j(&v))?;
            if (fjv - fv).abs() > J_INVARIANCE_TOL * (1.0 + fv.abs()) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// The rescaled variable f_Q(Psi) = (1/alpha) f(sqrt(alpha) Psi).
    ///
    /// Quadratic coefficients are unchanged, quartic coefficients pick up a
    /// factor alpha, smooth terms are wrapped; f_Q''(0) = f''(0) in all cases.
    pub fn scale_variable(&self, alpha: f64) -> Result<Self, VariableError> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(VariableError::BadScale(alpha));
        }
        let terms = self
            .terms
            .iter()
            .map(|term| match term {
                Term::Quadratic { coeff, op } => Term::Quadratic {
                    coeff: *coeff,
                    op: op.clone(),
                },
                Term::FactoredQuartic { coeff, g1, g2 } => Term::FactoredQuartic {
                    coeff: coeff * alpha,
                    g1: g1.clone(),
                    g2: g2.clone(),
                },
                Term::KernelQuartic { coeff, weight } => Term::KernelQuartic {
                    coeff: coeff * alpha,
                    weight: *weight,
                },
                Term::Smooth(s) => {
                    let func = Arc::clone(&s.func);
                    let root = alpha.sqrt();
                    let wrapped = move |v: &PhaseVector| {
                        let scaled = PhaseVector {
                            q: &v.q * root,
                            p: &v.p * root,
                        };
                        func(&scaled) / alpha
                    };
                    Term::Smooth(SmoothTerm {
                        func: Arc::new(wrapped),
                        // f_Q''(0) = f''(0), so an analytic Hessian carries over
                        hessian_at_zero: s.hessian_at_zero.clone(),
                        exponential_growth: s.exponential_growth,
                    })
                }
            })
            .collect();
        Ok(Self { n: self.n, terms })
    }
}

/// Central-difference Hessian of `func` at the origin with two Richardson
/// levels, symmetrization and J-projection. Returns (operator,
/// projection residual, finite-difference residual).
fn fd_hessian_at_zero(
    func: &Arc<dyn Fn(&PhaseVector) -> f64 + Send + Sync>,
    n: usize,
) -> Result<(SymplecticOperator, f64, f64), VariableError> {
    let dim = 2 * n;
    let eval = |x: &DVector<f64>| -> Result<f64, VariableError> {
        let v = PhaseVector::from_flat(x)?;
        let y = func(&v);
        if !y.is_finite() {
            return Err(VariableError::NonFinite);
        }
        Ok(y)
    };
    // second differences divide round-off by h^2, so the step must stay
    // well above the first-derivative optimum eps^(1/3); 1e-2 with two
    // extrapolation stages balances ~1e-12 round-off against ~1e-12
    // truncation for unit-scale curvature
    let h0 = 1e-2;
    let raw_at = |h: f64| -> Result<DMatrix<f64>, VariableError> {
        let mut m = DMatrix::zeros(dim, dim);
        let f0 = eval(&DVector::zeros(dim))?;
        for i in 0..dim {
            let mut e = DVector::zeros(dim);
            e[i] = h;
            let plus = eval(&e)?;
            e[i] = -h;
            let minus = eval(&e)?;
            m[(i, i)] = (plus - 2.0 * f0 + minus) / (h * h);
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                let mut e = DVector::zeros(dim);
                e[i] = h;
                e[j] = h;
                let pp = eval(&e)?;
                e[j] = -h;
                let pm = eval(&e)?;
                e[i] = -h;
                e[j] = h;
                let mp = eval(&e)?;
                e[j] = -h;
                let mm = eval(&e)?;
                let d = (pp - pm - mp + mm) / (4.0 * h * h);
                m[(i, j)] = d;
                m[(j, i)] = d;
            }
        }
        Ok(m)
    };
    let coarse = raw_at(h0)?;
    let mid = raw_at(h0 / 2.0)?;
    let fine = raw_at(h0 / 4.0)?;
    // two fourth-order extrapolations of the second-order central
    // differences, combined to sixth order; their disagreement is the
    // smoothness diagnostic (huge for kinks, ~h^4 for analytic terms)
    let r1 = (&mid * 4.0 - &coarse) / 3.0;
    let r2 = (&fine * 4.0 - &mid) / 3.0;
    let extrap = (&r2 * 16.0 - &r1) / 15.0;
    let scale = 1.0 + extrap.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
    let fd_residual = (&r2 - &r1)
        .iter()
        .fold(0.0_f64, |a, &x| a.max(x.abs()))
        / scale;
    if fd_residual > FD_RESIDUAL_TOL {
        return Err(VariableError::NonSmoothAtZero {
            residual: fd_residual,
        });
    }
    let sym = (&extrap + extrap.transpose()) / 2.0;
    // projection onto J-commuting matrices: (H - J H J) / 2
    let mut j = DMatrix::zeros(dim, dim);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    let proj = (&sym - &j * &sym * &j) / 2.0;
    let projection_residual = (&sym - &proj).norm() / scale;
    // exact block structure: average the diagonal blocks, antisymmetrize T
    let r_raw = (proj.view((0, 0), (n, n)) + proj.view((n, n), (n, n))) / 2.0;
    let r = (&r_raw + r_raw.transpose()) / 2.0;
    let t_raw = (proj.view((0, n), (n, n)) - proj.view((n, 0), (n, n))) / 2.0;
    let t = (&t_raw - t_raw.transpose()) / 2.0;
    let op = SymplecticOperator::new(r, t)?;
    Ok((op, projection_residual, fd_residual))
}

/// JSON form of an operator payload: a named preset or explicit blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OperatorSchema {
    Named {
        name: String,
    },
    Explicit {
        /// Row-major n^2 entries of the symmetric block R.
        r: Vec<f64>,
        /// Row-major n^2 entries of the antisymmetric block T.
        t: Vec<f64>,
    },
}

impl OperatorSchema {
    pub fn resolve(&self, n: usize) -> Result<SymplecticOperator, VariableError> {
        match self {
            OperatorSchema::Named { name } => match name.as_str() {
                "identity" => Ok(SymplecticOperator::identity(n)),
                "zero" => Ok(SymplecticOperator::zero(n)),
                other => Err(VariableError::TermMismatch {
                    expected: n,
                    got: usize::from(other.is_empty()),
                }),
            },
            OperatorSchema::Explicit { r, t } => {
                if r.len() != n * n || t.len() != n * n {
                    return Err(VariableError::TermMismatch {
                        expected: n * n,
                        got: r.len(),
                    });
                }
                Ok(SymplecticOperator::new(
                    DMatrix::from_row_slice(n, n, r),
                    DMatrix::from_row_slice(n, n, t),
                )?)
            }
        }
    }

    pub fn explicit(op: &SymplecticOperator) -> Self {
        let n = op.n();
        let row_major = |m: &DMatrix<f64>| {
            let mut v = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    v.push(m[(i, j)]);
                }
            }
            v
        };
        OperatorSchema::Explicit {
            r: row_major(op.r()),
            t: row_major(op.t()),
        }
    }
}

/// JSON form of one variable term.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TermSchema {
    Quadratic {
        coeff: f64,
        operator: OperatorSchema,
    },
    FactoredQuartic {
        coeff: f64,
        gamma1: OperatorSchema,
        gamma2: OperatorSchema,
    },
    KernelQuartic {
        coeff: f64,
    },
}

/// JSON form of a variable: a term list over an n-dimensional space.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSchema {
    pub n: usize,
    pub terms: Vec<TermSchema>,
}

impl ClassicalVariable {
    pub fn from_schema(schema: &VariableSchema, space: &PhaseSpace) -> Result<Self, VariableError> {
        if schema.n != space.n() {
            return Err(VariableError::DimensionMismatch {
                expected: space.n(),
                got: schema.n,
            });
        }
        let n = schema.n;
        let mut terms = Vec::with_capacity(schema.terms.len());
        for t in &schema.terms {
            terms.push(match t {
                TermSchema::Quadratic { coeff, operator } => Term::Quadratic {
                    coeff: *coeff,
                    op: operator.resolve(n)?,
                },
                TermSchema::FactoredQuartic {
                    coeff,
                    gamma1,
                    gamma2,
                } => Term::FactoredQuartic {
                    coeff: *coeff,
                    g1: gamma1.resolve(n)?,
                    g2: gamma2.resolve(n)?,
                },
                TermSchema::KernelQuartic { coeff } => Self::kernel_quartic(*coeff, space)?,
            });
        }
        Self::new(n, terms)
    }

    pub fn to_schema(&self) -> Result<VariableSchema, VariableError> {
        let terms = self
            .terms
            .iter()
            .map(|t| match t {
                Term::Quadratic { coeff, op } => Ok(TermSchema::Quadratic {
                    coeff: *coeff,
                    operator: OperatorSchema::explicit(op),
                }),
                Term::FactoredQuartic { coeff, g1, g2 } => Ok(TermSchema::FactoredQuartic {
                    coeff: *coeff,
                    gamma1: OperatorSchema::explicit(g1),
                    gamma2: OperatorSchema::explicit(g2),
                }),
                Term::KernelQuartic { coeff, .. } => Ok(TermSchema::KernelQuartic { coeff: *coeff }),
                Term::Smooth(_) => Err(VariableError::SmoothNotSerializable),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(VariableSchema { n: self.n, terms })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::Representation;

    fn vec2(q: &[f64], p: &[f64]) -> PhaseVector {
        PhaseVector::new(DVector::from_row_slice(q), DVector::from_row_slice(p)).unwrap()
    }

    fn random_op(n: usize, rng: &mut impl Rng) -> SymplecticOperator {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        SymplecticOperator::new((&a + a.transpose()) * 0.5, (&b - b.transpose()) * 0.5).unwrap()
    }

    fn random_vec(n: usize, rng: &mut impl Rng) -> PhaseVector {
        vec2(
            &(0..n).map(|_| rng.random_range(-1.5..1.5)).collect::<Vec<_>>(),
            &(0..n).map(|_| rng.random_range(-1.5..1.5)).collect::<Vec<_>>(),
        )
    }

    fn op_max_diff(a: &SymplecticOperator, b: &SymplecticOperator) -> f64 {
        (a.r() - b.r())
            .iter()
            .chain((a.t() - b.t()).iter())
            .fold(0.0_f64, |acc, &x| acc.max(x.abs()))
    }

    #[test]
    fn evaluate_half_norm_squared() {
        let f = ClassicalVariable::quadratic(0.5, SymplecticOperator::identity(1));
        let v = vec2(&[3.0], &[4.0]);
        assert_eq!(f.evaluate(&v).unwrap(), 12.5);
        assert_eq!(f.evaluate(&PhaseVector::zeros(1)).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_factored_quartic() {
        let id = SymplecticOperator::identity(1);
        let f = ClassicalVariable::new(
            1,
            vec![Term::FactoredQuartic {
                coeff: 0.25,
                g1: id.clone(),
                g2: id,
            }],
        )
        .unwrap();
        let v = vec2(&[1.0], &[1.0]); // ||psi||^2 = 2
        assert_eq!(f.evaluate(&v).unwrap(), 1.0);
    }

    #[test]
    fn evaluate_kernel_quartic_on_grid() {
        let space = PhaseSpace::spatial_grid(1, 4, 2.0).unwrap();
        assert!(matches!(
            space.representation(),
            Representation::SpatialGrid { .. }
        ));
        let term = ClassicalVariable::kernel_quartic(3.0, &space).unwrap();
        let f = ClassicalVariable::new(4, vec![term]).unwrap();
        let v = vec2(&[1.0, 0.0, 2.0, 0.0], &[0.0, 1.0, 0.0, 0.0]);
        // |Psi|^2 per site: 1, 1, 4, 0; sum of squares = 18; weight dx = 0.5
        assert!((f.evaluate(&v).unwrap() - 3.0 * 0.5 * 18.0).abs() < 1e-12);
        // abstract spaces cannot host kernel terms
        let abs_space = PhaseSpace::abstract_basis(4).unwrap();
        assert!(matches!(
            ClassicalVariable::kernel_quartic(1.0, &abs_space),
            Err(VariableError::KernelNeedsGrid)
        ));
    }

    #[test]
    fn polynomial_terms_are_j_invariant_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let n = 3;
        let f = ClassicalVariable::new(
            n,
            vec![
                Term::Quadratic {
                    coeff: 0.7,
                    op: random_op(n, &mut rng),
                },
                Term::FactoredQuartic {
                    coeff: -0.3,
                    g1: random_op(n, &mut rng),
                    g2: random_op(n, &mut rng),
                },
            ],
        )
        .unwrap();
        for _ in 0..100 {
            let v = random_vec(n, &mut rng);
            let a = f.evaluate(&v).unwrap();
            let b = f.evaluate(&apply_j(&v)).unwrap();
            assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
        assert!(f.is_j_invariant(100, 1).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let f = ClassicalVariable::quadratic(1.0, SymplecticOperator::identity(3));
        let v = vec2(&[1.0], &[1.0]);
        assert!(matches!(
            f.evaluate(&v),
            Err(VariableError::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn hessian_of_quadratic_form_is_twice_the_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_op(3, &mut rng);
        let f = ClassicalVariable::quadratic(0.5, a.clone());
        let h = f.hessian_at_zero().unwrap();
        assert_eq!(h.fd_residual, 0.0);
        assert_eq!(h.projection_residual, 0.0);
        assert!(op_max_diff(&h.operator, &a) < 1e-15);
    }

    #[test]
    fn hessian_of_quartics_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let f = ClassicalVariable::new(
            2,
            vec![Term::FactoredQuartic {
                coeff: 5.0,
                g1: random_op(2, &mut rng),
                g2: random_op(2, &mut rng),
            }],
        )
        .unwrap();
        let h = f.hessian_at_zero().unwrap();
        assert!(op_max_diff(&h.operator, &SymplecticOperator::zero(2)) == 0.0);
    }

    #[test]
    fn hessian_of_gaussian_bump() {
        // f = ||psi||^2 exp(-||psi||^2) has f''(0) = 2 I
        let n = 2;
        let f = ClassicalVariable::new(
            n,
            vec![Term::Smooth(SmoothTerm {
                func: Arc::new(|v: &PhaseVector| {
                    let s = v.norm_squared();
                    s * (-s).exp()
                }),
                hessian_at_zero: None,
                exponential_growth: false,
            })],
        )
        .unwrap();
        let h = f.hessian_at_zero().unwrap();
        let expected = SymplecticOperator::identity(n).scale(2.0);
        assert!(
            op_max_diff(&h.operator, &expected) < 1e-6,
            "max diff {}",
            op_max_diff(&h.operator, &expected)
        );
        assert!(h.fd_residual < 1e-6);
    }

    #[test]
    fn fd_hessian_matches_analytic_for_polynomials() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 2;
        let poly = ClassicalVariable::new(
            n,
            vec![
                Term::Quadratic {
                    coeff: 1.3,
                    op: random_op(n, &mut rng),
                },
                Term::FactoredQuartic {
                    coeff: 0.8,
                    g1: random_op(n, &mut rng),
                    g2: random_op(n, &mut rng),
                },
            ],
        )
        .unwrap();
        let analytic = poly.hessian_at_zero().unwrap().operator;
        let inner = poly.clone();
        let wrapped = ClassicalVariable::new(
            n,
            vec![Term::Smooth(SmoothTerm {
                func: Arc::new(move |v: &PhaseVector| inner.evaluate(v).unwrap()),
                hessian_at_zero: None,
                exponential_growth: false,
            })],
        )
        .unwrap();
        let fd = wrapped.hessian_at_zero().unwrap();
        let scale = 1.0 + analytic.norm();
        assert!(
            op_max_diff(&fd.operator, &analytic) / scale < 1e-8,
            "fd vs analytic: {}",
            op_max_diff(&fd.operator, &analytic)
        );
    }

    #[test]
    fn analytic_hessian_override_is_used() {
        let n = 2;
        let declared = SymplecticOperator::identity(n).scale(2.0);
        let f = ClassicalVariable::new(
            n,
            vec![Term::Smooth(SmoothTerm {
                func: Arc::new(|v: &PhaseVector| v.norm_squared()),
                hessian_at_zero: Some(declared.clone()),
                exponential_growth: false,
            })],
        )
        .unwrap();
        let h = f.hessian_at_zero().unwrap();
        assert_eq!(h.fd_residual, 0.0);
        assert!(op_max_diff(&h.operator, &declared) == 0.0);
    }

    #[test]
    fn norm_is_not_smooth_at_zero() {
        let f = ClassicalVariable::new(
            1,
            vec![Term::Smooth(SmoothTerm {
                func: Arc::new(|v: &PhaseVector| v.norm_squared().sqrt()),
                hessian_at_zero: None,
                exponential_growth: false,
            })],
        )
        .unwrap();
        assert!(matches!(
            f.hessian_at_zero(),
            Err(VariableError::NonSmoothAtZero { .. })
        ));
    }

    #[test]
    fn must_vanish_at_origin() {
        let r = ClassicalVariable::new(
            1,
            vec![Term::Smooth(SmoothTerm {
                func: Arc::new(|_: &PhaseVector| 1.0),
                hessian_at_zero: None,
                exponential_growth: false,
            })],
        );
        assert!(matches!(r, Err(VariableError::NotZeroAtOrigin(_))));
    }

    #[test]
    fn cubic_coordinate_is_not_j_invariant() {
        let f = ClassicalVariable::new(
            1,
            vec![Term::Smooth(SmoothTerm {
                func: Arc::new(|v: &PhaseVector| v.q[0].powi(3)),
                hessian_at_zero: None,
                exponential_growth: false,
            })],
        )
        .unwrap();
        assert!(!f.is_j_invariant(50, 2).unwrap());
    }

    #[test]
    fn zero_variable_is_j_invariant() {
        let f = ClassicalVariable::quadratic(0.0, SymplecticOperator::zero(2));
        assert!(f.is_j_invariant(50, 3).unwrap());
    }

    #[test]
    fn j_projection_repairs_noninvariant_hessian() {
        // f = q_1^2 is smooth but not J-invariant; the projection averages the
        // q and p blocks and reports how much it removed
        let f = ClassicalVariable::new(
            1,
            vec![Term::Smooth(SmoothTerm {
                func: Arc::new(|v: &PhaseVector| v.q[0] * v.q[0]),
                hessian_at_zero: None,
                exponential_growth: false,
            })],
        )
        .unwrap();
        let h = f.hessian_at_zero().unwrap();
        assert!((h.operator.r()[(0, 0)] - 1.0).abs() < 1e-7);
        assert!(h.projection_residual > 0.1);
    }

    #[test]
    fn scaling_identity_on_polynomials() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let n = 3;
        let f = ClassicalVariable::new(
            n,
            vec![
                Term::Quadratic {
                    coeff: 0.9,
                    op: random_op(n, &mut rng),
                },
                Term::FactoredQuartic {
                    coeff: 1.7,
                    g1: random_op(n, &mut rng),
                    g2: random_op(n, &mut rng),
                },
            ],
        )
        .unwrap();
        for _ in 0..100 {
            let alpha = 10f64.powf(rng.random_range(-6.0..0.0));
            let fq = f.scale_variable(alpha).unwrap();
            let v = random_vec(n, &mut rng);
            let lhs = fq.evaluate(&v).unwrap();
            let scaled = PhaseVector {
                q: &v.q * alpha.sqrt(),
                p: &v.p * alpha.sqrt(),
            };
            let rhs = f.evaluate(&scaled).unwrap() / alpha;
            assert!(
                (lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()),
                "alpha={alpha}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn scaling_identity_on_smooth_terms_is_exact() {
        let f = ClassicalVariable::new(
            1,
            vec![Term::Smooth(SmoothTerm {
                func: Arc::new(|v: &PhaseVector| {
                    let s = v.norm_squared();
                    s * (-s).exp()
                }),
                hessian_at_zero: None,
                exponential_growth: false,
            })],
        )
        .unwrap();
        let alpha = 3.7e-3;
        let fq = f.scale_variable(alpha).unwrap();
        let v = vec2(&[0.4], &[-1.1]);
        let scaled = vec2(&[0.4 * alpha.sqrt()], &[-1.1 * alpha.sqrt()]);
        // the wrapped closure computes literally f(sqrt(alpha) psi) / alpha
        assert_eq!(
            fq.evaluate(&v).unwrap(),
            f.evaluate(&scaled).unwrap() / alpha
        );
    }

    #[test]
    fn quadratic_part_is_scale_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let a = random_op(2, &mut rng);
        let f = ClassicalVariable::quadratic(1.2, a);
        let fq = f.scale_variable(1e-4).unwrap();
        let v = random_vec(2, &mut rng);
        assert_eq!(f.evaluate(&v).unwrap(), fq.evaluate(&v).unwrap());
    }

    #[test]
    fn quartic_coefficient_scales_linearly() {
        let id = SymplecticOperator::identity(1);
        let f = ClassicalVariable::new(
            1,
            vec![Term::FactoredQuartic {
                coeff: 2.0,
                g1: id.clone(),
                g2: id,
            }],
        )
        .unwrap();
        let fq = f.scale_variable(0.25).unwrap();
        match &fq.terms()[0] {
            Term::FactoredQuartic { coeff, .. } => assert_eq!(*coeff, 0.5),
            _ => unreachable!(),
        }
    }

    #[test]
    fn hessian_is_invariant_under_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let n = 2;
        let f = ClassicalVariable::new(
            n,
            vec![
                Term::Quadratic {
                    coeff: 0.5,
                    op: random_op(n, &mut rng),
                },
                Term::FactoredQuartic {
                    coeff: 2.5,
                    g1: random_op(n, &mut rng),
                    g2: random_op(n, &mut rng),
                },
                Term::Smooth(SmoothTerm {
                    func: Arc::new(|v: &PhaseVector| {
                        let s = v.norm_squared();
                        s * (-s).exp()
                    }),
                    hessian_at_zero: None,
                    exponential_growth: false,
                }),
            ],
        )
        .unwrap();
        let h = f.hessian_at_zero().unwrap().operator;
        for alpha in [1e-1, 1e-3, 1e-6] {
            let hq = f.scale_variable(alpha).unwrap().hessian_at_zero().unwrap().operator;
            let scale = 1.0 + h.norm();
            assert!(
                op_max_diff(&h, &hq) / scale < 1e-8,
                "alpha={alpha}: diff {}",
                op_max_diff(&h, &hq)
            );
        }
    }

    #[test]
    fn schema_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let space = PhaseSpace::abstract_basis(2).unwrap();
        let f = ClassicalVariable::new(
            2,
            vec![
                Term::Quadratic {
                    coeff: 0.5,
                    op: random_op(2, &mut rng),
                },
                Term::FactoredQuartic {
                    coeff: 0.25,
                    g1: random_op(2, &mut rng),
                    g2: random_op(2, &mut rng),
                },
            ],
        )
        .unwrap();
        let schema = f.to_schema().unwrap();
        let text = serde_json::to_string(&schema).unwrap();
        let parsed: VariableSchema = serde_json::from_str(&text).unwrap();
        let back = ClassicalVariable::from_schema(&parsed, &space).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        for _ in 0..20 {
            let v = random_vec(2, &mut rng);
            assert_eq!(f.evaluate(&v).unwrap(), back.evaluate(&v).unwrap());
        }
        // named operators resolve
        let named: VariableSchema = serde_json::from_str(
            r#"{"n": 2, "terms": [{"type": "quadratic", "coeff": 1.0, "operator": {"name": "identity"}}]}"#,
        )
        .unwrap();
        let g = ClassicalVariable::from_schema(&named, &space).unwrap();
        let v = vec2(&[1.0, 0.0], &[0.0, 1.0]);
        assert_eq!(g.evaluate(&v).unwrap(), 2.0);
        // smooth terms refuse to serialize
        let s = ClassicalVariable::new(
            1,
            vec![Term::Smooth(SmoothTerm {
                func: Arc::new(|v: &PhaseVector| v.norm_squared()),
                hessian_at_zero: None,
                exponential_growth: false,
            })],
        )
        .unwrap();
        assert!(matches!(
            s.to_schema(),
            Err(VariableError::SmoothNotSerializable)
        ));
    }
}
