//! Hamilton-Schrodinger dynamics i dPsi/dt = H'(Psi).
//!
//! The gradient convention is fixed once for the whole family:
//! H'(Psi) = 2 d H / d(conjugate Psi), taken with respect to the weighted
//! inner product of the space. This is the unique normalization under which
//! the quadratic Hamilton function (1/2)(H psi, psi) generates the linear
//! equation i dPsi/dt = H Psi, and the logarithmic energy density
//! (b/2)|Psi|^2 (ln(a^3|Psi|^2) - 1) generates b ln(a^3|Psi|^2) Psi.
//!
//! Grid kinds (cubic, logarithmic, general-F) share the spectral linear part
//! -(1/2) Laplacian + V and integrate by Strang splitting; quadratic and
//! bilinear kinds live on abstract bases and integrate by spectral
//! exponential or implicit midpoint.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};
use std::sync::{Arc, OnceLock};
use thiserror::Error;

use crate::format_float;
use crate::phase_space::{Field, PhaseSpace, Representation, StructureError, SymplecticOperator};
use crate::spectral::{field_norm_squared, SpectralError, SpectralGrid};
use crate::variables::{OperatorSchema, VariableError};

/// Floor inside the logarithm of the log-nonlinearity.
pub const LOG_FLOOR: f64 = 1e-30;

/// Convergence tolerance of the implicit-midpoint fixed point, relative.
pub const MIDPOINT_TOL: f64 = 1e-14;

const MIDPOINT_MAX_ITERS: usize = 500;

/// A trajectory aborts when the norm grows past this factor over its start.
pub const BLOWUP_RATIO: f64 = 10.0;

/// A pointwise nonlinearity s = |Psi|^2 -> g(s).
pub type LocalNonlinearity = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Variable(#[from] VariableError),
    #[error("field has {got} components but the space has {expected}")]
    FieldMismatch { expected: usize, got: usize },
    #[error("input field has non-finite components")]
    NonFiniteInput,
    #[error("{kind} produced a non-finite {what}")]
    NonFiniteResult { kind: &'static str, what: &'static str },
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("{kind} does not integrate with {integrator}")]
    WrongIntegrator {
        kind: &'static str,
        integrator: &'static str,
    },
    #[error("{kind} requires an abstract-basis space")]
    NeedsAbstractBasis { kind: &'static str },
    #[error("norm ratio {ratio:.3e} at step {step} exceeds the blow-up bound")]
    BlowUp { step: usize, ratio: f64 },
    #[error("midpoint fixed point stalled at step {step}, residual {residual:.3e}")]
    MidpointStalled { step: usize, residual: f64 },
}

/// The Hamilton function family.
#[derive(Clone)]
pub enum Hamiltonian {
    /// (1/2)(H psi, psi) on an abstract basis.
    Quadratic { h: SymplecticOperator },
    /// Grid energy integral of |grad Psi|^2/4 + V|Psi|^2/2 + alpha_c|Psi|^4/4.
    CubicNls { alpha_c: f64, v: DVector<f64> },
    /// (1/2)(Hlin psi, psi) + (alpha_c/4)(G1 psi, psi)(G2 psi, psi).
    Bilinear {
        hlin: SymplecticOperator,
        alpha_c: f64,
        g1: SymplecticOperator,
        g2: SymplecticOperator,
    },
    /// Grid energy with local density (b/2)|Psi|^2 (ln(a^3|Psi|^2) - 1).
    LogNls { b: f64, a: f64, v: DVector<f64> },
    /// Grid energy with local density (1/2) integral_0^{|Psi|^2} F.
    GeneralF { v: DVector<f64>, f: LocalNonlinearity },
}

impl std::fmt::Debug for Hamiltonian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Hamiltonian::Quadratic { h } => write!(f, "Quadratic(n={})", h.n()),
            Hamiltonian::CubicNls { alpha_c, v } => {
                write!(f, "CubicNls(alpha_c={alpha_c}, sites={})", v.len())
            }
            Hamiltonian::Bilinear { hlin, alpha_c, .. } => {
                write!(f, "Bilinear(n={}, alpha_c={alpha_c})", hlin.n())
            }
            Hamiltonian::LogNls { b, a, v } => {
                write!(f, "LogNls(b={b}, a={a}, sites={})", v.len())
            }
            Hamiltonian::GeneralF { v, .. } => write!(f, "GeneralF(sites={})", v.len()),
        }
    }
}

impl Hamiltonian {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Hamiltonian::Quadratic { .. } => "quadratic",
            Hamiltonian::CubicNls { .. } => "cubic-nls",
            Hamiltonian::Bilinear { .. } => "bilinear",
            Hamiltonian::LogNls { .. } => "log-nls",
            Hamiltonian::GeneralF { .. } => "general-f",
        }
    }

    pub fn is_grid_kind(&self) -> bool {
        matches!(
            self,
            Hamiltonian::CubicNls { .. } | Hamiltonian::LogNls { .. } | Hamiltonian::GeneralF { .. }
        )
    }

    /// Check parameters against a space; every public operation calls this.
    pub fn validate(&self, space: &PhaseSpace) -> Result<(), DynamicsError> {
        let n = space.n();
        let check_op = |op: &SymplecticOperator, name: &str| {
            if op.n() != n {
                return Err(DynamicsError::BadParameter(format!(
                    "{name} acts on n={}, space has n={n}",
                    op.n()
                )));
            }
            Ok(())
        };
        let check_v = |v: &DVector<f64>| {
            if v.len() != n {
                return Err(DynamicsError::BadParameter(format!(
                    "potential has {} sites, grid has {n}",
                    v.len()
                )));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(DynamicsError::BadParameter(
                    "potential has non-finite entries".into(),
                ));
            }
            Ok(())
        };
        if self.is_grid_kind() && !matches!(space.representation(), Representation::SpatialGrid { .. })
        {
            return Err(SpectralError::NotAGrid.into());
        }
        if !self.is_grid_kind()
            && !matches!(space.representation(), Representation::AbstractBasis)
        {
            return Err(DynamicsError::NeedsAbstractBasis {
                kind: self.kind_name(),
            });
        }
        match self {
            Hamiltonian::Quadratic { h } => check_op(h, "H"),
            Hamiltonian::CubicNls { alpha_c, v } => {
                if !(*alpha_c >= 0.0 && alpha_c.is_finite()) {
                    return Err(DynamicsError::BadParameter(format!(
                        "cubic coupling must be finite and nonnegative, got {alpha_c}"
                    )));
                }
                check_v(v)
            }
            Hamiltonian::Bilinear {
                hlin,
                alpha_c,
                g1,
                g2,
            } => {
                if !alpha_c.is_finite() {
                    return Err(DynamicsError::BadParameter(
                        "bilinear coupling must be finite".into(),
                    ));
                }
                check_op(hlin, "Hlin")?;
                check_op(g1, "G1")?;
                check_op(g2, "G2")
            }
            Hamiltonian::LogNls { b, a, v } => {
                if !b.is_finite() {
                    return Err(DynamicsError::BadParameter(
                        "log coupling must be finite".into(),
                    ));
                }
                if !(*a > 0.0 && a.is_finite()) {
                    return Err(DynamicsError::BadParameter(format!(
                        "log length scale must be positive, got {a}"
                    )));
                }
                check_v(v)
            }
            Hamiltonian::GeneralF { v, .. } => check_v(v),
        }
    }

    /// The pointwise rotation rate g with H'(Psi) = linear part + g(|Psi|^2) Psi,
    /// for grid kinds.
    fn local_rate(&self) -> Option<Box<dyn Fn(f64) -> f64 + '_>> {
        match self {
            Hamiltonian::CubicNls { alpha_c, .. } => {
                let a = *alpha_c;
                Some(Box::new(move |s| a * s))
            }
            Hamiltonian::LogNls { b, a, .. } => {
                let (b, a3) = (*b, a * a * a);
                Some(Box::new(move |s| b * (a3 * s).max(LOG_FLOOR).ln()))
            }
            Hamiltonian::GeneralF { f, .. } => Some(Box::new(move |s| f(s))),
            _ => None,
        }
    }

    /// The local energy density u with g = 2 u', for grid kinds.
    fn local_density(&self) -> Option<Box<dyn Fn(f64) -> f64 + '_>> {
        match self {
            Hamiltonian::CubicNls { alpha_c, .. } => {
                let a = *alpha_c;
                Some(Box::new(move |s| 0.25 * a * s * s))
            }
            Hamiltonian::LogNls { b, a, .. } => {
                let (b, a3) = (*b, a * a * a);
                Some(Box::new(move |s| {
                    0.5 * b * s * ((a3 * s).max(LOG_FLOOR).ln() - 1.0)
                }))
            }
            Hamiltonian::GeneralF { f, .. } => {
                Some(Box::new(move |s| 0.5 * integral_to(f.as_ref(), s)))
            }
            _ => None,
        }
    }

    fn potential(&self) -> Option<&DVector<f64>> {
        match self {
            Hamiltonian::CubicNls { v, .. }
            | Hamiltonian::LogNls { v, .. }
            | Hamiltonian::GeneralF { v, .. } => Some(v),
            _ => None,
        }
    }
}

/// 24-point Gauss-Legendre rule on [0, 1]: (node, weight) pairs.
fn gauss_legendre_unit() -> &'static [(f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = 24usize;
        let legendre = |x: f64| {
            // returns (P_n(x), P_n'(x)) by the three-term recurrence
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            (p1, dp)
        };
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut x =
                (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre(x);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            out.push((0.5 * (x + 1.0), 0.5 * w));
        }
        out
    })
}

/// integral_0^s F(q) dq by Gauss-Legendre; exact for polynomial F of degree
/// up to 47.
fn integral_to(f: &(dyn Fn(f64) -> f64 + Send + Sync), s: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    let sum: f64 = gauss_legendre_unit()
        .iter()
        .map(|&(x, w)| w * f(s * x))
        .sum();
    s * sum
}

fn check_field(space: &PhaseSpace, psi: &Field) -> Result<(), DynamicsError> {
    if psi.len() != space.n() {
        return Err(DynamicsError::FieldMismatch {
            expected: space.n(),
            got: psi.len(),
        });
    }
    if !psi.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(DynamicsError::NonFiniteInput);
    }
    Ok(())
}

fn gradient_with_grid(
    h: &Hamiltonian,
    grid: Option<&SpectralGrid>,
    psi: &Field,
) -> Result<Field, DynamicsError> {
    let out = match h {
        Hamiltonian::Quadratic { h } => h.to_complex_operator().apply(psi)?,
        Hamiltonian::Bilinear {
            hlin,
            alpha_c,
            g1,
            g2,
        } => bilinear_gradient(
            &hlin.to_complex_operator().matrix().clone(),
            *alpha_c,
            &g1.to_complex_operator().matrix().clone(),
            &g2.to_complex_operator().matrix().clone(),
            psi,
        ),
        _ => {
            let grid = grid.expect("grid kinds are validated to carry a grid");
            let v = h.potential().expect("grid kinds carry a potential");
            let g = h.local_rate().expect("grid kinds have a local rate");
            let mut out = grid.laplacian_half(psi)?;
            for ((o, z), &vx) in out.iter_mut().zip(psi.iter()).zip(v.iter()) {
                *o += z * (vx + g(z.norm_sqr()));
            }
            out
        }
    };
    if !out.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(DynamicsError::NonFiniteResult {
            kind: h.kind_name(),
            what: "gradient",
        });
    }
    Ok(out)
}

fn bilinear_gradient(
    mlin: &DMatrix<Complex64>,
    alpha_c: f64,
    mg1: &DMatrix<Complex64>,
    mg2: &DMatrix<Complex64>,
    psi: &Field,
) -> Field {
    let g1_psi = mg1 * psi;
    let g2_psi = mg2 * psi;
    let x1 = psi.dotc(&g1_psi).re;
    let x2 = psi.dotc(&g2_psi).re;
    let mut out = mlin * psi;
    out += g2_psi * Complex64::new(0.5 * alpha_c * x1, 0.0);
    out += g1_psi * Complex64::new(0.5 * alpha_c * x2, 0.0);
    out
}

fn energy_with_grid(
    h: &Hamiltonian,
    space: &PhaseSpace,
    grid: Option<&SpectralGrid>,
    psi: &Field,
) -> Result<f64, DynamicsError> {
    let e = match h {
        Hamiltonian::Quadratic { h } => {
            let m_psi = h.to_complex_operator().apply(psi)?;
            0.5 * psi.dotc(&m_psi).re
        }
        Hamiltonian::Bilinear {
            hlin,
            alpha_c,
            g1,
            g2,
        } => {
            let lin_psi = hlin.to_complex_operator().apply(psi)?;
            let x1 = psi.dotc(&g1.to_complex_operator().apply(psi)?).re;
            let x2 = psi.dotc(&g2.to_complex_operator().apply(psi)?).re;
            0.5 * psi.dotc(&lin_psi).re + 0.25 * alpha_c * x1 * x2
        }
        _ => {
            let grid = grid.expect("grid kinds are validated to carry a grid");
            let v = h.potential().expect("grid kinds carry a potential");
            let u = h.local_density().expect("grid kinds have a local density");
            let mut local = 0.0;
            for (z, &vx) in psi.iter().zip(v.iter()) {
                let s = z.norm_sqr();
                local += 0.5 * vx * s + u(s);
            }
            grid.kinetic_energy(psi)? + space.site_weight() * local
        }
    };
    if !e.is_finite() {
        return Err(DynamicsError::NonFiniteResult {
            kind: h.kind_name(),
            what: "energy",
        });
    }
    Ok(e)
}

/// H'(Psi) = 2 dH/d(conjugate Psi) with respect to the space's weighted
/// inner product.
pub fn gradient(
    h: &Hamiltonian,
    space: &PhaseSpace,
    psi: &Field,
) -> Result<Field, DynamicsError> {
    h.validate(space)?;
    check_field(space, psi)?;
    let grid = if h.is_grid_kind() {
        Some(SpectralGrid::new(space)?)
    } else {
        None
    };
    gradient_with_grid(h, grid.as_ref(), psi)
}

/// The Hamilton function value; real and finite for finite fields.
pub fn energy(h: &Hamiltonian, space: &PhaseSpace, psi: &Field) -> Result<f64, DynamicsError> {
    h.validate(space)?;
    check_field(space, psi)?;
    let grid = if h.is_grid_kind() {
        Some(SpectralGrid::new(space)?)
    } else {
        None
    };
    energy_with_grid(h, space, grid.as_ref(), psi)
}

/// Exact flow of the linear equation i dPsi/dt = H Psi through the Hermitian
/// eigendecomposition of the complex form of H.
pub fn evolve_linear(
    h: &SymplecticOperator,
    psi0: &Field,
    t: f64,
) -> Result<Field, DynamicsError> {
    if psi0.len() != h.n() {
        return Err(DynamicsError::FieldMismatch {
            expected: h.n(),
            got: psi0.len(),
        });
    }
    if !t.is_finite() {
        return Err(DynamicsError::BadParameter(format!("time {t} not finite")));
    }
    let m = h.to_complex_operator();
    let eig = m.matrix().clone().symmetric_eigen();
    let mut coeffs = eig.eigenvectors.adjoint() * psi0;
    for (c, &lambda) in coeffs.iter_mut().zip(eig.eigenvalues.iter()) {
        *c *= Complex64::from_polar(1.0, -lambda * t);
    }
    Ok(&eig.eigenvectors * coeffs)
}

/// A sampled integration run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Field>,
    /// Weighted squared norms of the sampled states.
    pub norms: Vec<f64>,
    pub energies: Vec<f64>,
    /// Steps between samples.
    pub stride: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &Field {
        self.states.last().expect("a trajectory records its start")
    }

    /// Largest relative deviation of the norm from its initial value.
    pub fn max_norm_drift(&self) -> f64 {
        let n0 = self.norms[0];
        self.norms
            .iter()
            .map(|&n| (n - n0).abs() / n0.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }

    /// Largest relative deviation of the energy from its initial value.
    pub fn max_energy_drift(&self) -> f64 {
        let e0 = self.energies[0];
        let scale = if e0 == 0.0 { 1.0 } else { e0.abs() };
        self.energies
            .iter()
            .map(|&e| (e - e0).abs() / scale)
            .fold(0.0, f64::max)
    }

    /// Columns: t, norm, energy.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "t,norm,energy")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{},{},{}",
                format_float(self.times[i]),
                format_float(self.norms[i]),
                format_float(self.energies[i]),
            )?;
        }
        Ok(())
    }

    /// Binary snapshot stream, little-endian. Layout: magic "PCSS"; u32
    /// version (1); u32 grid dimension (0 for abstract bases); u32 points
    /// per axis (0 for abstract bases); u32 field length; u32 dtype code
    /// (1 = complex128 as re/im f64 pairs); u32 sample stride; u32 record
    /// count; then per record one f64 time followed by the field components.
    pub fn write_snapshots<W: Write>(&self, space: &PhaseSpace, w: &mut W) -> io::Result<()> {
        let (dim, points) = match *space.representation() {
            Representation::AbstractBasis => (0u32, 0u32),
            Representation::SpatialGrid {
                dim,
                points_per_axis,
                ..
            } => (dim as u32, points_per_axis as u32),
        };
        w.write_all(b"PCSS")?;
        for header in [
            1u32,
            dim,
            points,
            space.n() as u32,
            1u32,
            self.stride as u32,
            self.times.len() as u32,
        ] {
            w.write_all(&header.to_le_bytes())?;
        }
        for (t, state) in self.times.iter().zip(&self.states) {
            w.write_all(&t.to_le_bytes())?;
            for z in state.iter() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

fn check_step_args(dt: f64, steps: usize, stride: usize) -> Result<(), DynamicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::BadParameter(format!(
            "time step must be positive and finite, got {dt}"
        )));
    }
    if steps == 0 {
        return Err(DynamicsError::BadParameter("need at least one step".into()));
    }
    if stride == 0 {
        return Err(DynamicsError::BadParameter(
            "sample stride must be positive".into(),
        ));
    }
    Ok(())
}

struct Recorder<'a> {
    h: &'a Hamiltonian,
    space: &'a PhaseSpace,
    grid: Option<&'a SpectralGrid>,
    traj: Trajectory,
    norm0: f64,
}

impl<'a> Recorder<'a> {
    fn new(
        h: &'a Hamiltonian,
        space: &'a PhaseSpace,
        grid: Option<&'a SpectralGrid>,
        stride: usize,
    ) -> Self {
        Self {
            h,
            space,
            grid,
            traj: Trajectory {
                times: Vec::new(),
                states: Vec::new(),
                norms: Vec::new(),
                energies: Vec::new(),
                stride,
            },
            norm0: 0.0,
        }
    }

    fn record(&mut self, t: f64, psi: &Field) -> Result<(), DynamicsError> {
        let norm = field_norm_squared(self.space, psi);
        if self.traj.times.is_empty() {
            self.norm0 = norm;
        }
        self.traj.times.push(t);
        self.traj.norms.push(norm);
        self.traj
            .energies
            .push(energy_with_grid(self.h, self.space, self.grid, psi)?);
        self.traj.states.push(psi.clone());
        Ok(())
    }

    /// Blow-up guard, run every step whether or not it samples.
    fn check_norm(&self, step: usize, psi: &Field) -> Result<(), DynamicsError> {
        let norm = field_norm_squared(self.space, psi);
        let bound = BLOWUP_RATIO * BLOWUP_RATIO * self.norm0;
        if !(norm <= bound) {
            return Err(DynamicsError::BlowUp {
                step,
                ratio: (norm / self.norm0).sqrt(),
            });
        }
        Ok(())
    }
}

/// Strang splitting for the grid kinds: half-step of the local phase
/// rotation by V + g(|Psi|^2), full spectral kinetic step, half-step local.
/// The local step is exact because the rotation preserves |Psi| pointwise.
pub fn evolve_splitstep(
    h: &Hamiltonian,
    space: &PhaseSpace,
    psi0: &Field,
    dt: f64,
    steps: usize,
    stride: usize,
) -> Result<Trajectory, DynamicsError> {
    h.validate(space)?;
    check_field(space, psi0)?;
    check_step_args(dt, steps, stride)?;
    if !h.is_grid_kind() {
        return Err(DynamicsError::WrongIntegrator {
            kind: h.kind_name(),
            integrator: "split-step",
        });
    }
    let grid = SpectralGrid::new(space)?;
    let v = h.potential().expect("grid kinds carry a potential");
    let g = h.local_rate().expect("grid kinds have a local rate");
    let kinetic_phase: Vec<Complex64> = grid
        .kinetic_symbol()
        .iter()
        .map(|&sym| Complex64::from_polar(1.0, -sym * dt))
        .collect();
    let half = 0.5 * dt;
    let mut psi = psi0.clone();
    let mut hat: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut recorder = Recorder::new(h, space, Some(&grid), stride);
    recorder.record(0.0, &psi)?;
    for step in 1..=steps {
        for (z, &vx) in psi.iter_mut().zip(v.iter()) {
            let theta = (vx + g(z.norm_sqr())) * half;
            *z *= Complex64::from_polar(1.0, -theta);
        }
        hat.copy_from_slice(psi.as_slice());
        grid.forward(&mut hat);
        for (z, &phase) in hat.iter_mut().zip(&kinetic_phase) {
            *z *= phase;
        }
        grid.inverse(&mut hat);
        psi.as_mut_slice().copy_from_slice(&hat);
        for (z, &vx) in psi.iter_mut().zip(v.iter()) {
            let theta = (vx + g(z.norm_sqr())) * half;
            *z *= Complex64::from_polar(1.0, -theta);
        }
        recorder.check_norm(step, &psi)?;
        if step % stride == 0 || step == steps {
            recorder.record(step as f64 * dt, &psi)?;
        }
    }
    Ok(recorder.traj)
}

/// Implicit midpoint for the abstract-basis kinds (quadratic and bilinear):
/// solve Phi = Psi_n - i (dt/2) H'(Phi) by fixed point, then step to
/// 2 Phi - Psi_n. Conserves the quadratic invariants of the flow up to the
/// solver tolerance.
pub fn evolve_bilinear(
    h: &Hamiltonian,
    space: &PhaseSpace,
    psi0: &Field,
    dt: f64,
    steps: usize,
    stride: usize,
) -> Result<Trajectory, DynamicsError> {
    h.validate(space)?;
    check_field(space, psi0)?;
    check_step_args(dt, steps, stride)?;
    let (mlin, alpha_c, mg1, mg2) = match h {
        Hamiltonian::Quadratic { h } => (
            h.to_complex_operator().matrix().clone(),
            0.0,
            DMatrix::identity(space.n(), space.n()),
            DMatrix::identity(space.n(), space.n()),
        ),
        Hamiltonian::Bilinear {
            hlin,
            alpha_c,
            g1,
            g2,
        } => (
            hlin.to_complex_operator().matrix().clone(),
            *alpha_c,
            g1.to_complex_operator().matrix().clone(),
            g2.to_complex_operator().matrix().clone(),
        ),
        _ => {
            return Err(DynamicsError::WrongIntegrator {
                kind: h.kind_name(),
                integrator: "implicit midpoint",
            })
        }
    };
    let grad = |phi: &Field| bilinear_gradient(&mlin, alpha_c, &mg1, &mg2, phi);
    let half = Complex64::new(0.0, -0.5 * dt);
    let mut psi = psi0.clone();
    let mut recorder = Recorder::new(h, space, None, stride);
    recorder.record(0.0, &psi)?;
    for step in 1..=steps {
        let mut phi = psi.clone();
        let mut residual = f64::INFINITY;
        for _ in 0..MIDPOINT_MAX_ITERS {
            let next = &psi + grad(&phi) * half;
            residual = (&next - &phi).norm();
            let scale = next.norm();
            phi = next;
            if !scale.is_finite() {
                break;
            }
            if residual <= MIDPOINT_TOL * (1.0 + scale) {
                residual = 0.0;
                break;
            }
        }
        if residual != 0.0 {
            return Err(DynamicsError::MidpointStalled { step, residual });
        }
        psi = phi * Complex64::new(2.0, 0.0) - psi;
        recorder.check_norm(step, &psi)?;
        if step % stride == 0 || step == steps {
            recorder.record(step as f64 * dt, &psi)?;
        }
    }
    Ok(recorder.traj)
}

/// The prequantum side of the section-7 rescaling
/// H(psi) = (alpha / E_P) H_Q(psi / sqrt(alpha)): the same functional forms
/// with transformed coefficients, stored explicitly.
#[derive(Clone, Debug)]
pub struct PrequantumHamiltonian {
    pub alpha: f64,
    pub e_p: f64,
    pub kind: PrequantumKind,
}

/// Transformed coefficient data per kind. Quadratic parts are divided by
/// E_P; quartic couplings pick up 1/(alpha E_P); the log-nonlinearity keeps
/// b/E_P and moves alpha into the argument scale a^3/alpha.
#[derive(Clone)]
pub enum PrequantumKind {
    Quadratic {
        h_over_ep: SymplecticOperator,
    },
    CubicNls {
        v_over_ep: DVector<f64>,
        quartic: f64,
    },
    Bilinear {
        hlin_over_ep: SymplecticOperator,
        quartic: f64,
        g1: SymplecticOperator,
        g2: SymplecticOperator,
    },
    LogNls {
        b_over_ep: f64,
        log_scale: f64,
        v_over_ep: DVector<f64>,
    },
    GeneralF {
        v_over_ep: DVector<f64>,
        f_pre: LocalNonlinearity,
    },
}

impl std::fmt::Debug for PrequantumKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PrequantumKind::Quadratic { .. } => write!(f, "Quadratic"),
            PrequantumKind::CubicNls { quartic, .. } => write!(f, "CubicNls(quartic={quartic})"),
            PrequantumKind::Bilinear { quartic, .. } => write!(f, "Bilinear(quartic={quartic})"),
            PrequantumKind::LogNls {
                b_over_ep,
                log_scale,
                ..
            } => write!(f, "LogNls(b/E_P={b_over_ep}, scale={log_scale})"),
            PrequantumKind::GeneralF { .. } => write!(f, "GeneralF"),
        }
    }
}

/// Rescale a Hamilton function of the Psi-field into the prequantum
/// psi-field form.
pub fn prequantum_form(
    h_q: &Hamiltonian,
    alpha: f64,
    e_p: f64,
) -> Result<PrequantumHamiltonian, DynamicsError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(DynamicsError::BadParameter(format!(
            "dispersion must be positive, got {alpha}"
        )));
    }
    if !(e_p > 0.0 && e_p.is_finite()) {
        return Err(DynamicsError::BadParameter(format!(
            "energy scale must be positive, got {e_p}"
        )));
    }
    let kind = match h_q {
        Hamiltonian::Quadratic { h } => PrequantumKind::Quadratic {
            h_over_ep: h.scale(1.0 / e_p),
        },
        Hamiltonian::CubicNls { alpha_c, v } => PrequantumKind::CubicNls {
            v_over_ep: v / e_p,
            quartic: alpha_c / (alpha * e_p),
        },
        Hamiltonian::Bilinear {
            hlin,
            alpha_c,
            g1,
            g2,
        } => PrequantumKind::Bilinear {
            hlin_over_ep: hlin.scale(1.0 / e_p),
            quartic: alpha_c / (alpha * e_p),
            g1: g1.clone(),
            g2: g2.clone(),
        },
        Hamiltonian::LogNls { b, a, v } => PrequantumKind::LogNls {
            b_over_ep: b / e_p,
            log_scale: a * a * a / alpha,
            v_over_ep: v / e_p,
        },
        Hamiltonian::GeneralF { v, f } => {
            let f = f.clone();
            let a = alpha;
            PrequantumKind::GeneralF {
                v_over_ep: v / e_p,
                f_pre: Arc::new(move |s| f(s / a) / e_p),
            }
        }
    };
    Ok(PrequantumHamiltonian { alpha, e_p, kind })
}

impl PrequantumHamiltonian {
    /// Invert the rescaling back to the Psi-field Hamilton function.
    pub fn quantum_form(&self) -> Hamiltonian {
        let (alpha, e_p) = (self.alpha, self.e_p);
        match &self.kind {
            PrequantumKind::Quadratic { h_over_ep } => Hamiltonian::Quadratic {
                h: h_over_ep.scale(e_p),
            },
            PrequantumKind::CubicNls { v_over_ep, quartic } => Hamiltonian::CubicNls {
                alpha_c: quartic * alpha * e_p,
                v: v_over_ep * e_p,
            },
            PrequantumKind::Bilinear {
                hlin_over_ep,
                quartic,
                g1,
                g2,
            } => Hamiltonian::Bilinear {
                hlin: hlin_over_ep.scale(e_p),
                alpha_c: quartic * alpha * e_p,
                g1: g1.clone(),
                g2: g2.clone(),
            },
            PrequantumKind::LogNls {
                b_over_ep,
                log_scale,
                v_over_ep,
            } => Hamiltonian::LogNls {
                b: b_over_ep * e_p,
                a: (log_scale * alpha).cbrt(),
                v: v_over_ep * e_p,
            },
            PrequantumKind::GeneralF { v_over_ep, f_pre } => {
                let f_pre = f_pre.clone();
                Hamiltonian::GeneralF {
                    v: v_over_ep * e_p,
                    f: Arc::new(move |q| f_pre(q * alpha) * e_p),
                }
            }
        }
    }

    /// Evaluate the prequantum energy directly from the transformed
    /// coefficients. Satisfies energy_psi(psi) =
    /// (alpha/E_P) energy(H_Q, psi/sqrt(alpha)).
    pub fn energy_psi(&self, space: &PhaseSpace, psi: &Field) -> Result<f64, DynamicsError> {
        check_field(space, psi)?;
        let kinetic_and_local =
            |v: &DVector<f64>, u: &dyn Fn(f64) -> f64| -> Result<f64, DynamicsError> {
                if v.len() != space.n() {
                    return Err(DynamicsError::BadParameter(format!(
                        "potential has {} sites, grid has {}",
                        v.len(),
                        space.n()
                    )));
                }
                let grid = SpectralGrid::new(space)?;
                let mut local = 0.0;
                for (z, &vx) in psi.iter().zip(v.iter()) {
                    let s = z.norm_sqr();
                    local += 0.5 * vx * s + u(s);
                }
                Ok(grid.kinetic_energy(psi)? / self.e_p + space.site_weight() * local)
            };
        let e = match &self.kind {
            PrequantumKind::Quadratic { h_over_ep } => {
                let m_psi = h_over_ep.to_complex_operator().apply(psi)?;
                0.5 * psi.dotc(&m_psi).re
            }
            PrequantumKind::CubicNls { v_over_ep, quartic } => {
                kinetic_and_local(v_over_ep, &|s| 0.25 * quartic * s * s)?
            }
            PrequantumKind::Bilinear {
                hlin_over_ep,
                quartic,
                g1,
                g2,
            } => {
                let lin_psi = hlin_over_ep.to_complex_operator().apply(psi)?;
                let x1 = psi.dotc(&g1.to_complex_operator().apply(psi)?).re;
                let x2 = psi.dotc(&g2.to_complex_operator().apply(psi)?).re;
                0.5 * psi.dotc(&lin_psi).re + 0.25 * quartic * x1 * x2
            }
            PrequantumKind::LogNls {
                b_over_ep,
                log_scale,
                v_over_ep,
            } => kinetic_and_local(v_over_ep, &|s| {
                0.5 * b_over_ep * s * ((log_scale * s).max(LOG_FLOOR).ln() - 1.0)
            })?,
            PrequantumKind::GeneralF { v_over_ep, f_pre } => {
                kinetic_and_local(v_over_ep, &|s| 0.5 * integral_to(f_pre.as_ref(), s))?
            }
        };
        if !e.is_finite() {
            return Err(DynamicsError::NonFiniteResult {
                kind: "prequantum",
                what: "energy",
            });
        }
        Ok(e)
    }
}

/// Piecewise-linear interpolant of uniform samples of F on [0, s_max],
/// extended past s_max with the last segment's slope. The JSON route for
/// general-F nonlinearities.
pub fn sampled_nonlinearity(s_max: f64, values: Vec<f64>) -> Result<LocalNonlinearity, DynamicsError> {
    if !(s_max > 0.0 && s_max.is_finite()) {
        return Err(DynamicsError::BadParameter(format!(
            "table range must be positive, got {s_max}"
        )));
    }
    if values.len() < 2 {
        return Err(DynamicsError::BadParameter(format!(
            "table needs at least 2 samples, got {}",
            values.len()
        )));
    }
    if !values.iter().all(|x| x.is_finite()) {
        return Err(DynamicsError::BadParameter(
            "table has non-finite samples".into(),
        ));
    }
    let step = s_max / (values.len() - 1) as f64;
    Ok(Arc::new(move |s: f64| {
        let last = values.len() - 1;
        let pos = (s / step).max(0.0);
        let i = (pos.floor() as usize).min(last - 1);
        let frac = pos - i as f64;
        values[i] + frac * (values[i + 1] - values[i])
    }))
}

/// JSON form of a Hamiltonian. The general-F kind takes a sampled table;
/// omitted potentials default to zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HamiltonianSchema {
    Quadratic {
        h: OperatorSchema,
    },
    CubicNls {
        alpha_c: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        v: Option<Vec<f64>>,
    },
    Bilinear {
        hlin: OperatorSchema,
        alpha_c: f64,
        g1: OperatorSchema,
        g2: OperatorSchema,
    },
    LogNls {
        b: f64,
        a: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        v: Option<Vec<f64>>,
    },
    GeneralF {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        v: Option<Vec<f64>>,
        table: FunctionTable,
    },
}

/// Uniform samples of F on [0, s_max].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionTable {
    pub s_max: f64,
    pub values: Vec<f64>,
}

impl HamiltonianSchema {
    pub fn resolve(&self, space: &PhaseSpace) -> Result<Hamiltonian, DynamicsError> {
        let n = space.n();
        let potential = |v: &Option<Vec<f64>>| match v {
            None => DVector::zeros(n),
            Some(values) => DVector::from_row_slice(values),
        };
        let h = match self {
            HamiltonianSchema::Quadratic { h } => Hamiltonian::Quadratic { h: h.resolve(n)? },
            HamiltonianSchema::CubicNls { alpha_c, v } => Hamiltonian::CubicNls {
                alpha_c: *alpha_c,
                v: potential(v),
            },
            HamiltonianSchema::Bilinear {
                hlin,
                alpha_c,
                g1,
                g2,
            } => Hamiltonian::Bilinear {
                hlin: hlin.resolve(n)?,
                alpha_c: *alpha_c,
                g1: g1.resolve(n)?,
                g2: g2.resolve(n)?,
            },
            HamiltonianSchema::LogNls { b, a, v } => Hamiltonian::LogNls {
                b: *b,
                a: *a,
                v: potential(v),
            },
            HamiltonianSchema::GeneralF { v, table } => Hamiltonian::GeneralF {
                v: potential(v),
                f: sampled_nonlinearity(table.s_max, table.values.clone())?,
            },
        };
        h.validate(space)?;
        Ok(h)
    }
}
