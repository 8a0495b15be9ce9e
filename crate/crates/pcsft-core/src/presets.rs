//! Canonical ready-made instances: deterministic variable/state pairs and
//! initial fields for demonstrations and regression baselines.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{DynamicsError, Hamiltonian};
use crate::phase_space::{Field, PhaseSpace, Representation, SymplecticOperator};
use crate::spectral::grid_coordinates;
use crate::states::DensityOperator;
use crate::variables::{ClassicalVariable, Term};

/// Default dispersion grid: five points spaced geometrically from 1e-1 down
/// to 1e-4.
pub fn default_alphas() -> Vec<f64> {
    (0..5).map(|i| 10f64.powf(-1.0 - 0.75 * i as f64)).collect()
}

/// A deterministic quadratic-plus-quartic variable with a matching density
/// operator on n = 3.
pub struct QuarticDemo {
    pub variable: ClassicalVariable,
    pub density: DensityOperator,
    pub alphas: Vec<f64>,
}

/// Built fresh from a fixed generator seed, so every call returns the same
/// instance. The quartic factors sit on a positive identity shift: their
/// traces against any density operator then stay bounded away from zero, so
/// the second-order remainder stands clear of Monte Carlo noise over
/// [`default_alphas`] at moderate sample counts.
pub fn quartic_demo() -> QuarticDemo {
    let n = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_DE30);
    let shift = SymplecticOperator::identity(n).scale(9.0);
    let a = SymplecticOperator::random(n, &mut rng);
    let g1 = SymplecticOperator::random(n, &mut rng).add(&shift).unwrap();
    let g2 = SymplecticOperator::random(n, &mut rng).add(&shift).unwrap();
    let density = DensityOperator::random(n, &mut rng);
    let variable = ClassicalVariable::new(
        n,
        vec![
            Term::Quadratic {
                coeff: 0.5,
                op: a,
            },
            Term::FactoredQuartic {
                coeff: 0.25,
                g1,
                g2,
            },
        ],
    )
    .expect("fixed demo terms are well formed");
    QuarticDemo {
        variable,
        density,
        alphas: default_alphas(),
    }
}

fn require_line(space: &PhaseSpace) -> Result<(), DynamicsError> {
    match space.representation() {
        Representation::SpatialGrid { dim: 1, .. } => Ok(()),
        _ => Err(DynamicsError::BadParameter(
            "field presets need a one-dimensional grid".into(),
        )),
    }
}

fn box_length(space: &PhaseSpace) -> f64 {
    match *space.representation() {
        Representation::SpatialGrid { box_length, .. } => box_length,
        Representation::AbstractBasis => unreachable!("checked by require_line"),
    }
}

/// A e^{ikx} with k the given integer mode of the box.
pub fn plane_wave(space: &PhaseSpace, mode: i64, amplitude: f64) -> Result<Field, DynamicsError> {
    require_line(space)?;
    if !(amplitude.is_finite() && amplitude > 0.0) {
        return Err(DynamicsError::BadParameter(format!(
            "amplitude must be positive, got {amplitude}"
        )));
    }
    let k = 2.0 * std::f64::consts::PI * mode as f64 / box_length(space);
    let coords = grid_coordinates(space)?;
    Ok(Field::from_fn(space.n(), |j, _| {
        Complex64::from_polar(amplitude, k * coords[j][0])
    }))
}

/// A Gaussian envelope with a carrier wave:
/// A exp(-(x-center)^2 / (2 width^2)) e^{ikx}.
pub fn gaussian_packet(
    space: &PhaseSpace,
    center: f64,
    width: f64,
    wavenumber: f64,
    amplitude: f64,
) -> Result<Field, DynamicsError> {
    require_line(space)?;
    if !(width.is_finite() && width > 0.0) {
        return Err(DynamicsError::BadParameter(format!(
            "width must be positive, got {width}"
        )));
    }
    let coords = grid_coordinates(space)?;
    Ok(Field::from_fn(space.n(), |j, _| {
        let u = coords[j][0] - center;
        let envelope = amplitude * (-u * u / (2.0 * width * width)).exp();
        Complex64::from_polar(envelope, wavenumber * coords[j][0])
    }))
}

/// The stationary Gaussian profile of the log-nonlinearity with the derived
/// parameters: substituting A e^{-beta (x-c)^2/2} e^{-i mu t} into the
/// equation with V = 0 forces beta = -2b (so b must be negative) and
/// mu = beta/2 + b ln(a^3 A^2). The density profile is then time-invariant
/// and the phase is periodic with period 2 pi / |mu|.
pub struct GaussonPreset {
    pub field: Field,
    pub beta: f64,
    pub mu: f64,
    pub period: f64,
}

pub fn gausson(
    space: &PhaseSpace,
    b: f64,
    a: f64,
    amplitude: f64,
) -> Result<GaussonPreset, DynamicsError> {
    require_line(space)?;
    if !(b.is_finite() && b < 0.0) {
        return Err(DynamicsError::BadParameter(format!(
            "the stationary profile needs a negative log coupling, got {b}"
        )));
    }
    if !(a.is_finite() && a > 0.0) || !(amplitude.is_finite() && amplitude > 0.0) {
        return Err(DynamicsError::BadParameter(
            "scale and amplitude must be positive".into(),
        ));
    }
    let beta = -2.0 * b;
    let mu = 0.5 * beta + b * (a * a * a * amplitude * amplitude).ln();
    if mu == 0.0 {
        return Err(DynamicsError::BadParameter(
            "amplitude sits exactly at zero rotation rate; perturb it".into(),
        ));
    }
    let center = 0.5 * box_length(space);
    let coords = grid_coordinates(space)?;
    let field = Field::from_fn(space.n(), |j, _| {
        let u = coords[j][0] - center;
        Complex64::new(amplitude * (-0.5 * beta * u * u).exp(), 0.0)
    });
    Ok(GaussonPreset {
        field,
        beta,
        mu,
        period: 2.0 * std::f64::consts::PI / mu.abs(),
    })
}

/// Deterministic bilinear system with diagonal linear part and identity
/// quartic factors: every mode keeps its amplitude and advances its phase at
/// omega_k + alpha_c ||Psi0||^2.
pub struct BilinearDemo {
    pub space: PhaseSpace,
    pub hamiltonian: Hamiltonian,
    pub psi0: Field,
    pub omegas: Vec<f64>,
    pub alpha_c: f64,
}

pub fn bilinear_demo() -> BilinearDemo {
    let omegas = vec![0.3, 0.7, -0.4, 0.9];
    let n = omegas.len();
    let space = PhaseSpace::abstract_basis(n).unwrap();
    let hlin = SymplecticOperator::new(
        DMatrix::from_diagonal(&DVector::from_row_slice(&omegas)),
        DMatrix::zeros(n, n),
    )
    .unwrap();
    let hamiltonian = Hamiltonian::Bilinear {
        hlin,
        alpha_c: 0.5,
        g1: SymplecticOperator::identity(n),
        g2: SymplecticOperator::identity(n),
    };
    let psi0 = Field::from_vec(vec![
        Complex64::new(0.5, 0.0),
        Complex64::new(0.0, 0.5),
        Complex64::new(-0.3, 0.2),
        Complex64::new(0.4, 0.0),
    ]);
    BilinearDemo {
        space,
        hamiltonian,
        psi0,
        omegas,
        alpha_c: 0.5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dequantization::isserlis_expectation;
    use crate::states::GaussianState;

    #[test]
    fn alpha_grid_spans_three_decades() {
        let alphas = default_alphas();
        assert_eq!(alphas.len(), 5);
        assert!((alphas[0] - 1e-1).abs() < 1e-15);
        assert!((alphas[4] - 1e-4).abs() < 1e-18);
        for w in alphas.windows(2) {
            assert!((w[1] / w[0] - 10f64.powf(-0.75)).abs() < 1e-12);
        }
    }

    #[test]
    fn demo_is_deterministic() {
        let d1 = quartic_demo();
        let d2 = quartic_demo();
        assert_eq!(d1.density.matrix(), d2.density.matrix());
        let state = GaussianState::from_density_operator(&d1.density, 0.1).unwrap();
        let v1 = isserlis_expectation(&d1.variable, &state).unwrap();
        let v2 = isserlis_expectation(&d2.variable, &state).unwrap();
        assert_eq!(v1, v2);
    }

    #[test]
    fn plane_wave_has_unit_modulus_and_exact_mode() {
        let space = PhaseSpace::spatial_grid(1, 16, 8.0).unwrap();
        let psi = plane_wave(&space, 3, 2.0).unwrap();
        for z in psi.iter() {
            assert!((z.norm() - 2.0).abs() < 1e-14);
        }
        // one full winding per mode across the box
        let total: f64 = (0..16)
            .map(|j| (psi[(j + 1) % 16] / psi[j]).arg())
            .sum();
        assert!((total - 3.0 * 2.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn gausson_parameters_follow_the_ansatz() {
        let space = PhaseSpace::spatial_grid(1, 64, 2.0 * std::f64::consts::PI * 10.0).unwrap();
        let g = gausson(&space, -0.5, 1.0, 1.0).unwrap();
        assert!((g.beta - 1.0).abs() < 1e-15);
        assert!((g.mu - 0.5).abs() < 1e-15);
        assert!((g.period - 4.0 * std::f64::consts::PI).abs() < 1e-12);
        // peak sits mid-box with the requested amplitude
        let peak = g.field.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-12);
        assert!(gausson(&space, 0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn field_presets_need_a_line_grid() {
        let space = PhaseSpace::abstract_basis(8).unwrap();
        assert!(plane_wave(&space, 1, 1.0).is_err());
        let plane = PhaseSpace::spatial_grid(2, 8, 4.0).unwrap();
        assert!(gaussian_packet(&plane, 2.0, 1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn demo_quartic_remainder_is_visible() {
        // the engineered second-order coefficient must be large enough that
        // Monte Carlo runs at moderate counts can resolve it
        let demo = quartic_demo();
        let state = GaussianState::from_density_operator(&demo.density, 1.0).unwrap();
        let quartic = ClassicalVariable::new(
            demo.variable.n(),
            demo.variable
                .terms()
                .iter()
                .filter(|t| matches!(t, Term::FactoredQuartic { .. }))
                .cloned()
                .collect(),
        )
        .unwrap();
        let c = isserlis_expectation(&quartic, &state).unwrap();
        assert!(c.abs() > 15.0, "remainder coefficient {c} too small");
    }
}
