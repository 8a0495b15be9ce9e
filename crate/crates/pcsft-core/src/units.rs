//! Dimensional bookkeeping for the prequantum rescaling and the conversion
//! of the experimental nonlinearity bound into a bound on the field
//! dispersion.
//!
//! The prequantum field carries an energy density: |psi(x)|^2 ~ E/L^3, while
//! the normalized wave function has |Psi(x)|^2 ~ 1/L^3. Matching the two
//! through psi = sqrt(alpha) Psi forces the dispersion alpha to carry the
//! dimension of energy, and identifying the log-nonlinearity energy scale b
//! with alpha turns the experimental bound |b| <= 1e-15 eV directly into an
//! upper bound on alpha.
//!
//! Dimensions are tracked as half-integer exponent vectors over
//! (energy, length, time) and verified per Hamiltonian term, not per
//! evaluation.

use std::fmt;

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::dynamics::{PrequantumHamiltonian, PrequantumKind};

#[derive(Debug, Error, PartialEq)]
pub enum UnitError {
    #[error("bound must be nonnegative, got {got}")]
    NegativeBound { got: f64 },
    #[error("constant must be positive and finite: {0}")]
    BadConstant(String),
    #[error("dimension checking needs a physical-mode unit system")]
    NeedsPhysicalMode,
    #[error("quarter-integer exponents are not representable: sqrt of {0}")]
    FractionalPower(Dimension),
    #[error("term `{term}` has dimension {dimension}, expected {expected}")]
    Mismatch {
        term: String,
        dimension: Dimension,
        expected: Dimension,
    },
}

/// Exponent vector over (energy, length, time), stored as doubled integers
/// so field amplitudes with half-integer exponents stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dimension {
    energy_2: i32,
    length_2: i32,
    time_2: i32,
}

impl Dimension {
    pub const DIMENSIONLESS: Self = Self {
        energy_2: 0,
        length_2: 0,
        time_2: 0,
    };
    pub const ENERGY: Self = Self {
        energy_2: 2,
        length_2: 0,
        time_2: 0,
    };
    pub const LENGTH: Self = Self {
        energy_2: 0,
        length_2: 2,
        time_2: 0,
    };
    pub const TIME: Self = Self {
        energy_2: 0,
        length_2: 0,
        time_2: 2,
    };

    pub fn powi(self, k: i32) -> Self {
        Self {
            energy_2: self.energy_2 * k,
            length_2: self.length_2 * k,
            time_2: self.time_2 * k,
        }
    }

    pub fn sqrt(self) -> Result<Self, UnitError> {
        if self.energy_2 % 2 != 0 || self.length_2 % 2 != 0 || self.time_2 % 2 != 0 {
            return Err(UnitError::FractionalPower(self));
        }
        Ok(Self {
            energy_2: self.energy_2 / 2,
            length_2: self.length_2 / 2,
            time_2: self.time_2 / 2,
        })
    }

    pub fn is_dimensionless(self) -> bool {
        self == Self::DIMENSIONLESS
    }
}

fn exponent_part(symbol: &str, doubled: i32) -> Option<String> {
    match doubled {
        0 => None,
        2 => Some(symbol.to_string()),
        d if d % 2 == 0 => Some(format!("{symbol}^{}", d / 2)),
        d => Some(format!("{symbol}^{d}/2")),
    }
}

impl std::ops::Mul for Dimension {
    type Output = Self;
    fn mul(self, other: Self) -> Self {
        Self {
            energy_2: self.energy_2 + other.energy_2,
            length_2: self.length_2 + other.length_2,
            time_2: self.time_2 + other.time_2,
        }
    }
}

impl std::ops::Div for Dimension {
    type Output = Self;
    fn div(self, other: Self) -> Self {
        self * other.powi(-1)
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = [
            ("E", self.energy_2),
            ("L", self.length_2),
            ("T", self.time_2),
        ]
        .into_iter()
        .filter_map(|(s, d)| exponent_part(s, d))
        .collect();
        if parts.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", parts.join(" "))
        }
    }
}

impl Serialize for Dimension {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Prequantum field density |psi|^2 ~ E/L^3.
pub fn field_density() -> Dimension {
    Dimension::ENERGY / Dimension::LENGTH.powi(3)
}

/// Normalized wave-function density |Psi|^2 ~ 1/L^3.
pub fn probability_density() -> Dimension {
    Dimension::LENGTH.powi(-3)
}

/// Scale inside the prequantum logarithm, a^3/alpha ~ L^3/E; multiplied by
/// the field density it must come out dimensionless.
pub fn log_scale_dimension() -> Dimension {
    Dimension::LENGTH.powi(3) / Dimension::ENERGY
}

/// The logarithm only accepts a dimensionless argument: scale * |psi|^2.
pub fn log_argument_check(scale: Dimension) -> Result<(), UnitError> {
    let argument = scale * field_density();
    if argument.is_dimensionless() {
        Ok(())
    } else {
        Err(UnitError::Mismatch {
            term: "log argument".into(),
            dimension: argument,
            expected: Dimension::DIMENSIONLESS,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitMode {
    Natural,
    Physical,
}

/// Planck energy expressed in electron volts (CODATA 2018):
/// E_P = 1.956... GJ = 1.22089e28 eV.
pub const PLANCK_ENERGY_EV: f64 = 1.220_890e28;

/// Working unit system. Natural mode fixes h = E_P = t_P = 1 and keeps the
/// electron volt only as a conversion factor; physical mode carries all four
/// constants explicitly in whatever internal unit the caller picked.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct UnitSystem {
    pub mode: UnitMode,
    /// Action quantum in internal units.
    pub h: f64,
    /// Planck energy in internal units.
    pub e_p: f64,
    /// Planck time in internal units.
    pub t_p: f64,
    /// One electron volt in internal energy units.
    pub ev: f64,
}

impl UnitSystem {
    pub fn natural() -> Self {
        Self {
            mode: UnitMode::Natural,
            h: 1.0,
            e_p: 1.0,
            t_p: 1.0,
            ev: 1.0 / PLANCK_ENERGY_EV,
        }
    }

    pub fn physical(h: f64, e_p: f64, t_p: f64, ev: f64) -> Result<Self, UnitError> {
        for (name, value) in [("h", h), ("E_P", e_p), ("t_P", t_p), ("eV", ev)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(UnitError::BadConstant(format!("{name} = {value}")));
            }
        }
        Ok(Self {
            mode: UnitMode::Physical,
            h,
            e_p,
            t_p,
            ev,
        })
    }

    pub fn energy_in_ev(&self, internal: f64) -> f64 {
        internal / self.ev
    }

    pub fn energy_from_ev(&self, ev_value: f64) -> f64 {
        ev_value * self.ev
    }
}

/// The dispersion bound inherited from the experimental bound on the
/// log-nonlinearity energy scale, under the identification b = alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaBound {
    /// Upper bound on the field dispersion, in eV.
    pub upper_bound_ev: f64,
    /// Caveat carried with every conversion.
    pub note: &'static str,
}

impl Serialize for AlphaBound {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_struct("AlphaBound", 2)?;
        m.serialize_field("upper_bound_ev", &self.upper_bound_ev)?;
        m.serialize_field("note", self.note)?;
        m.end()
    }
}

pub const ALPHA_BOUND_NOTE: &str =
    "upper bound only: the dispersion could be essentially smaller";

/// b = alpha maps the experimental bound on the nonlinearity scale b
/// (in eV) identically onto a bound for the dispersion alpha (in eV).
pub fn alpha_bound_from_b(b_bound_ev: f64) -> Result<AlphaBound, UnitError> {
    if !(b_bound_ev >= 0.0) || !b_bound_ev.is_finite() {
        return Err(UnitError::NegativeBound { got: b_bound_ev });
    }
    Ok(AlphaBound {
        upper_bound_ev: b_bound_ev,
        note: ALPHA_BOUND_NOTE,
    })
}

/// One additive term of a Hamilton function with its derived dimension.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermDimension {
    pub term: String,
    pub dimension: Dimension,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionReport {
    pub terms: Vec<TermDimension>,
}

fn expect_energy(terms: &mut Vec<TermDimension>, name: &str, dim: Dimension) -> Result<(), UnitError> {
    if dim != Dimension::ENERGY {
        return Err(UnitError::Mismatch {
            term: name.into(),
            dimension: dim,
            expected: Dimension::ENERGY,
        });
    }
    terms.push(TermDimension {
        term: name.into(),
        dimension: dim,
    });
    Ok(())
}

/// Verify that every additive term of a prequantum Hamilton function comes
/// out in energy units given |psi|^2 ~ E/L^3, and that logarithm arguments
/// are dimensionless. Each coefficient carries the dimension fixed by the
/// rescaling H(psi) = (alpha/E_P) H_Q(psi/sqrt(alpha)):
/// kinetic h^2/(2m E_P) ~ L^2, potential V/E_P ~ 1, quartic coupling
/// alpha_c/(alpha E_P) with alpha_c ~ E L^3 on grids and ~ E on abstract
/// bases, log coefficient b/E_P ~ 1 with scale a^3/alpha ~ L^3/E.
pub fn dimension_check(
    h: &PrequantumHamiltonian,
    units: &UnitSystem,
) -> Result<DimensionReport, UnitError> {
    if units.mode != UnitMode::Physical {
        return Err(UnitError::NeedsPhysicalMode);
    }
    let volume = Dimension::LENGTH.powi(3);
    let density = field_density();
    // one gradient per factor: |grad psi|^2 = |psi|^2 / L^2
    let gradient_density = density / Dimension::LENGTH.powi(2);
    let action = Dimension::ENERGY * Dimension::TIME;
    let mass = Dimension::ENERGY * Dimension::TIME.powi(2) / Dimension::LENGTH.powi(2);
    let kinetic_coeff = action.powi(2) / mass / Dimension::ENERGY;
    let potential_coeff = Dimension::DIMENSIONLESS;
    // discrete inner products carry the volume element
    let field_norm_squared = density * volume;
    let mut terms = Vec::new();
    match &h.kind {
        PrequantumKind::Quadratic { .. } => {
            expect_energy(
                &mut terms,
                "quadratic form",
                potential_coeff * field_norm_squared,
            )?;
        }
        PrequantumKind::CubicNls { .. } => {
            expect_energy(
                &mut terms,
                "kinetic",
                kinetic_coeff * gradient_density * volume,
            )?;
            expect_energy(&mut terms, "potential", potential_coeff * density * volume)?;
            // alpha_c ~ E L^3 so that alpha_c |Psi|^2 is an energy
            let quartic_coeff = Dimension::ENERGY * volume / Dimension::ENERGY.powi(2);
            expect_energy(
                &mut terms,
                "quartic self-interaction",
                quartic_coeff * density.powi(2) * volume,
            )?;
        }
        PrequantumKind::Bilinear { .. } => {
            expect_energy(
                &mut terms,
                "linear form",
                potential_coeff * field_norm_squared,
            )?;
            // alpha_c ~ E against dimensionless abstract quadratic forms
            let quartic_coeff = Dimension::ENERGY / Dimension::ENERGY.powi(2);
            expect_energy(
                &mut terms,
                "mode coupling",
                quartic_coeff * field_norm_squared.powi(2),
            )?;
        }
        PrequantumKind::LogNls { .. } => {
            expect_energy(
                &mut terms,
                "kinetic",
                kinetic_coeff * gradient_density * volume,
            )?;
            expect_energy(&mut terms, "potential", potential_coeff * density * volume)?;
            log_argument_check(log_scale_dimension())?;
            terms.push(TermDimension {
                term: "log argument".into(),
                dimension: Dimension::DIMENSIONLESS,
            });
            // b ~ E divided by E_P, times the dimensionless logarithm
            expect_energy(
                &mut terms,
                "logarithmic self-interaction",
                potential_coeff * density * volume,
            )?;
        }
        PrequantumKind::GeneralF { .. } => {
            expect_energy(
                &mut terms,
                "kinetic",
                kinetic_coeff * gradient_density * volume,
            )?;
            expect_energy(&mut terms, "potential", potential_coeff * density * volume)?;
            // F maps a density to an energy; the prequantum form divides by
            // E_P and integrates the density, which carries E/L^3 per site
            expect_energy(
                &mut terms,
                "local self-interaction",
                potential_coeff * density * volume,
            )?;
        }
    }
    Ok(DimensionReport { terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{prequantum_form, Hamiltonian};
    use crate::phase_space::SymplecticOperator;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn bound_conversion_is_the_identity_on_magnitudes() {
        assert_eq!(alpha_bound_from_b(1e-15).unwrap().upper_bound_ev, 1e-15);
        assert_eq!(alpha_bound_from_b(0.0).unwrap().upper_bound_ev, 0.0);
        assert_eq!(alpha_bound_from_b(3.2e-16).unwrap().upper_bound_ev, 3.2e-16);
        assert!(!alpha_bound_from_b(1e-15).unwrap().note.is_empty());
    }

    #[test]
    fn bound_conversion_is_monotone() {
        let grid = [0.0, 1e-18, 3.2e-16, 1e-15, 2e-15];
        let mapped: Vec<f64> = grid
            .iter()
            .map(|&b| alpha_bound_from_b(b).unwrap().upper_bound_ev)
            .collect();
        assert!(mapped.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn bound_conversion_rejects_bad_input() {
        assert!(matches!(
            alpha_bound_from_b(-1e-16),
            Err(UnitError::NegativeBound { .. })
        ));
        assert!(alpha_bound_from_b(f64::NAN).is_err());
        assert!(alpha_bound_from_b(f64::INFINITY).is_err());
    }

    #[test]
    fn dimension_algebra() {
        let e = Dimension::ENERGY;
        let l = Dimension::LENGTH;
        assert_eq!(e * l / e, l);
        assert_eq!(e.powi(0), Dimension::DIMENSIONLESS);
        assert_eq!(e.powi(2).sqrt().unwrap(), e);
        let density = field_density();
        assert_eq!(density.powi(2).sqrt().unwrap(), density);
        let amplitude = density.sqrt().unwrap();
        assert_eq!(amplitude.powi(2), density);
        // E^1/2 L^-3/2 cannot be halved again
        assert!(amplitude.sqrt().is_err());
        assert!(Dimension::DIMENSIONLESS.is_dimensionless());
        assert!(!e.is_dimensionless());
    }

    #[test]
    fn dimension_display_and_serialization() {
        assert_eq!(Dimension::DIMENSIONLESS.to_string(), "1");
        assert_eq!(Dimension::ENERGY.to_string(), "E");
        assert_eq!(
            (Dimension::ENERGY * Dimension::LENGTH.powi(-3)).to_string(),
            "E L^-3"
        );
        let amplitude = field_density().sqrt().unwrap();
        assert_eq!(amplitude.to_string(), "E^1/2 L^-3/2");
        assert_eq!(
            serde_json::to_string(&Dimension::TIME.powi(2)).unwrap(),
            "\"T^2\""
        );
    }

    #[test]
    fn quantum_kinetic_term_carries_energy() {
        // h^2/2m |grad Psi|^2 integrated with |Psi|^2 ~ 1/L^3
        let action = Dimension::ENERGY * Dimension::TIME;
        let mass = Dimension::ENERGY * Dimension::TIME.powi(2) / Dimension::LENGTH.powi(2);
        let term = action.powi(2) / mass * (probability_density() / Dimension::LENGTH.powi(2))
            * Dimension::LENGTH.powi(3);
        assert_eq!(term, Dimension::ENERGY);
    }

    #[test]
    fn log_argument_requires_the_full_scale() {
        assert!(log_argument_check(log_scale_dimension()).is_ok());
        // dropping a^3 leaves 1/alpha ~ 1/E against E/L^3
        let dropped = Dimension::ENERGY.powi(-1);
        match log_argument_check(dropped) {
            Err(UnitError::Mismatch {
                term, dimension, ..
            }) => {
                assert_eq!(term, "log argument");
                assert_eq!(dimension, Dimension::LENGTH.powi(-3));
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn unit_system_constructors() {
        let natural = UnitSystem::natural();
        assert_eq!(natural.mode, UnitMode::Natural);
        assert_eq!((natural.h, natural.e_p, natural.t_p), (1.0, 1.0, 1.0));
        let ev_in_natural = natural.ev;
        assert!((natural.energy_in_ev(1.0) - PLANCK_ENERGY_EV).abs() / PLANCK_ENERGY_EV < 1e-12);
        assert!((natural.energy_from_ev(PLANCK_ENERGY_EV) - 1.0).abs() < 1e-12);
        assert!(ev_in_natural > 0.0);
        assert!(UnitSystem::physical(1.0, 1.0, 1.0, 1.0).is_ok());
        assert!(matches!(
            UnitSystem::physical(0.0, 1.0, 1.0, 1.0),
            Err(UnitError::BadConstant(_))
        ));
        assert!(UnitSystem::physical(1.0, -2.0, 1.0, 1.0).is_err());
        assert!(UnitSystem::physical(1.0, 1.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn every_kind_passes_the_dimension_check_in_physical_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let physical = UnitSystem::physical(1.0, 2.5, 1.0, 1.0).unwrap();
        let kinds = vec![
            Hamiltonian::Quadratic {
                h: SymplecticOperator::random(3, &mut rng),
            },
            Hamiltonian::CubicNls {
                alpha_c: 0.5,
                v: DVector::zeros(8),
            },
            Hamiltonian::Bilinear {
                hlin: SymplecticOperator::random(3, &mut rng),
                alpha_c: 0.4,
                g1: SymplecticOperator::identity(3),
                g2: SymplecticOperator::identity(3),
            },
            Hamiltonian::LogNls {
                b: -0.5,
                a: 1.0,
                v: DVector::zeros(8),
            },
            Hamiltonian::GeneralF {
                v: DVector::zeros(8),
                f: Arc::new(|q| q),
            },
        ];
        for h in &kinds {
            let pre = prequantum_form(h, 0.3, physical.e_p).unwrap();
            let report = dimension_check(&pre, &physical).unwrap();
            assert!(!report.terms.is_empty());
            for t in &report.terms {
                if t.term == "log argument" {
                    assert!(t.dimension.is_dimensionless());
                } else {
                    assert_eq!(t.dimension, Dimension::ENERGY, "term {}", t.term);
                }
            }
        }
    }

    #[test]
    fn dimension_check_requires_physical_mode() {
        let natural = UnitSystem::natural();
        let h = Hamiltonian::Quadratic {
            h: SymplecticOperator::identity(2),
        };
        let pre = prequantum_form(&h, 0.5, 1.0).unwrap();
        assert_eq!(
            dimension_check(&pre, &natural),
            Err(UnitError::NeedsPhysicalMode)
        );
    }

    #[test]
    fn report_serializes_with_term_names() {
        let physical = UnitSystem::physical(1.0, 1.0, 1.0, 1.0).unwrap();
        let h = Hamiltonian::LogNls {
            b: -0.5,
            a: 1.0,
            v: DVector::zeros(4),
        };
        let pre = prequantum_form(&h, 0.2, 1.0).unwrap();
        let report = dimension_check(&pre, &physical).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"kinetic\""));
        assert!(json.contains("\"E\""));
    }
}
