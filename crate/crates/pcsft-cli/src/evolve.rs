//! `evolve`: integrate one Hamilton-Schrodinger trajectory and judge the
//! conserved quantities. Grid kinds run the split-step integrator; the
//! abstract-basis kinds run implicit midpoint.

use std::path::PathBuf;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use pcsft_core::dynamics::{
    evolve_bilinear, evolve_splitstep, DynamicsError, HamiltonianSchema, Trajectory,
};
use pcsft_core::phase_space::{Field, PhaseSpace};
use pcsft_core::presets::{gaussian_packet, gausson, plane_wave};

use crate::config::{usage, AppError, Globals, Precision, RunSettings};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    precision: Precision,
    space: SpaceSchema,
    hamiltonian: HamiltonianSchema,
    psi0: Psi0Schema,
    dt: f64,
    t_end: f64,
    #[serde(default = "default_stride")]
    sample_stride: usize,
    #[serde(default = "default_norm_tolerance")]
    norm_tolerance: f64,
    #[serde(default = "default_energy_tolerance")]
    energy_tolerance: f64,
    #[serde(default)]
    snapshots: bool,
}

fn default_stride() -> usize {
    100
}

fn default_norm_tolerance() -> f64 {
    1e-8
}

fn default_energy_tolerance() -> f64 {
    1e-6
}

impl EvolveConfig {
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

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SpaceSchema {
    Grid {
        dim: u8,
        points: usize,
        box_length: f64,
    },
    Abstract {
        n: usize,
    },
}

impl SpaceSchema {
    fn resolve(&self) -> Result<PhaseSpace, AppError> {
        match *self {
            SpaceSchema::Grid {
                dim,
                points,
                box_length,
            } => PhaseSpace::spatial_grid(dim, points, box_length).map_err(usage),
            SpaceSchema::Abstract { n } => PhaseSpace::abstract_basis(n).map_err(usage),
        }
    }
}

/// Initial field: a bundled analytic preset or a JSON file holding an array
/// of [re, im] pairs.
#[derive(Debug, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Psi0Schema {
    PlaneWave {
        mode: i64,
        amplitude: f64,
    },
    Gaussian {
        center: f64,
        width: f64,
        wavenumber: f64,
        amplitude: f64,
    },
    /// Soliton profile of the log-nonlinearity; pulls b and a from the
    /// configured Hamiltonian.
    Gausson {
        amplitude: f64,
    },
    File {
        path: PathBuf,
    },
}

impl Psi0Schema {
    fn resolve(
        &self,
        space: &PhaseSpace,
        hamiltonian: &HamiltonianSchema,
    ) -> Result<Field, AppError> {
        match self {
            Psi0Schema::PlaneWave { mode, amplitude } => {
                plane_wave(space, *mode, *amplitude).map_err(usage)
            }
            Psi0Schema::Gaussian {
                center,
                width,
                wavenumber,
                amplitude,
            } => gaussian_packet(space, *center, *width, *wavenumber, *amplitude).map_err(usage),
            Psi0Schema::Gausson { amplitude } => {
                let HamiltonianSchema::LogNls { b, a, .. } = hamiltonian else {
                    return Err(AppError::Usage(
                        "the gausson preset needs a log-nls hamiltonian to read b and a".into(),
                    ));
                };
                Ok(gausson(space, *b, *a, *amplitude).map_err(usage)?.field)
            }
            Psi0Schema::File { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    AppError::Usage(format!("cannot read psi0 file {}: {e}", path.display()))
                })?;
                let pairs: Vec<[f64; 2]> = serde_json::from_str(&text)
                    .map_err(|e| AppError::Usage(format!("psi0 file schema error: {e}")))?;
                if pairs.len() != space.n() {
                    return Err(AppError::Usage(format!(
                        "psi0 file holds {} entries, space has {}",
                        pairs.len(),
                        space.n()
                    )));
                }
                Ok(DVector::from_iterator(
                    pairs.len(),
                    pairs.iter().map(|p| Complex64::new(p[0], p[1])),
                ))
            }
        }
    }
}

#[derive(Debug, Serialize)]
struct EvolveReport {
    integrator: &'static str,
    steps: usize,
    dt: f64,
    norm_drift: f64,
    energy_drift: f64,
    norm_tolerance: f64,
    energy_tolerance: f64,
    pass: bool,
}

fn map_dynamics(e: DynamicsError) -> AppError {
    match e {
        DynamicsError::BlowUp { .. }
        | DynamicsError::MidpointStalled { .. }
        | DynamicsError::NonFiniteResult { .. } => AppError::Numerical(e.to_string()),
        other => AppError::Usage(other.to_string()),
    }
}

pub fn run(config: EvolveConfig, settings: &RunSettings) -> Result<(), AppError> {
    if !(config.dt > 0.0 && config.dt.is_finite()) {
        return Err(AppError::Usage(format!(
            "dt must be positive and finite, got {}",
            config.dt
        )));
    }
    if !(config.t_end > 0.0 && config.t_end.is_finite()) {
        return Err(AppError::Usage(format!(
            "t_end must be positive and finite, got {}",
            config.t_end
        )));
    }
    let steps = (config.t_end / config.dt).round() as usize;
    if steps == 0 {
        return Err(AppError::Usage(format!(
            "t_end {} spans no steps at dt {}",
            config.t_end, config.dt
        )));
    }
    let space = config.space.resolve()?;
    let hamiltonian = config.hamiltonian.resolve(&space).map_err(usage)?;
    let psi0 = config.psi0.resolve(&space, &config.hamiltonian)?;

    let (integrator, result): (&'static str, Result<Trajectory, DynamicsError>) =
        if hamiltonian.is_grid_kind() {
            (
                "split-step",
                evolve_splitstep(
                    &hamiltonian,
                    &space,
                    &psi0,
                    config.dt,
                    steps,
                    config.sample_stride,
                ),
            )
        } else {
            (
                "implicit midpoint",
                evolve_bilinear(
                    &hamiltonian,
                    &space,
                    &psi0,
                    config.dt,
                    steps,
                    config.sample_stride,
                ),
            )
        };

    settings.prepare_out_dir()?;
    settings.write_manifest()?;
    let trajectory = result.map_err(map_dynamics)?;

    let mut csv = Vec::new();
    trajectory.write_csv(&mut csv)?;
    settings.write_file("trajectory.csv", &csv)?;
    if config.snapshots {
        let mut bin = Vec::new();
        trajectory.write_snapshots(&space, &mut bin)?;
        settings.write_file("snapshots.bin", &bin)?;
    }

    let norm_drift = trajectory.max_norm_drift();
    let energy_drift = trajectory.max_energy_drift();
    let pass = norm_drift <= config.norm_tolerance && energy_drift <= config.energy_tolerance;
    let report = EvolveReport {
        integrator,
        steps,
        dt: config.dt,
        norm_drift,
        energy_drift,
        norm_tolerance: config.norm_tolerance,
        energy_tolerance: config.energy_tolerance,
        pass,
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(usage)?;
    text.push('\n');
    settings.write_file("report.json", text.as_bytes())?;
    println!("{integrator}: {steps} steps, norm drift {norm_drift:.3e}, energy drift {energy_drift:.3e}");
    if pass {
        Ok(())
    } else {
        Err(AppError::Numerical(format!(
            "drift outside tolerance: norm {norm_drift:.3e} (tol {:.1e}), energy {energy_drift:.3e} (tol {:.1e})",
            config.norm_tolerance, config.energy_tolerance
        )))
    }
}
