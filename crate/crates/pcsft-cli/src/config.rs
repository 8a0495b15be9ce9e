//! Shared config plumbing: the error-to-exit-code contract, the global
//! config envelope (seed, output directory, precision), and the manifest
//! written next to every run's outputs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Failure classes mapped to exit codes: usage and schema problems exit 2,
/// statistically inconclusive results exit 3, numerical failures exit 4.
#[derive(Debug)]
pub enum AppError {
    Usage(String),
    Inconclusive(String),
    Numerical(String),
}

impl AppError {
    pub fn code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 2,
            AppError::Inconclusive(_) => 3,
            AppError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Usage(m) => write!(f, "{m}"),
            AppError::Inconclusive(m) => write!(f, "inconclusive: {m}"),
            AppError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Usage(format!("io error: {e}"))
    }
}

pub fn usage(e: impl fmt::Display) -> AppError {
    AppError::Usage(e.to_string())
}

/// Numeric precision of the engine. The schema admits both widths for
/// forward compatibility; only f64 computation is implemented, so f32
/// configs are rejected as a usage error.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Global fields every experiment config carries, flattened into each
/// command schema. Command-line `--seed` and `--out` override these.
#[derive(Debug, Clone, Deserialize)]
pub struct Globals {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub precision: Precision,
}

impl Default for Globals {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: default_output_dir(),
            precision: Precision::F64,
        }
    }
}

/// A config file loaded from disk, keeping the raw bytes for hashing.
pub struct LoadedConfig {
    pub sha256: String,
    bytes: Vec<u8>,
}

impl LoadedConfig {
    pub fn read(path: &Path) -> Result<Self, AppError> {
        let bytes = fs::read(path)
            .map_err(|e| AppError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let sha256 = format!("{:x}", Sha256::digest(&bytes));
        Ok(Self { sha256, bytes })
    }

    pub fn parse<T: serde::de::DeserializeOwned>(&self) -> Result<T, AppError> {
        serde_json::from_slice(&self.bytes)
            .map_err(|e| AppError::Usage(format!("config schema error: {e}")))
    }
}

/// Effective run settings after applying command-line overrides.
pub struct RunSettings {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub config_sha256: String,
}

impl RunSettings {
    pub fn new(
        globals: &Globals,
        config: &LoadedConfig,
        seed_override: Option<u64>,
        out_override: Option<PathBuf>,
    ) -> Result<Self, AppError> {
        if globals.precision == Precision::F32 {
            return Err(AppError::Usage(
                "precision \"f32\" is not supported; computation is f64 only".into(),
            ));
        }
        Ok(Self {
            seed: seed_override.unwrap_or(globals.seed),
            out_dir: out_override.unwrap_or_else(|| globals.output_dir.clone()),
            config_sha256: config.sha256.clone(),
        })
    }

    pub fn prepare_out_dir(&self) -> Result<(), AppError> {
        fs::create_dir_all(&self.out_dir).map_err(|e| {
            AppError::Usage(format!(
                "cannot create output directory {}: {e}",
                self.out_dir.display()
            ))
        })
    }

    /// Reproducibility record: hash of the config file, effective seed, and
    /// the library version that produced the outputs.
    pub fn write_manifest(&self) -> Result<(), AppError> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            config_sha256: &'a str,
            seed: u64,
            version: &'a str,
        }
        let manifest = Manifest {
            config_sha256: &self.config_sha256,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION"),
        };
        let path = self.out_dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest).map_err(usage)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(())
    }

    pub fn write_file(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, AppError> {
        let path = self.out_dir.join(name);
        fs::write(&path, bytes)?;
        Ok(path)
    }
}
