//! Helpers shared by the binary-driving integration tests: spawning the
//! executable with a clean environment, writing config files, and parsing
//! the snapshot container.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use num_complex::Complex64;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pcsft")
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Run the executable with the worker-pool variable scrubbed unless the
/// caller sets it, so ambient shell state cannot leak into assertions.
pub fn run(args: &[&str], envs: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    cmd.env_remove("PCSFT_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("executable should spawn");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).expect("config should be writable");
    path
}

pub fn read_text(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&read_text(path))
        .unwrap_or_else(|e| panic!("{} is not valid JSON: {e}", path.display()))
}

/// One sampled state from a snapshot container.
pub struct Snapshot {
    pub time: f64,
    pub field: Vec<Complex64>,
}

pub struct SnapshotFile {
    pub dim: u32,
    pub points: u32,
    pub field_len: u32,
    pub stride: u32,
    pub records: Vec<Snapshot>,
}

/// Parse the binary snapshot container: magic "PCSS", seven little-endian
/// u32 header words, then per-record f64 time + interleaved (re, im) pairs.
pub fn read_snapshots(path: &Path) -> SnapshotFile {
    let bytes = std::fs::read(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    assert_eq!(&bytes[..4], b"PCSS", "snapshot magic");
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let f64_at = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let version = u32_at(4);
    assert_eq!(version, 1, "snapshot container version");
    let dim = u32_at(8);
    let points = u32_at(12);
    let field_len = u32_at(16) as usize;
    let dtype = u32_at(20);
    assert_eq!(dtype, 1, "snapshot dtype should be complex128");
    let stride = u32_at(24);
    let count = u32_at(28) as usize;
    let record = 8 + field_len * 16;
    let mut off = 32;
    assert_eq!(bytes.len(), off + count * record, "snapshot byte length");
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let time = f64_at(off);
        let mut field = Vec::with_capacity(field_len);
        for j in 0..field_len {
            let re = f64_at(off + 8 + 16 * j);
            let im = f64_at(off + 16 + 16 * j);
            field.push(Complex64::new(re, im));
        }
        records.push(Snapshot { time, field });
        off += record;
    }
    SnapshotFile {
        dim,
        points,
        field_len: field_len as u32,
        stride,
        records,
    }
}

/// Relative L2 distance between two complex fields.
pub fn rel_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}
