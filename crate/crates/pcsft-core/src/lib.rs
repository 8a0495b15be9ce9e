//! Numerical laboratory for prequantum classical statistical field theory:
//! Gaussian ensembles of classical fields on finite-dimensional phase spaces,
//! the dequantization maps connecting their averages to density operators and
//! Hermitian observables, and the Hamilton-Schrodinger dynamics family.

// Negated comparisons like `!(x > 0.0)` are deliberate throughout: they treat
// NaN as out of range, where the suggested positive form would let it through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dequantization;
pub mod dynamics;
pub mod phase_space;
pub mod presets;
pub mod spectral;
pub mod states;
pub mod units;
pub mod variables;

/// Float formatting for CSV and key=value outputs: Rust's shortest
/// round-tripping scientific form, with zero printed as plain "0".
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x:e}")
    }
}
