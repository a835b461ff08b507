//! CSV emission for sweep results.
//!
//! Columns, in order: `sweep_param, sweep_value, algorithm, sim_test_mse,
//! sim_network_mse, theory_e_phi, theory_e_omega, theory_e_theta,
//! theory_total, mu_max_mean, mu_max_ms, mu_star, replicas, seed`. Reals are
//! written with 9 significant digits; theory columns are empty when no
//! prediction is available. Files are written to a temporary sibling and
//! renamed into place.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sim::SweepRow;

pub const COLUMNS: [&str; 14] = [
    "sweep_param",
    "sweep_value",
    "algorithm",
    "sim_test_mse",
    "sim_network_mse",
    "theory_e_phi",
    "theory_e_omega",
    "theory_e_theta",
    "theory_total",
    "mu_max_mean",
    "mu_max_ms",
    "mu_star",
    "replicas",
    "seed",
];

/// `%.9g`-style formatting: 9 significant digits, exponent form outside
/// `[1e-5, 1e9)`, trailing zeros trimmed.
pub fn format_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let sci = format!("{:.8e}", x);
    // Rounding can bump the exponent (9.999999999 → 1.00000000e1).
    let (mantissa, e) = sci.split_once('e').unwrap();
    let e: i32 = e.parse().unwrap();
    let _ = exp;
    if !(-5..9).contains(&e) {
        let m = trim_zeros(mantissa);
        return format!("{m}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs());
    }
    let decimals = (8 - e).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_g9).unwrap_or_default()
}

pub fn row_fields(row: &SweepRow) -> Vec<String> {
    let t = row.theory;
    vec![
        row.param.map(|p| p.name().to_string()).unwrap_or_default(),
        if row.value.is_nan() { String::new() } else { format_g9(row.value) },
        row.algorithm.name().to_string(),
        format_g9(row.metrics.steady_test_mse),
        format_g9(row.metrics.network_mse),
        opt(t.map(|t| t.mse.e_phi)),
        opt(t.map(|t| t.mse.e_omega)),
        opt(t.map(|t| t.mse.e_theta)),
        opt(t.map(|t| t.mse.total)),
        opt(t.map(|t| t.mu_max_mean)),
        opt(t.map(|t| t.mu_max_ms)),
        opt(t.map(|t| t.mu_star)),
        row.replicas.to_string(),
        row.seed.to_string(),
    ]
}

pub fn write_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(COLUMNS)?;
    for row in rows {
        w.write_record(row_fields(row))?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(rows: &[SweepRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    String::from_utf8(buf).map_err(|e| Error::Experiment(e.to_string()))
}

/// Writes `contents` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path.file_name().ok_or_else(|| Error::Argument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| -> Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

pub fn write_csv_atomic(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_atomic(path, to_csv_string(rows)?.as_bytes())
}
