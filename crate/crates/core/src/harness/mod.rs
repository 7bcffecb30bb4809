//! Configuration, experiment runs, timing benchmarks and CSV output.

pub mod bench;
pub mod config;
pub mod experiment;
pub mod report;

use std::path::Path;

use crate::error::{Error, Result};

pub use bench::{run_bench, write_bench, BenchConfig, BenchRecord};
pub use config::{output_root, ConfigFile, ExperimentConfig, OUTPUT_ROOT_ENV};
pub use experiment::{run_experiment, run_seed, write_bounds, RunSummary, SeedRun};
pub use report::{quantile, report};

/// Version written to `manifest.txt`; bump when a CSV schema changes.
pub const SCHEMA_VERSION: u32 = 1;

/// Fixed-precision, locale-independent float (12 significant digits);
/// `None` and non-finite values become an empty field.
pub fn fmt_num(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.11e}"),
        Some(v) if v.is_nan() => String::new(),
        Some(v) => if v > 0.0 { "inf".into() } else { "-inf".into() },
        None => String::new(),
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::input(format!("{}: malformed csv ({other:?})", path.display())),
    }
}

/// Writes `header` and `rows` to `path`.
pub(crate) fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Two-column plot data, `#`-prefixed header.
pub(crate) fn write_dat(path: &Path, x: &str, y: &str, points: &[(f64, f64)]) -> Result<()> {
    let mut out = format!("# {x} {y}\n");
    for &(a, b) in points {
        out.push_str(&format!("{a} {}\n", fmt_num(Some(b))));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(Some(1.0)), "1.00000000000e0");
        assert_eq!(fmt_num(Some(-0.000123456789012345)), "-1.23456789012e-4");
        assert_eq!(fmt_num(None), "");
        assert_eq!(fmt_num(Some(f64::NAN)), "");
    }
}
