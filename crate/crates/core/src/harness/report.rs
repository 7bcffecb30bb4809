//! Text summary of an output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::csv_error;

/// Linear-interpolation quantile of sorted data (the spreadsheet
/// `QUARTILE.INC` rule). `NaN` for empty input.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

type Table = (Vec<String>, Vec<Vec<String>>);

fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

const FINAL_COLUMNS: [&str; 8] = [
    "batches",
    "j_before",
    "j_after",
    "j_independent",
    "j_mc",
    "alpha_agent_max",
    "distill_kl_mean",
    "dependence_auc",
];

fn seed_dirs(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(k) = name.strip_prefix("seed_").and_then(|k| k.parse::<u64>().ok()) {
            if entry.path().is_dir() {
                out.push((k, entry.path()));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn stats(values: &mut [f64]) -> (f64, f64, f64) {
    values.sort_by(f64::total_cmp);
    (quantile(values, 0.5), quantile(values, 0.25), quantile(values, 0.75))
}

/// Final-round medians and IQRs over seeds, the bound roll-up and the
/// bench table, for whichever of them `dir` contains.
pub fn report(dir: &Path) -> Result<String> {
    if !dir.is_dir() {
        return Err(Error::input(format!("{} is not a directory", dir.display())));
    }
    let seeds = seed_dirs(dir)?;
    let bounds = dir.join("bounds.csv");
    let bench = dir.join("bench.csv");
    let missing: Vec<String> = seeds
        .iter()
        .map(|(_, p)| p.join("metrics.csv"))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::input(format!("missing files: {}", missing.join(", "))));
    }
    if seeds.is_empty() && !bounds.is_file() && !bench.is_file() {
        return Err(Error::input(format!(
            "no results in {}: missing seed_<k>/metrics.csv, bounds.csv and bench.csv",
            dir.display()
        )));
    }
    let mut out = String::new();
    let _ = writeln!(out, "results in {}", dir.display());
    if !seeds.is_empty() {
        let mut columns: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        let mut rounds = Vec::new();
        for (_, path) in &seeds {
            let file = path.join("metrics.csv");
            let (header, rows) = read_table(&file)?;
            let last = rows.last().ok_or_else(|| Error::input(format!("{} has no data rows", file.display())))?;
            rounds.push(last.first().cloned().unwrap_or_default());
            for name in FINAL_COLUMNS {
                if let Some(i) = header.iter().position(|h| h == name) {
                    if let Ok(v) = last[i].parse::<f64>() {
                        columns.entry(name).or_default().push(v);
                    }
                }
            }
        }
        let names: Vec<String> = seeds.iter().map(|(k, _)| k.to_string()).collect();
        let _ = writeln!(out, "seeds: {} ({})", seeds.len(), names.join(" "));
        let _ = writeln!(out, "final round: {}", rounds.join(" "));
        let _ = writeln!(out, "{:<18} {:>14} {:>14} {:>14}", "metric", "median", "q1", "q3");
        for name in FINAL_COLUMNS {
            if let Some(values) = columns.get_mut(name) {
                let (m, q1, q3) = stats(values);
                let _ = writeln!(out, "{name:<18} {m:>14.6} {q1:>14.6} {q3:>14.6}");
            }
        }
    }
    if bounds.is_file() {
        let (header, rows) = read_table(&bounds)?;
        let col = |n: &str| header.iter().position(|h| h == n).ok_or_else(|| Error::input(format!("bounds.csv lacks column `{n}`")));
        let (st, pass, slack) = (col("statement")?, col("pass")?, col("slack")?);
        let mut roll: Vec<(String, usize, usize, f64)> = Vec::new();
        for r in &rows {
            let idx = match roll.iter().position(|e| e.0 == r[st]) {
                Some(i) => i,
                None => {
                    roll.push((r[st].clone(), 0, 0, f64::INFINITY));
                    roll.len() - 1
                }
            };
            roll[idx].1 += 1;
            roll[idx].2 += usize::from(r[pass] != "1");
            roll[idx].3 = roll[idx].3.min(r[slack].parse().unwrap_or(f64::NAN));
        }
        let failures: usize = roll.iter().map(|e| e.2).sum();
        let _ = writeln!(out, "{:<26} {:>8} {:>8} {:>14}", "statement", "trials", "failed", "min slack");
        for (name, n, f, s) in &roll {
            let _ = writeln!(out, "{name:<26} {n:>8} {f:>8} {s:>14.6e}");
        }
        let _ = writeln!(out, "bounds: {}", if failures == 0 { "PASS" } else { "FAIL" });
    }
    if bench.is_file() {
        let (header, rows) = read_table(&bench)?;
        let _ = writeln!(out, "{}", header.join("  "));
        for r in rows {
            let _ = writeln!(out, "{}", r.join("  "));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&xs, 0.5), 2.5);
        assert_eq!(quantile(&xs, 0.25), 1.75);
        assert_eq!(quantile(&xs, 0.75), 3.25);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn empty_dir_lists_missing_files() {
        let tmp = tempfile::tempdir().unwrap();
        let err = report(tmp.path()).unwrap_err();
        assert!(err.is_input_error());
        assert!(err.to_string().contains("metrics.csv") && err.to_string().contains("bounds.csv"));
    }

    #[test]
    fn medians_match_recomputation() {
        let tmp = tempfile::tempdir().unwrap();
        let finals = [3.0, 1.0, 2.0, 10.0];
        for (k, j) in finals.iter().enumerate() {
            let d = tmp.path().join(format!("seed_{k}"));
            std::fs::create_dir(&d).unwrap();
            std::fs::write(d.join("metrics.csv"), format!("round,j_after\n0,0.5\n1,{j}\n")).unwrap();
        }
        let text = report(tmp.path()).unwrap();
        // sorted 1 2 3 10: median 2.5, q1 1.75, q3 4.75
        let line = text.lines().find(|l| l.starts_with("j_after")).unwrap();
        let nums: Vec<f64> = line.split_whitespace().skip(1).map(|x| x.parse().unwrap()).collect();
        assert_eq!(nums, vec![2.5, 1.75, 4.75]);
    }

    #[test]
    fn single_run_reports_its_values() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path().join("seed_3");
        std::fs::create_dir(&d).unwrap();
        std::fs::write(d.join("metrics.csv"), "round,j_after,j_mc\n0,1.25,0.5\n").unwrap();
        let text = report(tmp.path()).unwrap();
        let line = text.lines().find(|l| l.starts_with("j_mc")).unwrap();
        assert!(line.split_whitespace().skip(1).all(|x| x == "0.500000"));
    }
}
