//! Aggregation, tables and the run manifest.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Train and test metrics of one finished model, as stored in `eval.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub split: String,
    pub accuracy: f64,
    pub mean_ce: f64,
}

pub fn write_eval(path: &Path, train: (f64, f64), test: (f64, f64)) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for (split, (accuracy, mean_ce)) in [("train", train), ("test", test)] {
        w.serialize(EvalRow {
            split: split.to_string(),
            accuracy,
            mean_ce,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_test_accuracy(path: &Path) -> Result<f64, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    for row in r.deserialize::<EvalRow>() {
        let row = row?;
        if row.split == "test" {
            return Ok(row.accuracy);
        }
    }
    Err(CliError::Runtime(format!("{}: no test row", path.display())))
}

/// Mean and sample standard deviation; the deviation is 0 for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One aggregated row: a scheduler (compare) or a range (sweep).
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub name: String,
    pub accuracies: Vec<f64>,
    /// `(seed, message)` for every run that failed.
    pub failures: Vec<(u64, String)>,
}

impl Aggregate {
    pub fn mean_std(&self) -> (f64, f64) {
        mean_std(&self.accuracies)
    }
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    rank: usize,
    name: &'a str,
    runs: usize,
    failed: usize,
    mean_test_accuracy: f64,
    std_test_accuracy: f64,
}

/// Rows ranked by mean accuracy, best first; rows without a successful run go last.
pub fn ranked(rows: &[Aggregate]) -> Vec<&Aggregate> {
    let mut out: Vec<&Aggregate> = rows.iter().collect();
    out.sort_by(|a, b| {
        let key = |r: &Aggregate| {
            let m = r.mean_std().0;
            if m.is_nan() {
                f64::NEG_INFINITY
            } else {
                m
            }
        };
        key(b).total_cmp(&key(a))
    });
    out
}

pub fn write_summary_csv(path: &Path, rows: &[Aggregate]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for (i, r) in ranked(rows).into_iter().enumerate() {
        let (mean, std) = r.mean_std();
        w.serialize(SummaryRow {
            rank: i + 1,
            name: &r.name,
            runs: r.accuracies.len(),
            failed: r.failures.len(),
            mean_test_accuracy: mean,
            std_test_accuracy: std,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned text version of the summary, accuracies in percent.
pub fn summary_table(rows: &[Aggregate], heading: &str) -> String {
    let ranked = ranked(rows);
    let width = ranked.iter().map(|r| r.name.len()).max().unwrap_or(0).max(heading.len());
    let mut s = String::new();
    let _ = writeln!(s, "{:>4}  {:<width$}  {:>16}  {:>4}", "rank", heading, "top-1 acc (%)", "runs");
    for (i, r) in ranked.iter().enumerate() {
        let (mean, std) = r.mean_std();
        let cell = if r.accuracies.is_empty() {
            "failed".to_string()
        } else {
            format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
        };
        let _ = writeln!(s, "{:>4}  {:<width$}  {:>16}  {:>4}", i + 1, r.name, cell, r.accuracies.len());
        for (seed, msg) in &r.failures {
            let _ = writeln!(s, "      seed {seed} failed: {msg}");
        }
    }
    s
}

#[derive(Debug, Serialize)]
struct SweepRow<'a> {
    range: &'a str,
    mean_test_accuracy: f64,
}

/// Two-column plot data, in configuration order.
pub fn write_sweep_csv(path: &Path, rows: &[Aggregate]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(SweepRow {
            range: &r.name,
            mean_test_accuracy: r.mean_std().0,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Appends one section to `<output_dir>/manifest.txt`. The manifest is the only
/// output that carries a timestamp.
pub fn append_manifest(output_dir: &Path, command: &str, lines: &[String]) -> Result<(), CliError> {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(output_dir.join("manifest.txt"))?;
    writeln!(f, "[{command}]")?;
    writeln!(f, "timestamp_unix = {secs}")?;
    writeln!(f, "version = {}", env!("CARGO_PKG_VERSION"))?;
    for line in lines {
        writeln!(f, "{line}")?;
    }
    writeln!(f)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ranking_puts_failures_last() {
        let rows = vec![
            Aggregate {
                name: "a".into(),
                accuracies: vec![],
                failures: vec![(0, "boom".into())],
            },
            Aggregate {
                name: "b".into(),
                accuracies: vec![0.6],
                failures: vec![],
            },
            Aggregate {
                name: "c".into(),
                accuracies: vec![0.7],
                failures: vec![],
            },
        ];
        let names: Vec<_> = ranked(&rows).iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["c", "b", "a"]);
        let table = summary_table(&rows, "scheduler");
        assert_eq!(table.lines().count(), 5);
        assert!(table.contains("seed 0 failed: boom"));
    }
}
