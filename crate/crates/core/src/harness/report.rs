//! Best-performance tables per frequency, from one or more output
//! directories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{baseline_path, read_rows, sweep_path, write_json, HarnessError, SweepRow};
use crate::gait::{GaitKind, Matching};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRow {
    /// `closed_loop`, `coupled` or `decoupled`.
    pub source: String,
    pub gait: GaitKind,
    pub f_hz: f64,
    pub best_nu: f64,
    pub best_sigma: f64,
    pub best_epsilon: f64,
    /// Directories contributing to the averages.
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<BestRow>,
}

fn max_finite(values: impl Iterator<Item = f64>) -> f64 {
    values.filter(|v| v.is_finite()).fold(f64::NAN, f64::max)
}

fn sources(dir: &Path) -> Vec<(String, Vec<SweepRow>)> {
    let mut out = Vec::new();
    let mut closed = Vec::new();
    for gait in [GaitKind::Trot, GaitKind::Pronk] {
        if let Ok(rows) = read_rows(&sweep_path(dir, gait)) {
            closed.extend(rows);
        }
    }
    out.push(("closed_loop".to_string(), closed));
    for (name, m) in [("coupled", Matching::Coupled), ("decoupled", Matching::Decoupled)] {
        if let Ok(rows) = read_rows(&baseline_path(dir, m)) {
            out.push((name.to_string(), rows));
        }
    }
    out
}

/// Per source, gait and frequency: the best ν, σ and ε over trials, each
/// averaged across `dirs`.
pub fn report(dirs: &[PathBuf]) -> Result<Report, HarnessError> {
    type Key = (String, GaitKind, u64);
    let mut acc: BTreeMap<Key, (f64, [f64; 3], usize)> = BTreeMap::new();
    for dir in dirs {
        for (source, rows) in sources(dir) {
            let mut per: BTreeMap<(GaitKind, u64), Vec<&SweepRow>> = BTreeMap::new();
            for r in &rows {
                per.entry((r.gait, r.f_hz.to_bits())).or_default().push(r);
            }
            for ((gait, fbits), group) in per {
                let best = [
                    max_finite(group.iter().map(|r| r.nu)),
                    max_finite(group.iter().map(|r| r.sigma)),
                    max_finite(group.iter().map(|r| r.epsilon)),
                ];
                let e = acc
                    .entry((source.clone(), gait, fbits))
                    .or_insert((f64::from_bits(fbits), [0.0; 3], 0));
                for (s, b) in e.1.iter_mut().zip(best) {
                    *s += b;
                }
                e.2 += 1;
            }
        }
    }
    if acc.is_empty() {
        let names: Vec<String> = dirs.iter().map(|d| d.display().to_string()).collect();
        return Err(HarnessError::MissingModel(format!(
            "sweep or baseline CSV under {}",
            names.join(", ")
        )));
    }
    let mut rows: Vec<BestRow> = acc
        .into_iter()
        .map(|((source, gait, _), (f_hz, sums, runs))| BestRow {
            source,
            gait,
            f_hz,
            best_nu: sums[0] / runs as f64,
            best_sigma: sums[1] / runs as f64,
            best_epsilon: sums[2] / runs as f64,
            runs,
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.gait.label(), &a.source)
            .cmp(&(b.gait.label(), &b.source))
            .then(a.f_hz.total_cmp(&b.f_hz))
    });
    Ok(Report { rows })
}

impl Report {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:<12} {:>6} {:>9} {:>9} {:>9} {:>5}",
            "gait", "source", "f_hz", "best_nu", "best_sig", "best_eps", "runs"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<6} {:<12} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>5}",
                r.gait.label(),
                r.source,
                r.f_hz,
                r.best_nu,
                r.best_sigma,
                r.best_epsilon,
                r.runs
            );
        }
        s
    }
}

/// Writes `report.json` and `report.txt` into `dir`.
pub fn write_report(dir: &Path, report: &Report) -> Result<(), HarnessError> {
    write_json(&dir.join("report.json"), report)?;
    std::fs::write(dir.join("report.txt"), report.to_table()).map_err(|e| HarnessError::Io(e.to_string()))
}
