//! Gait-grid sweeps and input-matched sinusoid baselines.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trial::write_trace;
use super::{write_json, DriveMode, Environment, HarnessError, Pipeline, TrialRecord, TrialSpec};
use crate::gait::{sinusoid_reference, GaitKind, GaitParams, Matching, RmsTargets};
use crate::plant::LEGS;

/// One CSV row per trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub trial_id: u64,
    pub gait: GaitKind,
    pub f_hz: f64,
    #[serde(rename = "S1")]
    pub s1: Option<f64>,
    #[serde(rename = "S2")]
    pub s2: Option<f64>,
    #[serde(rename = "S3")]
    pub s3: Option<f64>,
    pub nu: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub cot: f64,
    #[serde(rename = "E_est_swing")]
    pub e_est_swing: f64,
    #[serde(rename = "E_est_lift")]
    pub e_est_lift: f64,
    #[serde(rename = "E_cont_swing")]
    pub e_cont_swing: f64,
    #[serde(rename = "E_cont_lift")]
    pub e_cont_lift: f64,
    pub v_rms_swing: f64,
    pub v_rms_lift: f64,
    pub flags: String,
}

impl SweepRow {
    pub fn from_record(r: &TrialRecord, with_shape: bool) -> Self {
        let m = &r.metrics;
        let rms = r.mean_v_rms();
        Self {
            trial_id: r.trial_id,
            gait: r.gait.gait,
            f_hz: r.gait.frequency(),
            s1: with_shape.then_some(r.gait.s1),
            s2: r.gait.s2.filter(|_| with_shape),
            s3: r.gait.s3.filter(|_| with_shape),
            nu: m.nu,
            sigma: m.sigma,
            epsilon: m.epsilon,
            cot: m.cot,
            e_est_swing: m.e_est[0],
            e_est_lift: m.e_est[1],
            e_cont_swing: m.e_cont[0],
            e_cont_lift: m.e_cont[1],
            v_rms_swing: rms[0],
            v_rms_lift: rms[1],
            flags: r.flags.to_field(),
        }
    }

    pub fn diverged(&self) -> bool {
        self.flags.split('|').any(|f| f == "diverged")
    }
}

/// Trial ids and parameters in grid order (frequency, S1, then S2 or S3).
pub fn enumerate_grid(pipeline: &Pipeline, gait: GaitKind) -> Vec<(u64, GaitParams)> {
    let g = &pipeline.cfg.grid;
    let third = match gait {
        GaitKind::Trot => &g.s2,
        GaitKind::Pronk => &g.s3,
    };
    let mut out = Vec::new();
    for &f in &g.frequencies_hz {
        for &s1 in &g.s1 {
            for &s in third {
                let params = match gait {
                    GaitKind::Trot => GaitParams::trot(f, s1, s),
                    GaitKind::Pronk => GaitParams::pronk(f, s1, s),
                };
                out.push((out.len() as u64, params));
            }
        }
    }
    out
}

pub fn sweep_path(dir: &Path, gait: GaitKind) -> PathBuf {
    dir.join(format!("sweep_{}.csv", gait.label()))
}

pub fn baseline_path(dir: &Path, matching: Matching) -> PathBuf {
    dir.join(match matching {
        Matching::Coupled => "baseline_coupled.csv",
        Matching::Decoupled => "baseline_decoupled.csv",
    })
}

fn partial_path(path: &Path) -> PathBuf {
    path.with_extension("partial.csv")
}

pub fn read_rows(path: &Path) -> Result<Vec<SweepRow>, HarnessError> {
    if !path.exists() {
        return Err(HarnessError::MissingModel(path.display().to_string()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Io(e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| HarnessError::Format(format!("{}: {e}", path.display()))))
        .collect()
}

/// Writes rows sorted by trial id, replacing `path` atomically.
pub fn write_rows(path: &Path, rows: &[SweepRow]) -> Result<(), HarnessError> {
    let io = |e: csv::Error| HarnessError::Io(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.trial_id);
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp).map_err(io)?;
        for row in sorted {
            w.serialize(row).map_err(io)?;
        }
        w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::Io(e.to_string()))
}

/// Rows already on disk from a finished or interrupted run.
fn existing_rows(path: &Path) -> BTreeMap<u64, SweepRow> {
    let mut out = BTreeMap::new();
    for p in [path.to_path_buf(), partial_path(path)] {
        if let Ok(mut r) = csv::Reader::from_path(&p) {
            // A torn last line from an interrupted append is dropped.
            for row in r.deserialize::<SweepRow>().flatten() {
                out.insert(row.trial_id, row);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestTrial {
    pub f_hz: f64,
    pub trial_id: u64,
    pub nu: f64,
    pub sigma: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub gait: GaitKind,
    pub trials: usize,
    pub computed: usize,
    pub failed: usize,
    /// Fastest trial per frequency.
    pub best: Vec<BestTrial>,
}

fn best_per_frequency(rows: &[SweepRow]) -> Vec<BestTrial> {
    let mut best: BTreeMap<u64, &SweepRow> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.nu.is_finite()) {
        let key = r.f_hz.to_bits();
        match best.get(&key) {
            Some(b) if b.nu >= r.nu => {}
            _ => {
                best.insert(key, r);
            }
        }
    }
    let mut out: Vec<BestTrial> = best
        .values()
        .map(|r| BestTrial {
            f_hz: r.f_hz,
            trial_id: r.trial_id,
            nu: r.nu,
            sigma: r.sigma,
            epsilon: r.epsilon,
        })
        .collect();
    out.sort_by(|a, b| a.f_hz.total_cmp(&b.f_hz));
    out
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))
}

fn run_specs(
    pipeline: &Pipeline,
    specs: Vec<TrialSpec>,
    with_shape: bool,
    path: &Path,
    trace_prefix: &str,
    workers: usize,
) -> Result<(Vec<SweepRow>, usize, usize), HarnessError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    let mut rows = existing_rows(path);
    let todo: Vec<TrialSpec> = specs.iter().filter(|s| !rows.contains_key(&s.trial_id)).cloned().collect();
    let partial = partial_path(path);
    let append_header = !partial.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&partial)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", partial.display())))?;
    let writer = Mutex::new(
        csv::WriterBuilder::new()
            .has_headers(append_header)
            .from_writer(file),
    );
    let computed = todo.len();
    let results: Vec<Result<SweepRow, HarnessError>> = pool(workers)?.install(|| {
        todo.par_iter()
            .map(|spec| {
                let record = match pipeline.run_trial(spec) {
                    Ok(out) => {
                        let mut record = out.record;
                        if pipeline.cfg.write_traces {
                            let trace_path = dir
                                .join("traces")
                                .join(format!("{trace_prefix}_{:03}.csv", spec.trial_id));
                            write_trace(&trace_path, &out.trace)?;
                            record.trace_path = Some(trace_path);
                        }
                        record
                    }
                    Err(e) => {
                        log::warn!("trial {} failed: {e}", spec.trial_id);
                        TrialRecord::failed(spec)
                    }
                };
                let row = SweepRow::from_record(&record, with_shape);
                let mut w = writer.lock().expect("writer lock");
                w.serialize(&row).map_err(|e| HarnessError::Io(e.to_string()))?;
                w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
                Ok(row)
            })
            .collect()
    });
    drop(writer);
    for r in results {
        let r = r?;
        rows.insert(r.trial_id, r);
    }
    let wanted: Vec<u64> = specs.iter().map(|s| s.trial_id).collect();
    let rows: Vec<SweepRow> = wanted.iter().filter_map(|id| rows.remove(id)).collect();
    write_rows(path, &rows)?;
    let _ = std::fs::remove_file(&partial);
    let failed = rows.iter().filter(|r| r.diverged()).count();
    Ok((rows, computed, failed))
}

/// Runs every grid point of `gait` on the ground in closed loop. Trials
/// already present in `dir` are kept.
pub fn run_sweep(
    pipeline: &Pipeline,
    gait: GaitKind,
    dir: &Path,
    workers: usize,
) -> Result<(Vec<SweepRow>, SweepSummary), HarnessError> {
    let specs: Vec<TrialSpec> = enumerate_grid(pipeline, gait)
        .into_iter()
        .map(|(id, params)| TrialSpec::closed_loop(id, params, Environment::Ground))
        .collect();
    let trials = specs.len();
    let path = sweep_path(dir, gait);
    let (rows, computed, failed) = run_specs(pipeline, specs, true, &path, gait.label(), workers)?;
    let summary = SweepSummary {
        gait,
        trials,
        computed,
        failed,
        best: best_per_frequency(&rows),
    };
    write_json(&dir.join(format!("summary_{}.json", gait.label())), &summary)?;
    Ok((rows, summary))
}

/// Sinusoid trials matched to the AC RMS voltages of the fastest
/// closed-loop trial at each frequency of each swept gait.
pub fn run_baseline(
    pipeline: &Pipeline,
    matching: Matching,
    sweeps: &[SweepRow],
    dir: &Path,
    workers: usize,
) -> Result<Vec<SweepRow>, HarnessError> {
    let mode = match matching {
        Matching::Coupled => DriveMode::OpenLoopCoupled,
        Matching::Decoupled => DriveMode::OpenLoopDecoupled,
    };
    let u0 = pipeline.law().u0;
    let mut specs = Vec::new();
    for gait in [GaitKind::Trot, GaitKind::Pronk] {
        let rows: Vec<SweepRow> = sweeps.iter().filter(|r| r.gait == gait).cloned().collect();
        for best in best_per_frequency(&rows) {
            let row = rows
                .iter()
                .find(|r| r.trial_id == best.trial_id)
                .expect("best row comes from rows");
            let rms = RmsTargets {
                per_actuator: [[row.v_rms_swing, row.v_rms_lift]; LEGS],
            };
            let period = 1.0 / row.f_hz;
            let drive = sinusoid_reference(gait, period, matching, &rms, [u0[0], u0[1]])?;
            let params = match gait {
                GaitKind::Trot => GaitParams::trot(row.f_hz, row.s1.unwrap_or(50.0), row.s2.unwrap_or(0.0)),
                GaitKind::Pronk => GaitParams::pronk(row.f_hz, row.s1.unwrap_or(50.0), row.s3.unwrap_or(50.0)),
            };
            let offset = match gait {
                GaitKind::Trot => 0,
                GaitKind::Pronk => 1000,
            };
            specs.push(TrialSpec {
                trial_id: offset + specs.iter().filter(|s: &&TrialSpec| s.gait.gait == gait).count() as u64,
                gait: params,
                mode,
                environment: Environment::Ground,
                sine: Some(drive),
                reference: None,
            });
        }
    }
    if specs.is_empty() {
        return Err(HarnessError::MissingModel(
            "closed-loop sweep rows (run `sweep` first)".into(),
        ));
    }
    let path = baseline_path(dir, matching);
    let prefix = match matching {
        Matching::Coupled => "coupled",
        Matching::Decoupled => "decoupled",
    };
    let (rows, _, _) = run_specs(pipeline, specs, false, &path, prefix, workers)?;
    Ok(rows)
}
