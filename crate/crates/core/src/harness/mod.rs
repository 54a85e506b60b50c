//! Batch experiments: calibration, identification, seeded trials, gait
//! sweeps, sinusoid baselines and reports.

mod calibrate;
mod config;
mod report;
mod sweep;
mod trial;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calibrate::{calibrate, calibrate_actuator, ActuatorCalibration, ActuatorSetup, Calibration};
pub use config::{
    ControllerConfig, ExperimentConfig, GridConfig, PlantConfig, SensorConfig, SysIdConfig,
    ValidationConfig, OUTPUT_DIR_ENV,
};
pub use report::{report, write_report, BestRow, Report};
pub use sweep::{
    baseline_path, enumerate_grid, read_rows, run_baseline, run_sweep, sweep_path, write_rows,
    SweepRow, SweepSummary,
};
pub use trial::{
    sinusoid_keyframes, validate_controller, validate_estimator, DriveMode, Environment, Pipeline,
    TrialFlags, TrialOutcome, TrialRecord, TrialSpec, ValidationRow,
};

use crate::controller::{build_cost, compute_lqr_gain, ControlLaw, ControllerError};
use crate::estimator::EstimatorError;
use crate::gait::GaitError;
use crate::metrics::MetricsError;
use crate::plant::PlantError;
use crate::sensor::SensorError;
use crate::sysid::{
    collect_response, design_excitation, fit_linear_model, prediction_error, ProcessModel, SysIdError,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("missing input file {0} (run the producing command first)")]
    MissingModel(String),
    #[error("calibration signal too weak to fit the velocity scale")]
    InsufficientExcitation,
    #[error("trial {trial_id} diverged: {source}")]
    Divergence { trial_id: u64, source: PlantError },
    #[error("{failed} of {total} trials failed")]
    PartialFailure { failed: usize, total: usize },
    #[error("malformed data file: {0}")]
    Format(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    SysId(#[from] SysIdError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Gait(#[from] GaitError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl HarnessError {
    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Io(_) => "io",
            HarnessError::MissingModel(_) => "missing_model",
            HarnessError::InsufficientExcitation => "insufficient_excitation",
            HarnessError::Divergence { .. } => "divergence",
            HarnessError::PartialFailure { .. } => "partial_failure",
            HarnessError::Format(_) => "format",
            HarnessError::Plant(_) => "plant",
            HarnessError::Sensor(_) => "sensor",
            HarnessError::SysId(_) => "sysid",
            HarnessError::Estimator(_) => "estimator",
            HarnessError::Controller(_) => "controller",
            HarnessError::Gait(_) => "gait",
            HarnessError::Metrics(_) => "metrics",
        }
    }
}

pub const CALIBRATION_FILE: &str = "calibration.json";
pub const MODEL_FILE: &str = "model.json";

/// Identified process model and the LQR law designed on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub process: ProcessModel,
    /// One-step prediction error on held-out data.
    pub validation_error: f64,
    pub law: ControlLaw,
}

/// Excites one free transmission, fits the affine model on part of the
/// record, scores it on the rest and designs the LQR gain.
pub fn identify(cfg: &ExperimentConfig) -> Result<ModelFile, HarnessError> {
    let dt = cfg.dt();
    let s = &cfg.sysid;
    let inputs = design_excitation((s.band_hz[0], s.band_hz[1]), s.amplitude_v, s.duration_s, dt, cfg.seed)?;
    let data = collect_response(&cfg.plant.transmission, &inputs, dt)?;
    let (fit, held_out) = data.split(s.fit_fraction);
    let mut process = fit_linear_model(&fit)?;
    process.seed = Some(cfg.seed);
    let validation_error = prediction_error(&process, &held_out, 1)?;
    let (q, r) = build_cost(&cfg.controller.weights)?;
    let mut law = compute_lqr_gain(&process, &q, &r)?;
    law.limits = cfg.controller.limits;
    Ok(ModelFile {
        process,
        validation_error,
        law,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(HarnessError::MissingModel(path.display().to_string()))
        }
        Err(e) => return Err(HarnessError::Io(format!("{}: {e}", path.display()))),
    };
    serde_json::from_str(&text).map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))
}

/// Calibration and model from `dir`, computing and storing any that are
/// missing.
pub fn load_or_prepare(cfg: &ExperimentConfig, dir: &Path) -> Result<(Calibration, ModelFile), HarnessError> {
    let cal_path = dir.join(CALIBRATION_FILE);
    let calibration = match read_json(&cal_path) {
        Ok(c) => c,
        Err(HarnessError::MissingModel(_)) => {
            let c = calibrate(cfg)?;
            write_json(&cal_path, &c)?;
            c
        }
        Err(e) => return Err(e),
    };
    let model_path = dir.join(MODEL_FILE);
    let model = match read_json(&model_path) {
        Ok(m) => m,
        Err(HarnessError::MissingModel(_)) => {
            let m = identify(cfg)?;
            write_json(&model_path, &m)?;
            m
        }
        Err(e) => return Err(e),
    };
    Ok((calibration, model))
}
