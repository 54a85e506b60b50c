//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::controller::{CostWeights, DriveLimits};
use crate::gait::{FREQ_RANGE_HZ, S1_RANGE, S2_RANGE, S3_RANGE};
use crate::plant::{BodyParams, SurfaceModel, TransmissionParams, LEGS};
use crate::sensor::{EncoderNoise, SensorParams};

/// Overrides the output directory of every command.
pub const OUTPUT_DIR_ENV: &str = "PIEZOLEG_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_strides")]
    pub strides: usize,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Write one trace file per trial.
    #[serde(default = "default_true")]
    pub write_traces: bool,
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub sysid: SysIdConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub validation: ValidationConfig,
}

fn default_strides() -> usize {
    20
}

fn default_rate() -> f64 {
    2500.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub body: BodyParams,
    /// Nominal transmission, also the one excited for identification.
    pub transmission: TransmissionParams,
    /// Per-leg [swing, lift] natural-frequency factors relative to the
    /// nominal transmission.
    pub resonance_scale: [[f64; 2]; LEGS],
    pub surface: SurfaceModel,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            body: BodyParams::default(),
            transmission: TransmissionParams::default(),
            resonance_scale: [[1.04, 0.98], [0.96, 1.02], [1.02, 0.96], [0.98, 1.04]],
            surface: SurfaceModel::default(),
        }
    }
}

impl PlantConfig {
    pub fn leg_transmission(&self, leg: usize) -> TransmissionParams {
        self.transmission.with_resonance_scale(self.resonance_scale[leg])
    }

    pub fn leg_transmissions(&self) -> [TransmissionParams; LEGS] {
        std::array::from_fn(|leg| self.leg_transmission(leg))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    /// Circuit constants assumed by the estimator. `alpha` is replaced by
    /// the calibrated value.
    pub nominal: SensorParams,
    /// Circuit constants used to synthesize the measurements.
    pub truth: SensorParams,
    pub noise: EncoderNoise,
    /// Drive frequencies of the velocity-scale calibration (Hz).
    pub calibration_freqs_hz: Vec<f64>,
    /// Drive amplitude of the calibration (V).
    pub calibration_amplitude_v: f64,
    /// Zero-input samples for the noise statistics.
    pub noise_samples: usize,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            nominal: SensorParams::default(),
            truth: SensorParams::default(),
            noise: EncoderNoise {
                std_vm: 0.05,
                std_v: 0.02,
                offset_vm: 0.3,
                offset_v: -0.1,
            },
            calibration_freqs_hz: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            calibration_amplitude_v: 80.0,
            noise_samples: 5000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SysIdConfig {
    pub band_hz: [f64; 2],
    pub amplitude_v: f64,
    pub duration_s: f64,
    /// Fraction of the record used for fitting; the rest validates.
    pub fit_fraction: f64,
}

impl Default for SysIdConfig {
    fn default() -> Self {
        Self {
            band_hz: [5.0, 300.0],
            amplitude_v: 100.0,
            duration_s: 4.0,
            fit_fraction: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub weights: CostWeights,
    pub limits: DriveLimits,
}

/// Shape-parameter grid. Stride periods are `1/f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub frequencies_hz: Vec<f64>,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub s3: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            frequencies_hz: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            s1: vec![50.0, 60.0, 70.0, 80.0],
            s2: vec![-75.0, -50.0, -25.0, 0.0, 25.0],
            s3: vec![20.0, 35.0, 50.0, 65.0, 80.0],
        }
    }
}

/// Estimator and controller validation runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub frequencies_hz: Vec<f64>,
    /// Trot [S1, S2] tracked by the controller validation.
    pub trot_shape: [f64; 2],
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            frequencies_hz: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            trot_shape: [70.0, 0.0],
        }
    }
}

fn within(name: &str, values: &[f64], (lo, hi): (f64, f64)) -> Result<(), HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Config(format!("grid.{name} is empty")));
    }
    for &v in values {
        if !(v.is_finite() && v >= lo - 1e-9 && v <= hi + 1e-9) {
            return Err(HarnessError::Config(format!(
                "grid.{name} value {v} outside [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            strides: default_strides(),
            sample_rate_hz: default_rate(),
            output_dir: None,
            write_traces: true,
            plant: PlantConfig::default(),
            sensor: SensorConfig::default(),
            sysid: SysIdConfig::default(),
            controller: ControllerConfig::default(),
            grid: GridConfig::default(),
            validation: ValidationConfig::default(),
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        within("frequencies_hz", &self.grid.frequencies_hz, FREQ_RANGE_HZ)?;
        within("s1", &self.grid.s1, S1_RANGE)?;
        within("s2", &self.grid.s2, S2_RANGE)?;
        within("s3", &self.grid.s3, S3_RANGE)?;
        within("validation.frequencies_hz", &self.validation.frequencies_hz, FREQ_RANGE_HZ)?;
        within("validation.trot_shape", &self.validation.trot_shape[..1], S1_RANGE)?;
        within("validation.trot_shape", &self.validation.trot_shape[1..], S2_RANGE)?;
        if self.strides <= crate::metrics::DISCARD_STRIDES {
            return Err(HarnessError::Config(format!(
                "strides = {} leaves nothing after the discarded transient",
                self.strides
            )));
        }
        if !(self.sample_rate_hz >= 1000.0 && self.sample_rate_hz.is_finite()) {
            return Err(HarnessError::Config(format!(
                "sample_rate_hz = {} (plant step must be at most 1 ms)",
                self.sample_rate_hz
            )));
        }
        for (name, p) in [("nominal", &self.sensor.nominal), ("truth", &self.sensor.truth)] {
            if (p.dt - self.dt()).abs() > 1e-12 {
                return Err(HarnessError::Config(format!(
                    "sensor.{name}.dt = {} does not match the sample rate",
                    p.dt
                )));
            }
            p.validate()?;
        }
        for leg in 0..LEGS {
            self.plant.leg_transmission(leg).validate()?;
        }
        self.plant.transmission.validate()?;
        if !self.plant.surface.is_valid() {
            return Err(HarnessError::Config("plant.surface".into()));
        }
        crate::controller::build_cost(&self.controller.weights)
            .map_err(|e| HarnessError::Config(format!("controller.weights: {e}")))?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Output directory: the environment override, then the config, then
    /// `fallback`.
    pub fn resolve_output_dir(&self, fallback: Option<&Path>) -> PathBuf {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            return PathBuf::from(dir);
        }
        fallback
            .map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("piezoleg-out"))
    }
}
