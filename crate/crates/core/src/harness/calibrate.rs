//! Encoder calibration against simulated ground truth.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};
use crate::plant::{LegForce, TransmissionParams, TransmissionState, LEGS};
use crate::sensor::{
    build_measurement_model, mechanical_current, simulate_encoder, EncoderNoise, EncoderSample,
    MeasurementModel, NoiseSource, SensorParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorCalibration {
    pub alpha: f64,
    /// Covariance of `(Vᵐ_k, Vᵐ_{k−1})` at rest.
    #[serde(with = "crate::matrix_rows")]
    pub n_h: Matrix2<f64>,
    /// Covariance of `(V_k, V_{k−1})` at rest.
    #[serde(with = "crate::matrix_rows")]
    pub n_d: Matrix2<f64>,
    pub offset_vm: f64,
    pub offset_v: f64,
}

impl ActuatorCalibration {
    /// Removes the stored offsets from a raw sample.
    pub fn correct(&self, raw: EncoderSample) -> EncoderSample {
        EncoderSample {
            v_m: raw.v_m - self.offset_vm,
            v: raw.v - self.offset_v,
        }
    }
}

/// Calibration of all eight encoders, `[leg][swing, lift]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub nominal: SensorParams,
    pub actuators: [[ActuatorCalibration; 2]; LEGS],
}

impl Calibration {
    pub fn sensor_params(&self, leg: usize, axis: usize) -> SensorParams {
        SensorParams {
            alpha: self.actuators[leg][axis].alpha,
            ..self.nominal
        }
    }

    pub fn measurement_model(&self, leg: usize, axis: usize) -> Result<MeasurementModel, HarnessError> {
        let a = &self.actuators[leg][axis];
        Ok(build_measurement_model(&self.sensor_params(leg, axis), &a.n_h, &a.n_d)?)
    }
}

/// Per-actuator noise seed.
pub(crate) fn actuator_seed(seed: u64, leg: usize, axis: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(1 + (2 * leg + axis) as u64)
}

fn pair_covariance(series: &[f64]) -> Matrix2<f64> {
    let pairs: Vec<Vector2<f64>> = series.windows(2).map(|w| Vector2::new(w[1], w[0])).collect();
    let n = pairs.len() as f64;
    let mean = pairs.iter().sum::<Vector2<f64>>() / n;
    let mut cov = Matrix2::zeros();
    for p in &pairs {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov / (n - 1.0).max(1.0)
}

pub struct ActuatorSetup<'a> {
    pub transmission: &'a TransmissionParams,
    pub truth: &'a SensorParams,
    pub nominal: &'a SensorParams,
    pub noise: EncoderNoise,
    pub freqs_hz: &'a [f64],
    pub amplitude_v: f64,
    pub noise_samples: usize,
    /// 0 swing, 1 lift.
    pub axis: usize,
    pub seed: u64,
}

/// Zero-input statistics, then a least-squares velocity scale over
/// sinusoidal drives at each calibration frequency.
pub fn calibrate_actuator(setup: &ActuatorSetup) -> Result<ActuatorCalibration, HarnessError> {
    let mut src = NoiseSource::new(setup.noise, setup.seed);
    let dt = setup.truth.dt;
    let n = setup.noise_samples.max(3);
    let rest: Vec<EncoderSample> = (0..n)
        .map(|_| simulate_encoder(0.0, 0.0, 0.0, setup.truth, Some(&mut src)))
        .collect();
    let vm: Vec<f64> = rest.iter().map(|s| s.v_m).collect();
    let v: Vec<f64> = rest.iter().map(|s| s.v).collect();
    let offset_vm = vm.iter().sum::<f64>() / n as f64;
    let offset_v = v.iter().sum::<f64>() / n as f64;
    let mut cal = ActuatorCalibration {
        alpha: setup.nominal.alpha,
        n_h: pair_covariance(&vm),
        n_d: pair_covariance(&v),
        offset_vm,
        offset_v,
    };

    let (mut num, mut den) = (0.0, 0.0);
    for &f in setup.freqs_hz {
        let per = (1.0 / (f * dt)).round() as usize;
        let settle = 5 * per;
        let total = settle + 10 * per;
        let mut state = TransmissionState::default();
        let mut v_prev_true = 0.0;
        let mut v_prev_meas = 0.0;
        for k in 0..total {
            let drive = setup.amplitude_v * (std::f64::consts::TAU * f * k as f64 * dt).sin();
            let qd = if setup.axis == 0 { state.qd_s } else { state.qd_l };
            let raw = simulate_encoder(qd, drive, v_prev_true, setup.truth, Some(&mut src));
            let meas = cal.correct(raw);
            if k >= settle {
                let i_m = mechanical_current(meas, (meas.v - v_prev_meas) / dt, setup.nominal);
                num += qd * i_m;
                den += i_m * i_m;
            }
            v_prev_true = drive;
            v_prev_meas = meas.v;
            let mut u = [0.0; 2];
            u[setup.axis] = drive;
            state = setup.transmission.step(&state, u, LegForce::default(), dt)?;
        }
    }
    if !(den > 1e-18) || !(num / den).is_finite() || num / den <= 0.0 {
        return Err(HarnessError::InsufficientExcitation);
    }
    cal.alpha = num / den;
    Ok(cal)
}

pub fn calibrate(cfg: &ExperimentConfig) -> Result<Calibration, HarnessError> {
    let s = &cfg.sensor;
    if s.calibration_freqs_hz.is_empty() || s.calibration_amplitude_v == 0.0 {
        return Err(HarnessError::InsufficientExcitation);
    }
    let mut actuators = [[None; 2]; LEGS];
    for (leg, slots) in actuators.iter_mut().enumerate() {
        let transmission = cfg.plant.leg_transmission(leg);
        for (axis, slot) in slots.iter_mut().enumerate() {
            *slot = Some(calibrate_actuator(&ActuatorSetup {
                transmission: &transmission,
                truth: &s.truth,
                nominal: &s.nominal,
                noise: s.noise,
                freqs_hz: &s.calibration_freqs_hz,
                amplitude_v: s.calibration_amplitude_v,
                noise_samples: s.noise_samples,
                axis,
                seed: actuator_seed(cfg.seed, leg, axis),
            })?);
        }
    }
    Ok(Calibration {
        nominal: s.nominal,
        actuators: actuators.map(|pair| pair.map(|a| a.expect("filled above"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup<'a>(
        tr: &'a TransmissionParams,
        truth: &'a SensorParams,
        nominal: &'a SensorParams,
        noise: EncoderNoise,
        axis: usize,
    ) -> ActuatorSetup<'a> {
        ActuatorSetup {
            transmission: tr,
            truth,
            nominal,
            noise,
            freqs_hz: &[10.0, 30.0, 50.0],
            amplitude_v: 80.0,
            noise_samples: 4000,
            axis,
            seed: 11,
        }
    }

    #[test]
    fn recovers_injected_alpha() {
        let tr = TransmissionParams::default();
        let truth = SensorParams {
            alpha: 47.5,
            ..SensorParams::default()
        };
        let nominal = SensorParams::default();
        let noise = EncoderNoise {
            std_vm: 0.5,
            std_v: 0.2,
            ..Default::default()
        };
        for axis in 0..2 {
            let cal = calibrate_actuator(&setup(&tr, &truth, &nominal, noise, axis)).unwrap();
            assert!((cal.alpha / 47.5 - 1.0).abs() < 0.01, "alpha {}", cal.alpha);
        }
    }

    #[test]
    fn zero_noise_gives_zero_covariances() {
        let tr = TransmissionParams::default();
        let p = SensorParams::default();
        let cal = calibrate_actuator(&setup(&tr, &p, &p, EncoderNoise::default(), 0)).unwrap();
        assert!(cal.n_h.amax() < 1e-12 && cal.n_d.amax() < 1e-12);
        assert!((cal.alpha - p.alpha).abs() < 1e-6 * p.alpha);
    }

    #[test]
    fn offsets_and_noise_recovered() {
        let tr = TransmissionParams::default();
        let p = SensorParams::default();
        let noise = EncoderNoise {
            std_vm: 0.5,
            std_v: 0.2,
            offset_vm: 1.25,
            offset_v: -0.4,
        };
        let cal = calibrate_actuator(&setup(&tr, &p, &p, noise, 1)).unwrap();
        // Standard error of the mean is std/√4000.
        assert!((cal.offset_vm - 1.25).abs() < 4.0 * 0.5 / 4000f64.sqrt());
        assert!((cal.offset_v + 0.4).abs() < 4.0 * 0.2 / 4000f64.sqrt());
        assert!((cal.n_h[(0, 0)] / 0.25 - 1.0).abs() < 0.15);
        assert!((cal.n_d[(1, 1)] / 0.04 - 1.0).abs() < 0.15);
        assert!(cal.n_h[(0, 1)].abs() < 0.05 * 0.25);
    }

    #[test]
    fn no_excitation_is_an_error() {
        let tr = TransmissionParams::default();
        let p = SensorParams::default();
        let mut s = setup(&tr, &p, &p, EncoderNoise::default(), 0);
        s.amplitude_v = 0.0;
        assert!(matches!(calibrate_actuator(&s), Err(HarnessError::InsufficientExcitation)));
    }
}
