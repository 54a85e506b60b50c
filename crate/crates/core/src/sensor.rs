//! Piezoelectric encoder: forward circuit simulation and the discrete
//! inverse measurement model.
//!
//! The actuator is a capacitor `C`, resistor `R` and mechanical current
//! source in parallel, fed through a shunt `R_s`. Tip velocity is `α` times
//! the mechanical current:
//!
//! ```text
//! iᵐ = (Vᵐ − V)/R_s − βC·V̇ − V/R,     q̇ = α·iᵐ
//! ```
//!
//! With the backward difference `V̇_k ≈ (V_k − V_{k−1})/h` this becomes
//! `q̇_k = c₁(Vᵐ_k − V_k) − c₂V_k − c₃(V_k − V_{k−1})` where `c₁ = α/R_s`,
//! `c₂ = α/R` and `c₃ = αβC/h`.

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::NANOFARAD_VOLT_PER_S_TO_MA;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("degenerate sensor parameters: {0}")]
    DegenerateParams(String),
}

/// Encoder circuit constants for one actuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorParams {
    /// Velocity scaling (mm/s per mA).
    pub alpha: f64,
    /// Actuator parallel resistance (kΩ).
    pub r_kohm: f64,
    /// Actuator capacitance (nF).
    pub c_nf: f64,
    /// Shunt resistance (kΩ).
    pub rs_kohm: f64,
    /// Blocking factor.
    pub beta: f64,
    /// Sample interval (s).
    pub dt: f64,
}

impl Default for SensorParams {
    fn default() -> Self {
        Self {
            alpha: 40.0,
            r_kohm: 1000.0,
            c_nf: 5.0,
            rs_kohm: 75.0,
            beta: 1.57,
            dt: 4e-4,
        }
    }
}

impl SensorParams {
    pub fn validate(&self) -> Result<(), SensorError> {
        let fields = [
            ("alpha", self.alpha),
            ("R", self.r_kohm),
            ("C", self.c_nf),
            ("R_s", self.rs_kohm),
            ("beta", self.beta),
            ("dt", self.dt),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(SensorError::DegenerateParams(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    /// `βC` in mA·s/V.
    fn blocked_capacitance(&self) -> f64 {
        self.beta * self.c_nf * NANOFARAD_VOLT_PER_S_TO_MA
    }

    pub fn c1(&self) -> f64 {
        self.alpha / self.rs_kohm
    }

    pub fn c2(&self) -> f64 {
        self.alpha / self.r_kohm
    }

    pub fn c3(&self) -> f64 {
        self.alpha * self.blocked_capacitance() / self.dt
    }
}

/// Voltages before (`v_m`) and after (`v`) the shunt resistor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EncoderSample {
    pub v_m: f64,
    pub v: f64,
}

/// Mechanical current (mA) from the circuit voltages and `V̇` (V/s).
pub fn mechanical_current(sample: EncoderSample, v_dot: f64, params: &SensorParams) -> f64 {
    (sample.v_m - sample.v) / params.rs_kohm
        - params.blocked_capacitance() * v_dot
        - sample.v / params.r_kohm
}

/// Tip velocity recovered from the current sample and the previous drive
/// voltage, using the backward difference for `V̇`.
pub fn velocity_from_sample(sample: EncoderSample, v_prev: f64, params: &SensorParams) -> f64 {
    params.alpha * mechanical_current(sample, (sample.v - v_prev) / params.dt, params)
}

/// Measurement noise and constant offsets of one encoder channel pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderNoise {
    /// Standard deviation on `Vᵐ` (V).
    pub std_vm: f64,
    /// Standard deviation on `V` (V).
    pub std_v: f64,
    pub offset_vm: f64,
    pub offset_v: f64,
}

/// Seeded noise generator owned by one simulated encoder.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    pub noise: EncoderNoise,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(noise: EncoderNoise, seed: u64) -> Self {
        Self {
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

/// Simulates the encoder voltages for tip velocity `qdot` (mm/s) while the
/// actuator is driven at `v` (previous sample `v_prev`).
pub fn simulate_encoder(
    qdot: f64,
    v: f64,
    v_prev: f64,
    params: &SensorParams,
    noise: Option<&mut NoiseSource>,
) -> EncoderSample {
    let current = qdot / params.alpha
        + params.blocked_capacitance() * (v - v_prev) / params.dt
        + v / params.r_kohm;
    let v_m = v + params.rs_kohm * current;
    match noise {
        None => EncoderSample { v_m, v },
        Some(src) => {
            let n_m = src.gaussian();
            let n_v = src.gaussian();
            EncoderSample {
                v_m: v_m + src.noise.offset_vm + src.noise.std_vm * n_m,
                v: v + src.noise.offset_v + src.noise.std_v * n_v,
            }
        }
    }
}

/// Inverse sensor model `yᵐ = Hᵐxᵐ + Dᵐuᵐ + nᵐ` over
/// `xᵐ = [q_k, q̇_k, q̇_{k−1}]`, `uᵐ = [V_k, V_{k−1}]`,
/// `yᵐ = [Vᵐ_k, Vᵐ_{k−1}]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementModel {
    pub h: Matrix2x3<f64>,
    pub d: Matrix2<f64>,
    /// `Nᵐ = Nᴴ + Dᵐ Nᴰ Dᵐᵀ`.
    pub n: Matrix2<f64>,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// Builds the inverse measurement model from the circuit constants and the
/// noise covariances of the `Vᵐ` pair (`n_h`) and the `V` pair (`n_d`).
///
/// The second row comes from writing `q̇_{k−1}` with the same two-sample
/// difference `(V_k − V_{k−1})/h`, which gives `Vᵐ_{k−1}` the coefficient
/// `c₁ + c₂ − c₃` on `V_{k−1}`.
pub fn build_measurement_model(
    params: &SensorParams,
    n_h: &Matrix2<f64>,
    n_d: &Matrix2<f64>,
) -> Result<MeasurementModel, SensorError> {
    params.validate()?;
    let (c1, c2, c3) = (params.c1(), params.c2(), params.c3());
    if c1 == 0.0 || !c1.is_finite() {
        return Err(SensorError::DegenerateParams("c1 = α/R_s is zero".into()));
    }
    let h = Matrix2x3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0) / c1;
    let d = Matrix2::new(c1 + c2 + c3, -c3, c3, c1 + c2 - c3) / c1;
    let mut n = n_h + d * n_d * d.transpose();
    n = (n + n.transpose()) * 0.5;
    Ok(MeasurementModel {
        h,
        d,
        n,
        c1,
        c2,
        c3,
    })
}

impl MeasurementModel {
    pub fn predict(&self, x_m: &Vector3<f64>, u_m: &Vector2<f64>) -> Vector2<f64> {
        self.h * x_m + self.d * u_m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn current_vanishes_at_rest() {
        let p = SensorParams::default();
        assert_eq!(mechanical_current(EncoderSample::default(), 0.0, &p), 0.0);
    }

    #[test]
    fn shunt_current() {
        let p = SensorParams::default();
        let i = mechanical_current(EncoderSample { v_m: 1.0, v: 0.0 }, 0.0, &p);
        assert_relative_eq!(i, 1.0 / 75.0, epsilon = 1e-15);
    }

    #[test]
    fn current_is_linear() {
        let p = SensorParams::default();
        let a = EncoderSample { v_m: 3.0, v: -1.0 };
        let b = EncoderSample { v_m: -0.5, v: 7.0 };
        let sum = EncoderSample {
            v_m: 2.0 * a.v_m + b.v_m,
            v: 2.0 * a.v + b.v,
        };
        let lhs = mechanical_current(sum, 2.0 * 10.0 + 4.0, &p);
        let rhs = 2.0 * mechanical_current(a, 10.0, &p) + mechanical_current(b, 4.0, &p);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn encoder_statics() {
        let p = SensorParams::default();
        assert_eq!(simulate_encoder(0.0, 0.0, 0.0, &p, None).v_m, 0.0);
        let v0 = 50.0;
        let s = simulate_encoder(0.0, v0, v0, &p, None);
        assert_relative_eq!(s.v_m, v0 * (1.0 + p.rs_kohm / p.r_kohm), epsilon = 1e-12);
    }

    #[test]
    fn noise_matches_configured_variance() {
        let p = SensorParams::default();
        let cfg = EncoderNoise {
            std_vm: 0.4,
            std_v: 0.1,
            ..Default::default()
        };
        let mut src = NoiseSource::new(cfg, 11);
        let samples: Vec<f64> = (0..1000)
            .map(|_| simulate_encoder(0.0, 0.0, 0.0, &p, Some(&mut src)).v_m)
            .collect();
        let mean = samples.iter().sum::<f64>() / 1000.0;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 999.0;
        assert!((var / 0.16 - 1.0).abs() < 0.15, "variance {var}");
    }

    #[test]
    fn seeded_noise_is_deterministic() {
        let p = SensorParams::default();
        let cfg = EncoderNoise {
            std_vm: 1.0,
            std_v: 1.0,
            ..Default::default()
        };
        let mut a = NoiseSource::new(cfg, 3);
        let mut b = NoiseSource::new(cfg, 3);
        for _ in 0..10 {
            assert_eq!(
                simulate_encoder(1.0, 2.0, 1.0, &p, Some(&mut a)),
                simulate_encoder(1.0, 2.0, 1.0, &p, Some(&mut b))
            );
        }
    }

    #[test]
    fn model_structure() {
        let p = SensorParams::default();
        let n_h = Matrix2::new(0.2, 0.0, 0.0, 0.2);
        let m = build_measurement_model(&p, &n_h, &Matrix2::zeros()).unwrap();
        assert_eq!(m.h.column(0).amax(), 0.0);
        assert_eq!(m.n, n_h);
        let n_d = Matrix2::new(0.1, 0.02, 0.02, 0.1);
        let m = build_measurement_model(&p, &n_h, &n_d).unwrap();
        assert!(m.n.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn degenerate_params_rejected() {
        let p = SensorParams {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(build_measurement_model(&p, &Matrix2::zeros(), &Matrix2::zeros()).is_err());
    }

    #[test]
    fn model_reproduces_stacked_difference_equations() {
        // Oracle: solve each difference equation for Vᵐ directly.
        let p = SensorParams::default();
        let m = build_measurement_model(&p, &Matrix2::zeros(), &Matrix2::zeros()).unwrap();
        let (c1, c2, c3) = (p.c1(), p.c2(), p.c3());
        let cases = [
            (0.02, 31.0, -12.0, 80.0, 77.5),
            (-0.1, -4.0, 2.5, -120.0, -118.0),
            (0.0, 0.0, 0.0, 10.0, 10.0),
        ];
        for (q, qd, qd_prev, v, v_prev) in cases {
            let vm_k = (qd + c1 * v + c2 * v + c3 * (v - v_prev)) / c1;
            let vm_prev = (qd_prev + c1 * v_prev + c2 * v_prev + c3 * (v - v_prev)) / c1;
            let y = m.predict(&Vector3::new(q, qd, qd_prev), &Vector2::new(v, v_prev));
            assert_relative_eq!(y[0], vm_k, epsilon = 1e-10);
            assert_relative_eq!(y[1], vm_prev, epsilon = 1e-10);
            // The current-sample row is exactly the simulated encoder.
            let s = simulate_encoder(qd, v, v_prev, &p, None);
            assert_relative_eq!(y[0], s.v_m, epsilon = 1e-10);
        }
    }
}
