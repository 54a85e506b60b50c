//! Linear process-model identification for one transmission.
//!
//! The full state is observed in simulation, so the model is fitted by
//! one-step affine least squares `x_{k+1} ≈ A x_k + B u_k + c` and then
//! rewritten about its fixed point as
//! `x_{k+1} − x₀ = A(x_k − x₀) + B(u_k − u₀)`.

use nalgebra::{DMatrix, Matrix4, Matrix4x2, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{LegForce, PlantError, TransmissionParams, TransmissionState};
use crate::riccati::spectral_radius;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SysIdError {
    #[error("invalid excitation range: {0}")]
    InvalidRange(String),
    #[error("dataset is not persistently exciting (rank {rank} of {needed})")]
    RankDeficient { rank: usize, needed: usize },
    #[error("identified model is unstable (spectral radius {0})")]
    UnstableFit(f64),
    #[error("dataset is empty or too short")]
    EmptyDataset,
    #[error("inputs ({inputs}) and states ({states}) differ in length")]
    LengthMismatch { inputs: usize, states: usize },
    #[error("dataset contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Plant(#[from] PlantError),
}

pub const MIN_SAMPLES: usize = 100;

/// Sampled voltage inputs and transmission states. `inputs[k]` is held
/// over the interval from `states[k]` to `states[k + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDataset {
    pub inputs: Vec<[f64; 2]>,
    pub states: Vec<TransmissionState>,
    pub dt: f64,
}

impl ResponseDataset {
    pub fn validate(&self) -> Result<(), SysIdError> {
        if self.inputs.len() != self.states.len() {
            return Err(SysIdError::LengthMismatch {
                inputs: self.inputs.len(),
                states: self.states.len(),
            });
        }
        if self.states.len() < MIN_SAMPLES {
            return Err(SysIdError::EmptyDataset);
        }
        let finite = self.inputs.iter().all(|u| u.iter().all(|v| v.is_finite()))
            && self.states.iter().all(|s| s.is_finite())
            && self.dt.is_finite()
            && self.dt > 0.0;
        if finite {
            Ok(())
        } else {
            Err(SysIdError::NonFinite)
        }
    }

    /// Splits into a leading part with `fraction` of the samples and the rest.
    pub fn split(&self, fraction: f64) -> (ResponseDataset, ResponseDataset) {
        let n = ((self.states.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
        let part = |r: std::ops::Range<usize>| ResponseDataset {
            inputs: self.inputs[r.clone()].to_vec(),
            states: self.states[r].to_vec(),
            dt: self.dt,
        };
        (part(0..n), part(n..self.states.len()))
    }
}

/// Identified linear model of one transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessModel {
    #[serde(with = "crate::matrix_rows")]
    pub a: Matrix4<f64>,
    #[serde(with = "crate::matrix_rows")]
    pub b: Matrix4x2<f64>,
    #[serde(with = "crate::matrix_rows")]
    pub w: Matrix4<f64>,
    pub x0: Vector4<f64>,
    pub u0: Vector2<f64>,
    pub dt: f64,
    /// Seed of the excitation the model was fitted on, if known.
    pub seed: Option<u64>,
    /// Set when the fit was rescaled to enforce stability.
    pub stability_enforced: bool,
}

impl ProcessModel {
    /// One-step prediction in absolute coordinates.
    pub fn predict(&self, x: &Vector4<f64>, u: &Vector2<f64>) -> Vector4<f64> {
        self.x0 + self.a * (x - self.x0) + self.b * (u - self.u0)
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&DMatrix::from_column_slice(4, 4, self.a.as_slice())).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Singular values below `rank_tol · σ_max` count as rank loss.
    pub rank_tol: f64,
    /// Radius the spectrum is scaled to when the raw fit is not stable.
    /// `None` turns an unstable fit into an error.
    pub stable_radius: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            rank_tol: 1e-10,
            stable_radius: Some(0.999),
        }
    }
}

/// Two-channel multisine with every frequency bin of the record in
/// `[f_lo, f_hi]`, seeded random phases, scaled to a peak of `amplitude`.
///
/// Because the components sit exactly on the record's DFT bins there is no
/// leakage outside the band.
pub fn design_excitation(
    freq_range: (f64, f64),
    amplitude: f64,
    duration: f64,
    dt: f64,
    seed: u64,
) -> Result<Vec<[f64; 2]>, SysIdError> {
    let (f_lo, f_hi) = freq_range;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SysIdError::InvalidRange(format!("dt = {dt}")));
    }
    let nyquist = 0.5 / dt;
    if !(f_lo > 0.0 && f_lo < f_hi && f_hi <= nyquist) {
        return Err(SysIdError::InvalidRange(format!(
            "need 0 < {f_lo} < {f_hi} <= {nyquist} Hz"
        )));
    }
    if !(duration >= 20.0 / f_lo) {
        return Err(SysIdError::InvalidRange(format!(
            "duration {duration} s shorter than 20 cycles of {f_lo} Hz"
        )));
    }
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(SysIdError::InvalidRange(format!("amplitude = {amplitude}")));
    }
    let n = (duration / dt).round() as usize;
    let record = n as f64 * dt;
    let k_lo = (f_lo * record - 1e-9).ceil() as usize;
    let k_hi = (f_hi * record + 1e-9).floor() as usize;
    if k_hi < k_lo {
        return Err(SysIdError::InvalidRange("band holds no frequency bin".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![[0.0; 2]; n];
    for ch in 0..2 {
        let mut signal = vec![0.0; n];
        for k in k_lo..=k_hi {
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let step = std::f64::consts::TAU * k as f64 / n as f64;
            // Rotate a phasor instead of calling cos per sample; renormalize
            // periodically to stop drift.
            let (rs, rc) = step.sin_cos();
            let (mut s, mut c) = phase.sin_cos();
            for (i, v) in signal.iter_mut().enumerate() {
                *v += c;
                let (s1, c1) = (s * rc + c * rs, c * rc - s * rs);
                s = s1;
                c = c1;
                if i % 1024 == 1023 {
                    let norm = (s * s + c * c).sqrt();
                    s /= norm;
                    c /= norm;
                }
            }
        }
        let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
        for (o, v) in out.iter_mut().zip(signal) {
            o[ch] = v * scale;
        }
    }
    Ok(out)
}

/// Drives a free transmission from rest with `inputs` and records the
/// response at the input rate.
pub fn collect_response(
    params: &TransmissionParams,
    inputs: &[[f64; 2]],
    dt: f64,
) -> Result<ResponseDataset, SysIdError> {
    let mut states = Vec::with_capacity(inputs.len());
    let mut s = TransmissionState::default();
    for u in inputs {
        states.push(s);
        s = params.step(&s, *u, LegForce::default(), dt)?;
    }
    Ok(ResponseDataset {
        inputs: inputs.to_vec(),
        states,
        dt,
    })
}

pub fn fit_linear_model(data: &ResponseDataset) -> Result<ProcessModel, SysIdError> {
    fit_linear_model_with(data, FitOptions::default())
}

pub fn fit_linear_model_with(
    data: &ResponseDataset,
    options: FitOptions,
) -> Result<ProcessModel, SysIdError> {
    data.validate()?;
    let m = data.states.len() - 1;
    const P: usize = 7;
    // Regressor rows [x_k, u_k, 1].
    let mut z = DMatrix::<f64>::zeros(m, P);
    let mut y = DMatrix::<f64>::zeros(m, 4);
    for k in 0..m {
        let x = data.states[k].to_vector();
        let u = data.inputs[k];
        for j in 0..4 {
            z[(k, j)] = x[j];
        }
        z[(k, 4)] = u[0];
        z[(k, 5)] = u[1];
        z[(k, 6)] = 1.0;
        let next = data.states[k + 1].to_vector();
        for j in 0..4 {
            y[(k, j)] = next[j];
        }
    }
    // Column scaling keeps mm, mm/s and V on comparable footing.
    let mut scale = [1.0; P];
    for (j, s) in scale.iter_mut().enumerate() {
        let rms = (z.column(j).norm_squared() / m as f64).sqrt();
        if rms == 0.0 {
            return Err(SysIdError::RankDeficient {
                rank: P - 1,
                needed: P,
            });
        }
        *s = rms;
    }
    for j in 0..P {
        let s = scale[j];
        z.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = z.svd(true, true);
    let s_max = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > options.rank_tol * s_max)
        .count();
    if rank < P {
        return Err(SysIdError::RankDeficient { rank, needed: P });
    }
    let theta = svd
        .solve(&y, 0.0)
        .map_err(|_| SysIdError::RankDeficient { rank, needed: P })?;
    let coef = |row: usize, col: usize| theta[(row, col)] / scale[row];
    let mut a = Matrix4::from_fn(|i, j| coef(j, i));
    let b = Matrix4x2::from_fn(|i, j| coef(4 + j, i));
    let c = Vector4::from_fn(|i, _| coef(6, i));

    let mut w = Matrix4::zeros();
    let mut mean = Vector4::zeros();
    let mut residuals = Vec::with_capacity(m);
    for k in 0..m {
        let x = data.states[k].to_vector();
        let u = Vector2::new(data.inputs[k][0], data.inputs[k][1]);
        let r = data.states[k + 1].to_vector() - (a * x + b * u + c);
        mean += r;
        residuals.push(r);
    }
    mean /= m as f64;
    for r in &residuals {
        let d = r - mean;
        w += d * d.transpose();
    }
    w /= (m - 1) as f64;
    w = (w + w.transpose()) * 0.5;

    let mut stability_enforced = false;
    let rho = spectral_radius(&DMatrix::from_column_slice(4, 4, a.as_slice()))
        .map_err(|_| SysIdError::NonFinite)?;
    if rho >= 1.0 {
        match options.stable_radius {
            Some(target) => {
                log::warn!("identified model has spectral radius {rho:.6}; scaling to {target}");
                a *= target / rho;
                stability_enforced = true;
            }
            None => return Err(SysIdError::UnstableFit(rho)),
        }
    }

    let u0 = data
        .inputs
        .iter()
        .fold(Vector2::zeros(), |acc, u| acc + Vector2::new(u[0], u[1]))
        / data.inputs.len() as f64;
    // Fixed point of the affine fit at the mean input.
    let x0 = (Matrix4::identity() - a)
        .lu()
        .solve(&(b * u0 + c))
        .ok_or(SysIdError::UnstableFit(rho))?;

    Ok(ProcessModel {
        a,
        b,
        w,
        x0,
        u0,
        dt: data.dt,
        seed: None,
        stability_enforced,
    })
}

/// RMS of the `horizon`-step open-loop prediction error, per state
/// component normalized by the RMS of that component about the fixed point,
/// averaged over components.
pub fn prediction_error(
    model: &ProcessModel,
    data: &ResponseDataset,
    horizon: usize,
) -> Result<f64, SysIdError> {
    if horizon == 0 {
        return Err(SysIdError::InvalidRange("horizon must be >= 1".into()));
    }
    if data.states.len() <= horizon || data.inputs.len() != data.states.len() {
        return Err(SysIdError::EmptyDataset);
    }
    let mut err2 = Vector4::<f64>::zeros();
    let mut ref2 = Vector4::<f64>::zeros();
    let u = |k: usize| Vector2::new(data.inputs[k][0], data.inputs[k][1]);
    for k in 0..data.states.len() - horizon {
        let mut dx = data.states[k].to_vector() - model.x0;
        for j in 0..horizon {
            dx = model.a * dx + model.b * (u(k + j) - model.u0);
        }
        let target = data.states[k + horizon].to_vector() - model.x0;
        err2 += (target - dx).component_mul(&(target - dx));
        ref2 += target.component_mul(&target);
    }
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..4 {
        if ref2[i] > 0.0 {
            sum += (err2[i] / ref2[i]).sqrt();
            count += 1;
        }
    }
    if count == 0 {
        return Err(SysIdError::EmptyDataset);
    }
    Ok(sum / count as f64)
}
