//! Locomotion and tracking metrics computed from trial traces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gait::GaitKind;
use crate::plant::LEGS;
use crate::units::{GRAVITY_M_S2, KINEMATIC_STEP_LENGTH_MM, MM_S_TO_M_S, MW_TO_W, ROBOT_MASS_KG};

/// Strides dropped from the start of every trace.
pub const DISCARD_STRIDES: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("trace has no complete stride to analyse")]
    EmptyTrace,
    #[error("trace has no ground contact in the analysis window")]
    MissingContactData,
    #[error("total electrical power is not positive ({0} W)")]
    ZeroElectricalPower(f64),
    #[error("reference has zero peak-to-peak amplitude")]
    DegenerateReference,
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// One control tick. Per-leg arrays are indexed by [`crate::plant::Leg::index`],
/// inner pairs are `[swing, lift]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub body_x: f64,
    pub body_z: f64,
    pub body_vx: f64,
    /// World-frame tip x velocity (mm/s).
    pub tip_vx: [f64; LEGS],
    pub in_contact: [bool; LEGS],
    pub v_cmd: [[f64; 2]; LEGS],
    pub v: [[f64; 2]; LEGS],
    pub v_m: [[f64; 2]; LEGS],
    /// Mechanical current (mA).
    pub i_m: [[f64; 2]; LEGS],
    /// Actuator positions (mm).
    pub truth: [[f64; 2]; LEGS],
    pub estimate: [[f64; 2]; LEGS],
    pub reference: [[f64; 2]; LEGS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTrace {
    pub dt: f64,
    pub period_s: f64,
    pub gait: GaitKind,
    pub mass_kg: f64,
    pub samples: Vec<TraceSample>,
}

impl TrialTrace {
    pub fn new(dt: f64, period_s: f64, gait: GaitKind) -> Self {
        Self {
            dt,
            period_s,
            gait,
            mass_kg: ROBOT_MASS_KG,
            samples: Vec::new(),
        }
    }

    /// Half-open sample ranges of the whole strides kept for analysis.
    pub fn strides(&self) -> Vec<(usize, usize)> {
        let per = self.period_s / self.dt;
        let total = (self.samples.len() as f64 / per + 1e-9).floor() as usize;
        (DISCARD_STRIDES.min(total)..total)
            .map(|j| {
                let a = (j as f64 * per).round() as usize;
                let b = (((j + 1) as f64 * per).round() as usize).min(self.samples.len());
                (a, b)
            })
            .filter(|(a, b)| b > a)
            .collect()
    }

    fn window(&self) -> Result<Vec<(usize, usize)>, MetricsError> {
        let s = self.strides();
        if s.is_empty() {
            Err(MetricsError::EmptyTrace)
        } else {
            Ok(s)
        }
    }

    /// +1 or −1 from the net body displacement over the analysis window.
    pub fn heading(&self) -> f64 {
        match self.strides().as_slice() {
            [] => 1.0,
            s => {
                let first = self.samples[s[0].0].body_x;
                let last = self.samples[s[s.len() - 1].1 - 1].body_x;
                if last < first {
                    -1.0
                } else {
                    1.0
                }
            }
        }
    }

    fn mean_vx(&self, (a, b): (usize, usize)) -> f64 {
        self.samples[a..b].iter().map(|s| s.body_vx).sum::<f64>() / (b - a) as f64
    }
}

fn stride_freq(trace: &TrialTrace) -> f64 {
    1.0 / trace.period_s
}

/// `ν = v / (L_s·n·f)` with `v` the mean body x velocity over whole strides.
pub fn normalized_speed(trace: &TrialTrace) -> Result<f64, MetricsError> {
    let strides = trace.window()?;
    let (a, b) = (strides[0].0, strides[strides.len() - 1].1);
    let v = trace.samples[a..b].iter().map(|s| s.body_vx).sum::<f64>() / (b - a) as f64;
    let n = trace.gait.steps_per_stride() as f64;
    Ok(v / (KINEMATIC_STEP_LENGTH_MM * n * stride_freq(trace)))
}

/// Per-stride `1 − slip/(4·L_s)`, averaged. Slip accumulates `|v_x|` of
/// tips in contact moving against the heading.
pub fn step_effectiveness(trace: &TrialTrace) -> Result<f64, MetricsError> {
    let strides = trace.window()?;
    let heading = trace.heading();
    let mut any_contact = false;
    let mut total = 0.0;
    for &(a, b) in &strides {
        let mut slip = 0.0;
        for s in &trace.samples[a..b] {
            for leg in 0..LEGS {
                if s.in_contact[leg] {
                    any_contact = true;
                    if s.tip_vx[leg] * heading < 0.0 {
                        slip += s.tip_vx[leg].abs() * trace.dt;
                    }
                }
            }
        }
        total += (1.0 - slip / (LEGS as f64 * KINEMATIC_STEP_LENGTH_MM)).clamp(0.0, 1.0);
    }
    if !any_contact {
        return Err(MetricsError::MissingContactData);
    }
    Ok(total / strides.len() as f64)
}

/// Per-stride `m·g·v_x / Σ mean(i_m·V_m)`, averaged.
pub fn locomotion_economy(trace: &TrialTrace) -> Result<f64, MetricsError> {
    let strides = trace.window()?;
    let mut total = 0.0;
    for &(a, b) in &strides {
        let span = &trace.samples[a..b];
        let mech = trace.mass_kg * GRAVITY_M_S2 * trace.mean_vx((a, b)) * MM_S_TO_M_S;
        let elec_mw = span
            .iter()
            .map(|s| {
                (0..LEGS)
                    .map(|l| s.i_m[l][0] * s.v_m[l][0] + s.i_m[l][1] * s.v_m[l][1])
                    .sum::<f64>()
            })
            .sum::<f64>()
            / span.len() as f64;
        let elec = elec_mw * MW_TO_W;
        if !(elec > 0.0) {
            return Err(MetricsError::ZeroElectricalPower(elec));
        }
        total += mech / elec;
    }
    Ok(total / strides.len() as f64)
}

/// Mean over `cycles` equal chunks of the RMS error, over the reference's
/// peak-to-peak amplitude.
pub fn normalized_rms_error(actual: &[f64], reference: &[f64], cycles: usize) -> Result<f64, MetricsError> {
    if actual.len() != reference.len() {
        return Err(MetricsError::LengthMismatch(actual.len(), reference.len()));
    }
    let n = reference.len();
    let cycles = cycles.max(1);
    if n < cycles {
        return Err(MetricsError::EmptyTrace);
    }
    let (lo, hi) = reference
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    let p2p = hi - lo;
    if !(p2p > 0.0) {
        return Err(MetricsError::DegenerateReference);
    }
    let mut sum = 0.0;
    for c in 0..cycles {
        let a = c * n / cycles;
        let b = (c + 1) * n / cycles;
        let ms = (a..b).map(|i| (actual[i] - reference[i]).powi(2)).sum::<f64>() / (b - a) as f64;
        sum += ms.sqrt();
    }
    Ok(sum / cycles as f64 / p2p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Estimate against ground truth.
    Estimation,
    /// Estimate against the desired trajectory.
    Tracking,
}

/// Normalized error per actuator class `[swing, lift]`, averaged over legs.
pub fn actuator_errors(trace: &TrialTrace, kind: ErrorKind) -> Result<[f64; 2], MetricsError> {
    let strides = trace.window()?;
    let (a, b) = (strides[0].0, strides[strides.len() - 1].1);
    let span = &trace.samples[a..b];
    let mut out = [0.0; 2];
    for (ch, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for leg in 0..LEGS {
            let est: Vec<f64> = span.iter().map(|s| s.estimate[leg][ch]).collect();
            let target: Vec<f64> = span
                .iter()
                .map(|s| match kind {
                    ErrorKind::Estimation => s.truth[leg][ch],
                    ErrorKind::Tracking => s.reference[leg][ch],
                })
                .collect();
            acc += normalized_rms_error(&est, &target, strides.len())?;
        }
        *slot = acc / LEGS as f64;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub nu: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub cot: f64,
    pub e_est: [f64; 2],
    pub e_cont: [f64; 2],
    /// `ν > 1`: stride longer than the kinematic limit.
    pub superkinematic: bool,
    pub backward: bool,
}

impl MetricsRecord {
    /// Metrics that cannot be computed (e.g. σ without contact) are NaN.
    pub fn from_trace(trace: &TrialTrace) -> Result<Self, MetricsError> {
        let nu = normalized_speed(trace)?;
        let sigma = step_effectiveness(trace).unwrap_or(f64::NAN);
        let epsilon = locomotion_economy(trace).unwrap_or(f64::NAN);
        let nan2 = [f64::NAN; 2];
        Ok(Self {
            nu,
            sigma,
            epsilon,
            cot: cost_of_transport(epsilon),
            e_est: actuator_errors(trace, ErrorKind::Estimation).unwrap_or(nan2),
            e_cont: actuator_errors(trace, ErrorKind::Tracking).unwrap_or(nan2),
            superkinematic: nu > 1.0,
            backward: trace.heading() < 0.0,
        })
    }
}

pub fn cost_of_transport(epsilon: f64) -> f64 {
    if epsilon == 0.0 {
        f64::INFINITY
    } else {
        1.0 / epsilon
    }
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. NaN pairs are
/// dropped; fewer than two pairs or a constant series gives NaN.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .unzip();
    if xs.len() < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (ranks(&xs), ranks(&ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
