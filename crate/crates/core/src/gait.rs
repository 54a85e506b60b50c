//! Parametric leg reference trajectories.
//!
//! Each gait is described by a piecewise-linear skeleton over one stride
//! (phase in `[0, 1)`), densified and passed through a periodic cubic
//! spline. Sign conventions: `+q_s` protracts the leg (forward), `+q_l`
//! adducts it (down, toward the ground).

use nalgebra::{DMatrix, DVector, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{Leg, LEGS};
use crate::units::UM_TO_MM;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaitError {
    #[error("gait parameter {name} = {value} outside [{lo}, {hi}]")]
    ParamOutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("keyframes do not describe one period: {0}")]
    NonPeriodicKeyframes(String),
    #[error("sinusoid baseline needs RMS data from a closed-loop trial")]
    MissingBaselineData,
    #[error("wrong gait for this schedule: {0}")]
    WrongGait(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaitKind {
    Trot,
    Pronk,
}

impl GaitKind {
    /// Steps per stride.
    pub fn steps_per_stride(self) -> u32 {
        match self {
            GaitKind::Trot => 2,
            GaitKind::Pronk => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            GaitKind::Trot => "trot",
            GaitKind::Pronk => "pronk",
        }
    }
}

impl std::str::FromStr for GaitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trot" => Ok(GaitKind::Trot),
            "pronk" => Ok(GaitKind::Pronk),
            other => Err(format!("unknown gait '{other}'")),
        }
    }
}

/// Shape parameters in the units of the trajectory table: amplitudes in µm,
/// `s1` and `s3` in percent of the period, `s2` in percent of the lift
/// amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitParams {
    pub gait: GaitKind,
    pub amp_swing_um: f64,
    pub amp_lift_um: f64,
    pub period_s: f64,
    pub s1: f64,
    pub s2: Option<f64>,
    pub s3: Option<f64>,
}

pub const TROT_AMPLITUDE_UM: f64 = 175.0;
pub const PRONK_AMPLITUDE_UM: f64 = 150.0;
pub const FREQ_RANGE_HZ: (f64, f64) = (10.0, 50.0);
pub const S1_RANGE: (f64, f64) = (50.0, 80.0);
pub const S2_RANGE: (f64, f64) = (-75.0, 25.0);
pub const S3_RANGE: (f64, f64) = (20.0, 80.0);

/// Lift ramp width of the pronk skeleton (fraction of the period).
pub const PRONK_RAMP: f64 = 0.1;

fn check(name: &'static str, value: f64, (lo, hi): (f64, f64)) -> Result<(), GaitError> {
    let slack = 1e-9 * hi.abs().max(1.0);
    if value.is_finite() && value >= lo - slack && value <= hi + slack {
        Ok(())
    } else {
        Err(GaitError::ParamOutOfRange { name, value, lo, hi })
    }
}

impl GaitParams {
    pub fn trot(freq_hz: f64, s1: f64, s2: f64) -> Self {
        Self {
            gait: GaitKind::Trot,
            amp_swing_um: TROT_AMPLITUDE_UM,
            amp_lift_um: TROT_AMPLITUDE_UM,
            period_s: 1.0 / freq_hz,
            s1,
            s2: Some(s2),
            s3: None,
        }
    }

    pub fn pronk(freq_hz: f64, s1: f64, s3: f64) -> Self {
        Self {
            gait: GaitKind::Pronk,
            amp_swing_um: PRONK_AMPLITUDE_UM,
            amp_lift_um: PRONK_AMPLITUDE_UM,
            period_s: 1.0 / freq_hz,
            s1,
            s2: None,
            s3: Some(s3),
        }
    }

    pub fn frequency(&self) -> f64 {
        1.0 / self.period_s
    }

    pub fn validate(&self) -> Result<(), GaitError> {
        check("f", self.frequency(), FREQ_RANGE_HZ)?;
        check("S1", self.s1, S1_RANGE)?;
        check("A_S", self.amp_swing_um, (f64::MIN_POSITIVE, 1e4))?;
        check("A_L", self.amp_lift_um, (f64::MIN_POSITIVE, 1e4))?;
        match self.gait {
            GaitKind::Trot => check("S2", self.s2.unwrap_or(f64::NAN), S2_RANGE),
            GaitKind::Pronk => check("S3", self.s3.unwrap_or(f64::NAN), S3_RANGE),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    /// Fraction of the stride period.
    pub phase: f64,
    /// Actuator position (mm).
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    /// Corners of a piecewise-linear target; densified before splining.
    Skeleton,
    /// Samples of a smooth target; splined as given.
    Smooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeSchedule {
    pub swing: Vec<Keyframe>,
    pub lift: Vec<Keyframe>,
    pub interpolation: Interpolation,
}

fn kf(phase: f64, value: f64) -> Keyframe {
    Keyframe { phase, value }
}

fn swing_skeleton(p: &GaitParams) -> Vec<Keyframe> {
    let half = 0.5 * p.amp_swing_um * UM_TO_MM;
    vec![kf(0.0, half), kf(p.s1 / 100.0, -half)]
}

/// Trot: constant-speed retraction over `S1`% of the stride, lift peak of
/// `S2`% of `A_L` centered in the retraction, abduction to `−A_L/2` centered
/// in the protraction.
pub fn keyframes_trot(p: &GaitParams) -> Result<KeyframeSchedule, GaitError> {
    if p.gait != GaitKind::Trot {
        return Err(GaitError::WrongGait("trot keyframes need trot params"));
    }
    p.validate()?;
    let r = p.s1 / 100.0;
    let a_l = p.amp_lift_um * UM_TO_MM;
    let s2 = p.s2.unwrap_or(0.0) / 100.0;
    Ok(KeyframeSchedule {
        swing: swing_skeleton(p),
        lift: vec![kf(0.5 * r, s2 * a_l), kf(r + 0.5 * (1.0 - r), -0.5 * a_l)],
        interpolation: Interpolation::Skeleton,
    })
}

/// Pronk: swing as for the trot; lift adducted to `+A_L/2` for `S3`% of the
/// stride from phase 0 and abducted to `−A_L/2` for the rest, with short
/// ramps centered on the two switching instants.
pub fn keyframes_pronk(p: &GaitParams) -> Result<KeyframeSchedule, GaitError> {
    if p.gait != GaitKind::Pronk {
        return Err(GaitError::WrongGait("pronk keyframes need pronk params"));
    }
    p.validate()?;
    let half = 0.5 * p.amp_lift_um * UM_TO_MM;
    let s3 = p.s3.unwrap_or(50.0) / 100.0;
    let h = 0.5 * PRONK_RAMP;
    Ok(KeyframeSchedule {
        swing: swing_skeleton(p),
        lift: vec![
            kf(h, half),
            kf(s3 - h, half),
            kf(s3 + h, -half),
            kf(1.0 - h, -half),
        ],
        interpolation: Interpolation::Skeleton,
    })
}

pub fn keyframes(p: &GaitParams) -> Result<KeyframeSchedule, GaitError> {
    match p.gait {
        GaitKind::Trot => keyframes_trot(p),
        GaitKind::Pronk => keyframes_pronk(p),
    }
}

/// Sorts keyframes into `[0, 1)` and folds a closing frame at phase 1.
fn normalize(frames: &[Keyframe]) -> Result<Vec<Keyframe>, GaitError> {
    if frames.is_empty() {
        return Err(GaitError::NonPeriodicKeyframes("no keyframes".into()));
    }
    let mut out: Vec<Keyframe> = Vec::with_capacity(frames.len());
    let mut sorted = frames.to_vec();
    if sorted.iter().any(|k| !(k.phase.is_finite() && k.value.is_finite())) {
        return Err(GaitError::NonPeriodicKeyframes("non-finite keyframe".into()));
    }
    if sorted.iter().any(|k| k.phase < 0.0 || k.phase > 1.0) {
        return Err(GaitError::NonPeriodicKeyframes("phase outside [0, 1]".into()));
    }
    sorted.sort_by(|a, b| a.phase.total_cmp(&b.phase));
    let closing: Vec<Keyframe> = sorted.iter().copied().filter(|k| k.phase == 1.0).collect();
    for k in sorted.into_iter().filter(|k| k.phase < 1.0) {
        match out.last() {
            Some(last) if (k.phase - last.phase).abs() < 1e-12 => {
                if last.value != k.value {
                    return Err(GaitError::NonPeriodicKeyframes(format!(
                        "conflicting values at phase {}",
                        k.phase
                    )));
                }
            }
            _ => out.push(k),
        }
    }
    for c in closing {
        match out.first() {
            Some(first) if first.phase == 0.0 && first.value != c.value => {
                return Err(GaitError::NonPeriodicKeyframes(
                    "values at phase 0 and 1 differ".into(),
                ));
            }
            Some(first) if first.phase == 0.0 => {}
            _ => out.insert(0, kf(0.0, c.value)),
        }
    }
    Ok(out)
}

/// Samples the periodic piecewise-linear interpolant so every segment gets
/// about `knots_per_period · length` pieces; corners stay knots.
fn densify(corners: &[Keyframe], knots_per_period: usize) -> Vec<Keyframe> {
    let n = corners.len();
    if n < 2 {
        return corners.to_vec();
    }
    let mut out = Vec::new();
    for i in 0..n {
        let a = corners[i];
        let b = corners[(i + 1) % n];
        let end = if i + 1 == n { b.phase + 1.0 } else { b.phase };
        let len = end - a.phase;
        let pieces = ((len * knots_per_period as f64).round() as usize).max(1);
        for j in 0..pieces {
            let f = j as f64 / pieces as f64;
            out.push(kf(
                (a.phase + f * len).rem_euclid(1.0),
                a.value + f * (b.value - a.value),
            ));
        }
    }
    out
}

/// Periodic (period 1) interpolating cubic spline on arbitrary knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl PeriodicSpline {
    pub fn fit(frames: &[Keyframe]) -> Result<Self, GaitError> {
        let frames = normalize(frames)?;
        let n = frames.len();
        let knots: Vec<f64> = frames.iter().map(|k| k.phase).collect();
        let values: Vec<f64> = frames.iter().map(|k| k.value).collect();
        let h = |i: usize| -> f64 {
            if i + 1 < n {
                knots[i + 1] - knots[i]
            } else {
                knots[0] + 1.0 - knots[n - 1]
            }
        };
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for i in 0..n {
            let prev = (i + n - 1) % n;
            let next = (i + 1) % n;
            let (hp, hi) = (h(prev), h(i));
            m[(i, prev)] += hp;
            m[(i, i)] += 2.0 * (hp + hi);
            m[(i, next)] += hi;
            rhs[i] = 6.0 * ((values[next] - values[i]) / hi - (values[i] - values[prev]) / hp);
        }
        let second = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| GaitError::NonPeriodicKeyframes("singular spline system".into()))?;
        Ok(Self {
            knots,
            values,
            second: second.iter().copied().collect(),
        })
    }

    /// Value and derivative with respect to phase.
    pub fn eval(&self, phase: f64) -> (f64, f64) {
        let n = self.knots.len();
        let t0 = self.knots[0];
        let mut p = (phase - t0).rem_euclid(1.0) + t0;
        if p >= t0 + 1.0 {
            p -= 1.0;
        }
        let i = match self.knots.partition_point(|&k| k <= p) {
            0 => 0,
            j => j - 1,
        };
        let next = (i + 1) % n;
        let t_next = if i + 1 < n { self.knots[i + 1] } else { t0 + 1.0 };
        let h = t_next - self.knots[i];
        let (a, b) = (t_next - p, p - self.knots[i]);
        let (mi, mn) = (self.second[i], self.second[next]);
        let (yi, yn) = (self.values[i], self.values[next]);
        let ci = yi / h - mi * h / 6.0;
        let cn = yn / h - mn * h / 6.0;
        let value = mi * a.powi(3) / (6.0 * h) + mn * b.powi(3) / (6.0 * h) + ci * a + cn * b;
        let slope = -mi * a * a / (2.0 * h) + mn * b * b / (2.0 * h) - ci + cn;
        (value, slope)
    }
}

/// Smooth periodic reference for one leg class, shared by all legs up to a
/// phase offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub period_s: f64,
    pub dt: f64,
    pub swing: PeriodicSpline,
    pub lift: PeriodicSpline,
    /// One period of `(q_s, q̇_s, q_l, q̇_l)` on the grid `k·T/n`, with
    /// `n = round(T/dt)`.
    pub samples: Vec<Vector4<f64>>,
    /// Per-leg phase offsets (fraction of the period).
    pub phases: [f64; LEGS],
}

/// Dense enough to keep corner ringing under 4% of the amplitude.
pub const DEFAULT_KNOTS_PER_PERIOD: usize = 48;

pub fn spline_reference(
    keyframes: &KeyframeSchedule,
    period_s: f64,
    dt: f64,
) -> Result<ReferenceTrajectory, GaitError> {
    spline_reference_with(keyframes, period_s, dt, DEFAULT_KNOTS_PER_PERIOD)
}

pub fn spline_reference_with(
    keyframes: &KeyframeSchedule,
    period_s: f64,
    dt: f64,
    knots_per_period: usize,
) -> Result<ReferenceTrajectory, GaitError> {
    if !(period_s > 0.0 && dt > 0.0 && period_s.is_finite() && dt.is_finite()) {
        return Err(GaitError::NonPeriodicKeyframes(format!(
            "period {period_s} s, dt {dt} s"
        )));
    }
    let prepare = |frames: &[Keyframe]| -> Result<Vec<Keyframe>, GaitError> {
        let frames = normalize(frames)?;
        Ok(match keyframes.interpolation {
            Interpolation::Skeleton => densify(&frames, knots_per_period),
            Interpolation::Smooth => frames,
        })
    };
    let swing = PeriodicSpline::fit(&prepare(&keyframes.swing)?)?;
    let lift = PeriodicSpline::fit(&prepare(&keyframes.lift)?)?;
    let n = ((period_s / dt).round() as usize).max(1);
    let mut traj = ReferenceTrajectory {
        period_s,
        dt,
        swing,
        lift,
        samples: Vec::with_capacity(n),
        phases: [0.0; LEGS],
    };
    traj.samples = (0..n)
        .map(|k| traj.at_phase(k as f64 / n as f64))
        .collect();
    Ok(traj)
}

impl ReferenceTrajectory {
    pub fn with_phases(mut self, phases: [f64; LEGS]) -> Self {
        self.phases = phases;
        self
    }

    /// State at stride phase `phase`, velocities in mm/s.
    pub fn at_phase(&self, phase: f64) -> Vector4<f64> {
        let (s, ds) = self.swing.eval(phase);
        let (l, dl) = self.lift.eval(phase);
        Vector4::new(s, ds / self.period_s, l, dl / self.period_s)
    }

    /// Reference for `leg` at time `t` (s).
    pub fn leg_state(&self, t: f64, leg: Leg) -> Vector4<f64> {
        self.at_phase(t / self.period_s + self.phases[leg.index()])
    }

    /// Fraction of the sampled period spent retracting (`q̇_s < 0`).
    pub fn retraction_fraction(&self) -> f64 {
        let n = self.samples.len().max(1);
        let fine = 20 * n;
        (0..fine)
            .filter(|&k| self.swing.eval(k as f64 / fine as f64).1 < 0.0)
            .count() as f64
            / fine as f64
    }
}

/// Per-leg phase offsets for (FL, FR, RL, RR).
pub fn assign_leg_phases(gait: GaitKind) -> [f64; LEGS] {
    match gait {
        GaitKind::Trot => [0.0, 0.5, 0.5, 0.0],
        GaitKind::Pronk => [0.0; LEGS],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    Coupled,
    Decoupled,
}

impl std::str::FromStr for Matching {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coupled" => Ok(Matching::Coupled),
            "decoupled" => Ok(Matching::Decoupled),
            other => Err(format!("unknown matching '{other}'")),
        }
    }
}

/// AC RMS drive voltages `[swing, lift]` per leg from a closed-loop trial.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RmsTargets {
    pub per_actuator: [[f64; 2]; LEGS],
}

/// Open-loop sinusoidal drive: swing `u₀ + A_s·cos`, lift `u₀ + A_l·sin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineDrive {
    pub period_s: f64,
    pub amplitude: [f64; 2],
    pub offset: [f64; 2],
    pub phases: [f64; LEGS],
}

impl SineDrive {
    pub fn voltage(&self, t: f64, leg: Leg) -> [f64; 2] {
        let ph = std::f64::consts::TAU * (t / self.period_s + self.phases[leg.index()]);
        [
            self.offset[0] + self.amplitude[0] * ph.cos(),
            self.offset[1] + self.amplitude[1] * ph.sin(),
        ]
    }
}

/// Input-matched sinusoid baseline for `gait` at `period_s`.
pub fn sinusoid_reference(
    gait: GaitKind,
    period_s: f64,
    matching: Matching,
    rms: &RmsTargets,
    offset: [f64; 2],
) -> Result<SineDrive, GaitError> {
    let all: Vec<f64> = rms.per_actuator.iter().flatten().copied().collect();
    if all.iter().any(|v| !v.is_finite() || *v < 0.0) || all.iter().all(|v| *v == 0.0) {
        return Err(GaitError::MissingBaselineData);
    }
    let mean = |ch: usize| rms.per_actuator.iter().map(|p| p[ch]).sum::<f64>() / LEGS as f64;
    let amplitude = match matching {
        Matching::Coupled => {
            let a = std::f64::consts::SQRT_2 * all.iter().sum::<f64>() / all.len() as f64;
            [a, a]
        }
        Matching::Decoupled => [
            std::f64::consts::SQRT_2 * mean(0),
            std::f64::consts::SQRT_2 * mean(1),
        ],
    };
    Ok(SineDrive {
        period_s,
        amplitude,
        offset,
        phases: assign_leg_phases(gait),
    })
}
