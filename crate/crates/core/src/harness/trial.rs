//! One simulated trial: plant, encoders, filters and controller at the
//! control rate.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix2x4, Vector2};
use serde::{Deserialize, Serialize};

use super::calibrate::actuator_seed;
use super::{Calibration, ExperimentConfig, HarnessError, ModelFile};
use crate::controller::{ControlLaw, FeedforwardMap};
use crate::estimator::{Estimator, FilterState};
use crate::gait::{
    assign_leg_phases, keyframes, spline_reference, GaitParams, Interpolation, Keyframe,
    KeyframeSchedule, ReferenceTrajectory, SineDrive, TROT_AMPLITUDE_UM,
};
use crate::metrics::{MetricsError, MetricsRecord, TraceSample, TrialTrace};
use crate::plant::{contact_force, Leg, Robot, RobotState, SurfaceModel, LEGS};
use crate::sensor::{simulate_encoder, EncoderSample, NoiseSource};
use crate::units::UM_TO_MM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    /// Body held, legs free.
    InAir,
    /// Body held with the tips resting on the ground at the neutral pose.
    Stand,
    /// Free body on the ground.
    Ground,
}

impl Environment {
    pub fn label(self) -> &'static str {
        match self {
            Environment::InAir => "in_air",
            Environment::Stand => "stand",
            Environment::Ground => "ground",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveMode {
    ClosedLoop,
    OpenLoopCoupled,
    OpenLoopDecoupled,
    /// Feed-forward only (`L = 0`) with the filter running.
    EstimatorOnly,
}

impl DriveMode {
    pub fn label(self) -> &'static str {
        match self {
            DriveMode::ClosedLoop => "closed_loop",
            DriveMode::OpenLoopCoupled => "open_loop_coupled",
            DriveMode::OpenLoopDecoupled => "open_loop_decoupled",
            DriveMode::EstimatorOnly => "estimator_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub trial_id: u64,
    pub gait: GaitParams,
    pub mode: DriveMode,
    pub environment: Environment,
    /// Open-loop drive; required by the open-loop modes.
    pub sine: Option<SineDrive>,
    /// Replaces the reference built from `gait`.
    pub reference: Option<ReferenceTrajectory>,
}

impl TrialSpec {
    pub fn closed_loop(trial_id: u64, gait: GaitParams, environment: Environment) -> Self {
        Self {
            trial_id,
            gait,
            mode: DriveMode::ClosedLoop,
            environment,
            sine: None,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrialFlags {
    pub saturated: bool,
    pub diverged: bool,
    pub backward: bool,
    pub superkinematic: bool,
}

impl TrialFlags {
    pub fn to_field(self) -> String {
        let mut parts = Vec::new();
        for (on, name) in [
            (self.saturated, "saturated"),
            (self.diverged, "diverged"),
            (self.backward, "backward"),
            (self.superkinematic, "superkinematic"),
        ] {
            if on {
                parts.push(name);
            }
        }
        parts.join("|")
    }

    pub fn from_field(s: &str) -> Result<Self, HarnessError> {
        let mut f = Self::default();
        for part in s.split('|').filter(|p| !p.is_empty()) {
            match part {
                "saturated" => f.saturated = true,
                "diverged" => f.diverged = true,
                "backward" => f.backward = true,
                "superkinematic" => f.superkinematic = true,
                other => return Err(HarnessError::Format(format!("unknown flag '{other}'"))),
            }
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub gait: GaitParams,
    pub mode: DriveMode,
    pub environment: Environment,
    pub metrics: MetricsRecord,
    /// AC RMS of the applied voltages over the analysis window (V).
    pub v_rms: [[f64; 2]; LEGS],
    pub flags: TrialFlags,
    pub trace_path: Option<PathBuf>,
}

impl TrialRecord {
    /// Record for a trial that could not be completed.
    pub fn failed(spec: &TrialSpec) -> Self {
        let nan2 = [f64::NAN; 2];
        Self {
            trial_id: spec.trial_id,
            gait: spec.gait,
            mode: spec.mode,
            environment: spec.environment,
            metrics: MetricsRecord {
                nu: f64::NAN,
                sigma: f64::NAN,
                epsilon: f64::NAN,
                cot: f64::NAN,
                e_est: nan2,
                e_cont: nan2,
                superkinematic: false,
                backward: false,
            },
            v_rms: [nan2; LEGS],
            flags: TrialFlags {
                diverged: true,
                ..Default::default()
            },
            trace_path: None,
        }
    }

    /// Leg-averaged `[swing, lift]` RMS voltage.
    pub fn mean_v_rms(&self) -> [f64; 2] {
        let mut out = [0.0; 2];
        for leg in &self.v_rms {
            out[0] += leg[0] / LEGS as f64;
            out[1] += leg[1] / LEGS as f64;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub record: TrialRecord,
    pub trace: TrialTrace,
}

/// Smooth keyframes of `(A_S/2)·cos` swing and `(A_L/2)·sin` lift.
pub fn sinusoid_keyframes(amp_swing_um: f64, amp_lift_um: f64, knots: usize) -> KeyframeSchedule {
    let frames = |amp: f64, f: fn(f64) -> f64| -> Vec<Keyframe> {
        (0..knots)
            .map(|k| {
                let phase = k as f64 / knots as f64;
                Keyframe {
                    phase,
                    value: 0.5 * amp * UM_TO_MM * f(std::f64::consts::TAU * phase),
                }
            })
            .collect()
    };
    KeyframeSchedule {
        swing: frames(amp_swing_um, f64::cos),
        lift: frames(amp_lift_um, f64::sin),
        interpolation: Interpolation::Smooth,
    }
}

/// Everything shared by the trials of one experiment.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub calibration: Calibration,
    pub model: ModelFile,
    robot: Robot,
    estimators: Vec<Estimator>,
    feedforward: FeedforwardMap,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, calibration: Calibration, model: ModelFile) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let mut estimators = Vec::with_capacity(LEGS);
        for leg in 0..LEGS {
            let swing = calibration.measurement_model(leg, 0)?;
            let lift = calibration.measurement_model(leg, 1)?;
            estimators.push(Estimator::new(&model.process, &swing, &lift)?);
        }
        let feedforward = FeedforwardMap::new(&model.process)?;
        let robot = Robot::new(cfg.plant.body, cfg.plant.transmission)
            .with_leg_transmissions(cfg.plant.leg_transmissions());
        Ok(Self {
            cfg,
            calibration,
            model,
            robot,
            estimators,
            feedforward,
        })
    }

    pub fn law(&self) -> &ControlLaw {
        &self.model.law
    }

    pub fn estimator(&self, leg: Leg) -> &Estimator {
        &self.estimators[leg.index()]
    }

    fn setup(&self, env: Environment) -> (Robot, Option<SurfaceModel>, RobotState) {
        match env {
            Environment::InAir => (self.robot.tethered(), None, self.robot.hanging_state()),
            Environment::Stand => {
                let state = self.robot.hanging_state();
                let tip = self.robot.tip_state(&state, Leg::FrontLeft);
                let surface = SurfaceModel {
                    height: tip.z,
                    ..self.cfg.plant.surface
                };
                (self.robot.tethered(), Some(surface), state)
            }
            Environment::Ground => {
                let surface = self.cfg.plant.surface;
                (self.robot, Some(surface), self.robot.rest_state(&surface))
            }
        }
    }

    pub fn run_trial(&self, spec: &TrialSpec) -> Result<TrialOutcome, HarnessError> {
        let dt = self.cfg.dt();
        let period = spec.gait.period_s;
        let reference = match (&spec.reference, spec.mode) {
            (Some(r), _) => Some(r.clone()),
            (None, DriveMode::ClosedLoop | DriveMode::EstimatorOnly) => {
                let kf = keyframes(&spec.gait)?;
                Some(spline_reference(&kf, period, dt)?.with_phases(assign_leg_phases(spec.gait.gait)))
            }
            (None, _) => None,
        };
        let sine = match spec.mode {
            DriveMode::OpenLoopCoupled | DriveMode::OpenLoopDecoupled => Some(
                spec.sine
                    .ok_or_else(|| HarnessError::Config("open-loop trial without a sine drive".into()))?,
            ),
            _ => None,
        };
        let mut law = self.model.law.clone();
        if spec.mode == DriveMode::EstimatorOnly {
            law.l = Matrix2x4::zeros();
        }

        let (robot, surface, mut state) = self.setup(spec.environment);
        let truth = self.cfg.sensor.truth;
        let trial_seed = self.cfg.seed ^ spec.trial_id;
        let mut noise: Vec<[NoiseSource; 2]> = (0..LEGS)
            .map(|leg| {
                [0, 1].map(|axis| {
                    NoiseSource::new(self.cfg.sensor.noise, actuator_seed(!trial_seed, leg, axis))
                })
            })
            .collect();
        let mut filters: Vec<FilterState> = self.estimators.iter().map(|e| e.initial_state()).collect();
        let mut v_prev = [[0.0; 2]; LEGS];
        let mut trace = TrialTrace::new(dt, period, spec.gait.gait);
        let ticks = (self.cfg.strides as f64 * period / dt).round() as usize;
        trace.samples.reserve(ticks);
        let mut saturated = false;

        for k in 0..ticks {
            let t = k as f64 * dt;
            let mut sample = TraceSample {
                t,
                body_x: state.x,
                body_z: state.z,
                body_vx: state.vx,
                ..Default::default()
            };
            let mut u_all = [[0.0; 2]; LEGS];
            for leg in Leg::ALL {
                let i = leg.index();
                let est = &self.estimators[i];
                let prior = est.predict(&filters[i]);
                let u = match (&reference, &sine) {
                    (_, Some(drive)) => {
                        let raw = drive.voltage(t, leg);
                        let (a, sa) = law.limits.clamp(raw[0]);
                        let (b, sb) = law.limits.clamp(raw[1]);
                        saturated |= sa || sb;
                        [a, b]
                    }
                    (Some(r), None) => {
                        let x_ref = r.leg_state(t, leg);
                        let x_next = r.leg_state(t + dt, leg);
                        let u_t = self.feedforward.step(&x_ref, &x_next);
                        let out = law.output(&x_ref, &prior, &u_t);
                        saturated |= out.saturated;
                        sample.reference[i] = [x_ref[0], x_ref[2]];
                        out.u
                    }
                    (None, None) => unreachable!("drive resolved above"),
                };
                u_all[i] = u;

                let legs = &state.legs[i];
                let qd = [legs.qd_s, legs.qd_l];
                let mut meas = [EncoderSample::default(); 2];
                for axis in 0..2 {
                    let raw = simulate_encoder(qd[axis], u[axis], v_prev[i][axis], &truth, Some(&mut noise[i][axis]));
                    meas[axis] = self.calibration.actuators[i][axis].correct(raw);
                    let clean = simulate_encoder(qd[axis], u[axis], v_prev[i][axis], &truth, None);
                    sample.v_m[i][axis] = clean.v_m;
                    sample.i_m[i][axis] = qd[axis] / truth.alpha;
                    sample.v[i][axis] = meas[axis].v;
                }
                est.update(
                    &mut filters[i],
                    Vector2::new(u[0], u[1]),
                    Vector2::new(meas[0].v, meas[1].v),
                    Vector2::new(meas[0].v_m, meas[1].v_m),
                )?;
                let x_hat = est.process_estimate(&filters[i]);
                sample.v_cmd[i] = u;
                sample.truth[i] = [legs.q_s, legs.q_l];
                sample.estimate[i] = [x_hat[0], x_hat[2]];
                let tip = robot.tip_state(&state, leg);
                sample.tip_vx[i] = tip.vx;
                if let Some(s) = &surface {
                    sample.in_contact[i] = contact_force(tip, s, 1.0).in_contact;
                }
            }
            v_prev = u_all;
            trace.samples.push(sample);
            state = match robot.step(&state, &u_all, surface.as_ref(), 1.0, dt) {
                Ok(step) => step.state,
                Err(source) => {
                    return Err(HarnessError::Divergence {
                        trial_id: spec.trial_id,
                        source,
                    })
                }
            };
        }

        let metrics = match MetricsRecord::from_trace(&trace) {
            Ok(m) => m,
            Err(MetricsError::EmptyTrace) => return Err(MetricsError::EmptyTrace.into()),
            Err(e) => return Err(e.into()),
        };
        let v_rms = ac_rms(&trace);
        Ok(TrialOutcome {
            record: TrialRecord {
                trial_id: spec.trial_id,
                gait: spec.gait,
                mode: spec.mode,
                environment: spec.environment,
                metrics,
                v_rms,
                flags: TrialFlags {
                    saturated,
                    diverged: false,
                    backward: metrics.backward,
                    superkinematic: metrics.superkinematic,
                },
                trace_path: None,
            },
            trace,
        })
    }
}

fn ac_rms(trace: &TrialTrace) -> [[f64; 2]; LEGS] {
    let strides = trace.strides();
    let (a, b) = (strides[0].0, strides[strides.len() - 1].1);
    let span = &trace.samples[a..b];
    let n = span.len() as f64;
    let mut out = [[0.0; 2]; LEGS];
    for (leg, slot) in out.iter_mut().enumerate() {
        for (axis, v) in slot.iter_mut().enumerate() {
            let mean = span.iter().map(|s| s.v_cmd[leg][axis]).sum::<f64>() / n;
            let var = span.iter().map(|s| (s.v_cmd[leg][axis] - mean).powi(2)).sum::<f64>() / n;
            *v = var.sqrt();
        }
    }
    out
}

/// Writes a trace as CSV, one row per control tick.
pub(crate) fn write_trace(path: &Path, trace: &TrialTrace) -> Result<(), HarnessError> {
    let io = |e: csv::Error| HarnessError::Io(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["t".to_string(), "body_x".into(), "body_z".into(), "body_vx".into()];
    for leg in Leg::ALL {
        let l = leg.label();
        header.push(format!("{l}_tip_vx"));
        header.push(format!("{l}_contact"));
        for field in ["v_cmd", "v", "v_m", "i_m", "q", "q_hat", "q_ref"] {
            header.push(format!("{l}_{field}_swing"));
            header.push(format!("{l}_{field}_lift"));
        }
    }
    w.write_record(&header).map_err(io)?;
    let mut row = Vec::with_capacity(header.len());
    for s in &trace.samples {
        row.clear();
        row.extend([s.t, s.body_x, s.body_z, s.body_vx].map(|v| v.to_string()));
        for i in 0..LEGS {
            row.push(s.tip_vx[i].to_string());
            row.push(u8::from(s.in_contact[i]).to_string());
            for pair in [s.v_cmd[i], s.v[i], s.v_m[i], s.i_m[i], s.truth[i], s.estimate[i], s.reference[i]] {
                row.push(pair[0].to_string());
                row.push(pair[1].to_string());
            }
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub environment: Environment,
    pub f_hz: f64,
    pub e_est: [f64; 2],
    pub e_cont: [f64; 2],
    pub saturated: bool,
}

fn validation(
    p: &Pipeline,
    mode: DriveMode,
    envs: &[Environment],
    freqs: &[f64],
    reference: impl Fn(f64) -> Result<(GaitParams, ReferenceTrajectory), HarnessError> + Sync,
) -> Result<Vec<ValidationRow>, HarnessError> {
    let mut jobs = Vec::new();
    for &env in envs {
        for &f in freqs {
            jobs.push((env, f));
        }
    }
    use rayon::prelude::*;
    jobs.par_iter()
        .enumerate()
        .map(|(i, &(environment, f))| {
            let (gait, reference) = reference(f)?;
            let spec = TrialSpec {
                trial_id: 10_000 + i as u64,
                gait,
                mode,
                environment,
                sine: None,
                reference: Some(reference),
            };
            let out = p.run_trial(&spec)?;
            Ok(ValidationRow {
                environment,
                f_hz: f,
                e_est: out.record.metrics.e_est,
                e_cont: out.record.metrics.e_cont,
                saturated: out.record.flags.saturated,
            })
        })
        .collect()
}

/// Filter accuracy with the feedback gain zeroed, tracking a sinusoidal
/// leg reference at each frequency.
pub fn validate_estimator(
    p: &Pipeline,
    envs: &[Environment],
    freqs: &[f64],
) -> Result<Vec<ValidationRow>, HarnessError> {
    let dt = p.cfg.dt();
    validation(p, DriveMode::EstimatorOnly, envs, freqs, |f| {
        let gait = GaitParams::trot(f, 50.0, 0.0);
        let kf = sinusoid_keyframes(TROT_AMPLITUDE_UM, TROT_AMPLITUDE_UM, 32);
        let reference = spline_reference(&kf, gait.period_s, dt)?.with_phases(assign_leg_phases(gait.gait));
        Ok((gait, reference))
    })
}

/// Closed-loop tracking of the trot trajectory with the configured
/// validation shape.
pub fn validate_controller(
    p: &Pipeline,
    envs: &[Environment],
    freqs: &[f64],
) -> Result<Vec<ValidationRow>, HarnessError> {
    let dt = p.cfg.dt();
    let [s1, s2] = p.cfg.validation.trot_shape;
    validation(p, DriveMode::ClosedLoop, envs, freqs, |f| {
        let gait = GaitParams::trot(f, s1, s2);
        gait.validate()?;
        let reference =
            spline_reference(&keyframes(&gait)?, gait.period_s, dt)?.with_phases(assign_leg_phases(gait.gait));
        Ok((gait, reference))
    })
}
