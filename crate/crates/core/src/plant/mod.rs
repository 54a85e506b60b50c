//! Surrogate ground truth: nonlinear transmission dynamics, the
//! actuator-to-leg map, penalty ground contact, and a sagittal-plane body
//! carrying four legs.

mod contact;
mod kinematics;
mod robot;

pub use contact::{
    contact_force, static_leg_load, suspension_stiffness, ContactForce, SurfaceModel, TipState,
};
pub use kinematics::{LegForce, LegKinematics, LegPose};
pub use robot::{BodyParams, Leg, Robot, RobotState, RobotStep, LEGS};

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("simulation state diverged (non-finite)")]
    NonFinite,
    #[error("invalid timestep {0} s (must be in (0, 1 ms])")]
    InvalidTimestep(f64),
    #[error("actuator position ({q_s}, {q_l}) mm outside the kinematic box")]
    OutOfRange { q_s: f64, q_l: f64 },
    #[error("invalid plant parameters: {0}")]
    InvalidParams(String),
}

pub const MAX_TIMESTEP_S: f64 = 1e-3;

/// Position and velocity of one transmission's swing and lift actuators
/// (mm, mm/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TransmissionState {
    pub q_s: f64,
    pub qd_s: f64,
    pub q_l: f64,
    pub qd_l: f64,
}

impl TransmissionState {
    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.q_s, self.qd_s, self.q_l, self.qd_l)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self {
            q_s: v[0],
            qd_s: v[1],
            q_l: v[2],
            qd_l: v[3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q_s.is_finite() && self.qd_s.is_finite() && self.q_l.is_finite() && self.qd_l.is_finite()
    }
}

/// One actuator axis of the surrogate transmission:
///
/// ```text
/// q̈ = ω²(g·V − q − κq³) − 2ζωq̇ + τ/m,    m = k/ω²
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AxisParams {
    pub natural_freq_hz: f64,
    pub damping_ratio: f64,
    /// Static gain (mm/V).
    pub voltage_gain: f64,
    /// Cubic hardening coefficient κ (1/mm²).
    pub cubic: f64,
    /// Linear stiffness k (mN/mm).
    pub stiffness: f64,
}

impl Default for AxisParams {
    fn default() -> Self {
        Self {
            natural_freq_hz: 90.0,
            damping_ratio: 0.12,
            voltage_gain: 1.0e-3,
            cubic: 4.4,
            stiffness: 32_000.0,
        }
    }
}

impl AxisParams {
    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.natural_freq_hz
    }

    /// Reflected mass (kg).
    pub fn effective_mass(&self) -> f64 {
        self.stiffness / self.omega().powi(2)
    }

    /// Static deflection under voltage `v` and generalized force `force`
    /// (Newton iteration on `q + κq³ = g·V + τ/k`).
    pub fn static_deflection(&self, v: f64, force: f64) -> f64 {
        let target = self.voltage_gain * v + force / self.stiffness;
        let mut q = target;
        for _ in 0..50 {
            let f = q + self.cubic * q * q * q - target;
            let df = 1.0 + 3.0 * self.cubic * q * q;
            let step = f / df;
            q -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        q
    }

    fn validate(&self) -> Result<(), PlantError> {
        let ok = self.natural_freq_hz > 0.0
            && self.damping_ratio >= 0.0
            && self.voltage_gain.is_finite()
            && self.cubic >= 0.0
            && self.stiffness > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PlantError::InvalidParams(format!("axis {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransmissionParams {
    pub swing: AxisParams,
    pub lift: AxisParams,
    /// Bilinear swing–lift coupling χ (dimensionless).
    pub coupling: f64,
    /// Nominal deflection limit (mm).
    pub q_max: f64,
    /// Largest internal integration step (s).
    pub max_substep: f64,
    pub kinematics: LegKinematics,
}

impl Default for TransmissionParams {
    fn default() -> Self {
        Self {
            swing: AxisParams::default(),
            lift: AxisParams {
                natural_freq_hz: 85.0,
                ..AxisParams::default()
            },
            coupling: 0.05,
            q_max: 0.15,
            max_substep: 4e-5,
            kinematics: LegKinematics::default(),
        }
    }
}

impl TransmissionParams {
    /// Copy with the swing and lift natural frequencies scaled.
    pub fn with_resonance_scale(mut self, scale: [f64; 2]) -> Self {
        self.swing.natural_freq_hz *= scale[0];
        self.lift.natural_freq_hz *= scale[1];
        self
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        self.swing.validate()?;
        self.lift.validate()?;
        self.kinematics.validate()?;
        if !(self.q_max > 0.0 && self.max_substep > 0.0 && self.coupling.is_finite()) {
            return Err(PlantError::InvalidParams("transmission".into()));
        }
        Ok(())
    }

    fn accelerations(&self, s: &TransmissionState, u: [f64; 2], tau: [f64; 2]) -> (f64, f64) {
        let sw = &self.swing;
        let li = &self.lift;
        let (ws, wl) = (sw.omega(), li.omega());
        let cross = self.coupling * s.q_s * s.q_l / self.q_max;
        let a_s = ws * ws * (sw.voltage_gain * u[0] - s.q_s - sw.cubic * s.q_s.powi(3) - cross)
            - 2.0 * sw.damping_ratio * ws * s.qd_s
            + tau[0] / sw.effective_mass();
        let a_l = wl * wl * (li.voltage_gain * u[1] - s.q_l - li.cubic * s.q_l.powi(3) - cross)
            - 2.0 * li.damping_ratio * wl * s.qd_l
            + tau[1] / li.effective_mass();
        (a_s, a_l)
    }

    /// Advances one transmission by `dt` with a constant body-frame leg
    /// force (mN) and zero-order-hold voltages.
    pub fn step(
        &self,
        state: &TransmissionState,
        u: [f64; 2],
        force: LegForce,
        dt: f64,
    ) -> Result<TransmissionState, PlantError> {
        self.step_disturbed(state, u, force, [0.0; 2], dt)
    }

    /// Like [`step`](Self::step), with an extra generalized force applied
    /// directly in the actuator frame (mN).
    pub fn step_disturbed(
        &self,
        state: &TransmissionState,
        u: [f64; 2],
        force: LegForce,
        disturbance: [f64; 2],
        dt: f64,
    ) -> Result<TransmissionState, PlantError> {
        if !(dt > 0.0 && dt <= MAX_TIMESTEP_S) {
            return Err(PlantError::InvalidTimestep(dt));
        }
        let substeps = substep_count(dt, self.max_substep);
        let h = dt / substeps as f64;
        let mut s = *state;
        for _ in 0..substeps {
            let (ts, tl) = self
                .kinematics
                .actuator_forces(s.q_s, s.q_l, force);
            let tau = [ts + disturbance[0], tl + disturbance[1]];
            let (a_s, a_l) = self.accelerations(&s, u, tau);
            // Semi-implicit Euler: velocity first, then position.
            s.qd_s += a_s * h;
            s.qd_l += a_l * h;
            s.q_s += s.qd_s * h;
            s.q_l += s.qd_l * h;
        }
        if s.is_finite() {
            Ok(s)
        } else {
            Err(PlantError::NonFinite)
        }
    }

    /// Static equilibrium for constant voltages and no contact, neglecting the
    /// weak coupling term.
    pub fn static_state(&self, u: [f64; 2]) -> TransmissionState {
        TransmissionState {
            q_s: self.swing.static_deflection(u[0], 0.0),
            q_l: self.lift.static_deflection(u[1], 0.0),
            ..Default::default()
        }
    }
}

pub(crate) fn substep_count(dt: f64, max_substep: f64) -> usize {
    ((dt / max_substep) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Free-function form of [`TransmissionParams::step`].
pub fn step_transmission(
    params: &TransmissionParams,
    state: &TransmissionState,
    u: [f64; 2],
    external_force: LegForce,
    dt: f64,
) -> Result<TransmissionState, PlantError> {
    params.step(state, u, external_force, dt)
}
