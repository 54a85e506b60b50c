use serde::{Deserialize, Serialize};

use super::{
    contact_force, substep_count, ContactForce, LegForce, LegPose, PlantError, SurfaceModel,
    TipState, TransmissionParams, TransmissionState, MAX_TIMESTEP_S,
};
use crate::units::{BODY_LENGTH_MM, GRAVITY_MM_S2, ROBOT_MASS_KG};

pub const LEGS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Leg {
    FrontLeft,
    FrontRight,
    RearLeft,
    RearRight,
}

impl Leg {
    pub const ALL: [Leg; LEGS] = [Leg::FrontLeft, Leg::FrontRight, Leg::RearLeft, Leg::RearRight];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_front(self) -> bool {
        matches!(self, Leg::FrontLeft | Leg::FrontRight)
    }

    pub fn label(self) -> &'static str {
        match self {
            Leg::FrontLeft => "fl",
            Leg::FrontRight => "fr",
            Leg::RearLeft => "rl",
            Leg::RearRight => "rr",
        }
    }
}

/// Sagittal-plane rigid body. Left and right legs share a hip location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BodyParams {
    pub mass_kg: f64,
    pub length_mm: f64,
    /// Box height used for the pitch inertia (mm).
    pub height_mm: f64,
    /// Fore-aft hip distance from the center of mass (mm).
    pub hip_offset_mm: f64,
    /// Neutral leg tip depth below the center of mass (mm).
    pub hip_height_mm: f64,
    /// Vertical body resonance on four legs (Hz).
    pub z_resonance_hz: f64,
    /// Share of the contact deflection taken up by serial compliance in
    /// the leg rather than by the ground.
    pub leg_compliance_fraction: f64,
}

impl Default for BodyParams {
    fn default() -> Self {
        Self {
            mass_kg: ROBOT_MASS_KG,
            length_mm: BODY_LENGTH_MM,
            height_mm: 10.0,
            hip_offset_mm: 15.0,
            hip_height_mm: 8.0,
            z_resonance_hz: 10.0,
            leg_compliance_fraction: 0.3,
        }
    }
}

impl BodyParams {
    /// Uniform box about the pitch axis (kg·mm²).
    pub fn pitch_inertia(&self) -> f64 {
        self.mass_kg * (self.length_mm.powi(2) + self.height_mm.powi(2)) / 12.0
    }

    pub fn hip_x(&self, leg: Leg) -> f64 {
        if leg.is_front() {
            self.hip_offset_mm
        } else {
            -self.hip_offset_mm
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub z: f64,
    /// Pitch (rad), rotating body +x toward world +z.
    pub theta: f64,
    pub vx: f64,
    pub vz: f64,
    pub omega: f64,
    pub legs: [TransmissionState; LEGS],
}

impl RobotState {
    pub fn is_finite(&self) -> bool {
        [self.x, self.z, self.theta, self.vx, self.vz, self.omega]
            .iter()
            .all(|v| v.is_finite())
            && self.legs.iter().all(|l| l.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotStep {
    pub state: RobotState,
    /// Ground reactions at the final substep.
    pub contacts: [ContactForce; LEGS],
    pub tips: [TipState; LEGS],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Robot {
    pub body: BodyParams,
    /// Nominal transmission; supplies the kinematics and rest pose.
    pub transmission: TransmissionParams,
    /// Per-leg dynamics. All equal to `transmission` unless overridden.
    pub legs: [TransmissionParams; LEGS],
    /// Tethered: the body is held in place and only the legs move.
    pub body_fixed: bool,
}

impl Robot {
    pub fn new(body: BodyParams, transmission: TransmissionParams) -> Self {
        Self {
            body,
            transmission,
            legs: [transmission; LEGS],
            body_fixed: false,
        }
    }

    pub fn with_leg_transmissions(mut self, legs: [TransmissionParams; LEGS]) -> Self {
        self.legs = legs;
        self
    }

    pub fn tethered(mut self) -> Self {
        self.body_fixed = true;
        self
    }

    /// Kinematic leg pose for a transmission state.
    pub fn leg_pose(&self, leg: &TransmissionState) -> LegPose {
        self.transmission.kinematics.forward_unchecked(leg.q_s, leg.q_l)
    }

    /// Leg pose including serial compliance under a ground reaction.
    pub fn loaded_leg_pose(&self, leg: &TransmissionState, contact: &ContactForce) -> LegPose {
        let mut pose = self.leg_pose(leg);
        if contact.in_contact {
            pose.l_z -= self.body.leg_compliance_fraction * contact.penetration;
        }
        pose
    }

    fn tip_offset(&self, state: &RobotState, leg: Leg) -> ((f64, f64), (f64, f64)) {
        let t = &state.legs[leg.index()];
        let pose = self.leg_pose(t);
        let (lxd, lzd) = self
            .transmission
            .kinematics
            .leg_velocity(t.q_s, t.q_l, t.qd_s, t.qd_l);
        let (s, c) = state.theta.sin_cos();
        let rx = self.body.hip_x(leg) + pose.l_x;
        let rz = -(self.body.hip_height_mm + pose.l_z);
        let world = (c * rx - s * rz, s * rx + c * rz);
        let rel_vel = (c * lxd + s * lzd, s * lxd - c * lzd);
        (world, rel_vel)
    }

    /// World-frame leg tip position and velocity.
    pub fn tip_state(&self, state: &RobotState, leg: Leg) -> TipState {
        let ((wx, wz), (rvx, rvz)) = self.tip_offset(state, leg);
        TipState {
            x: state.x + wx,
            z: state.z + wz,
            vx: state.vx - state.omega * wz + rvx,
            vz: state.vz + state.omega * wx + rvz,
        }
    }

    fn leg_force(&self, state: &RobotState, contact: &ContactForce) -> LegForce {
        let (s, c) = state.theta.sin_cos();
        let bx = c * contact.fx + s * contact.fz;
        let bz = -s * contact.fx + c * contact.fz;
        LegForce { f_x: bx, f_z: -bz }
    }

    /// Net body force (mN) and pitch torque (mN·mm) including gravity.
    pub fn net_wrench(
        &self,
        state: &RobotState,
        surface: Option<&SurfaceModel>,
        heading: f64,
    ) -> (f64, f64, f64) {
        let mut fx = 0.0;
        let mut fz = -self.body.mass_kg * GRAVITY_MM_S2;
        let mut torque = 0.0;
        if let Some(surface) = surface {
            for leg in Leg::ALL {
                let tip = self.tip_state(state, leg);
                let contact = contact_force(tip, surface, heading);
                fx += contact.fx;
                fz += contact.fz;
                let (rx, rz) = (tip.x - state.x, tip.z - state.z);
                torque += rx * contact.fz - rz * contact.fx;
            }
        }
        (fx, fz, torque)
    }

    pub fn step(
        &self,
        state: &RobotState,
        u: &[[f64; 2]; LEGS],
        surface: Option<&SurfaceModel>,
        heading: f64,
        dt: f64,
    ) -> Result<RobotStep, PlantError> {
        self.step_disturbed(state, u, surface, heading, &[[0.0; 2]; LEGS], dt)
    }

    /// Advances the robot by `dt` with zero-order-hold voltages and
    /// actuator-frame disturbance forces.
    pub fn step_disturbed(
        &self,
        state: &RobotState,
        u: &[[f64; 2]; LEGS],
        surface: Option<&SurfaceModel>,
        heading: f64,
        disturbance: &[[f64; 2]; LEGS],
        dt: f64,
    ) -> Result<RobotStep, PlantError> {
        if !(dt > 0.0 && dt <= MAX_TIMESTEP_S) {
            return Err(PlantError::InvalidTimestep(dt));
        }
        let max_substep = self.legs.iter().map(|t| t.max_substep).fold(f64::INFINITY, f64::min);
        let substeps = substep_count(dt, max_substep);
        let h = dt / substeps as f64;
        let inertia = self.body.pitch_inertia();
        let mut s = *state;
        let mut contacts = [ContactForce::default(); LEGS];
        let mut tips = [TipState::default(); LEGS];
        for _ in 0..substeps {
            let mut fx = 0.0;
            let mut fz = -self.body.mass_kg * GRAVITY_MM_S2;
            let mut torque = 0.0;
            let mut next_legs = s.legs;
            for leg in Leg::ALL {
                let i = leg.index();
                let tip = self.tip_state(&s, leg);
                let contact = match surface {
                    Some(surface) => contact_force(tip, surface, heading),
                    None => ContactForce::default(),
                };
                let force = if contact.in_contact {
                    self.leg_force(&s, &contact)
                } else {
                    LegForce::default()
                };
                next_legs[i] =
                    self.legs[i]
                        .step_disturbed(&s.legs[i], u[i], force, disturbance[i], h)?;
                fx += contact.fx;
                fz += contact.fz;
                let (rx, rz) = (tip.x - s.x, tip.z - s.z);
                torque += rx * contact.fz - rz * contact.fx;
                contacts[i] = contact;
                tips[i] = tip;
            }
            s.legs = next_legs;
            if !self.body_fixed {
                s.vx += fx / self.body.mass_kg * h;
                s.vz += fz / self.body.mass_kg * h;
                s.omega += torque / inertia * h;
                s.x += s.vx * h;
                s.z += s.vz * h;
                s.theta += s.omega * h;
            }
        }
        if !s.is_finite() {
            return Err(PlantError::NonFinite);
        }
        Ok(RobotStep {
            state: s,
            contacts,
            tips,
        })
    }

    /// Static rest pose on four legs with zero voltages.
    pub fn rest_state(&self, surface: &SurfaceModel) -> RobotState {
        let load = self.body.mass_kg * GRAVITY_MM_S2 / LEGS as f64;
        let kin = &self.transmission.kinematics;
        let lift = &self.transmission.lift;
        let mut q_l = 0.0;
        for _ in 0..100 {
            let tau = kin.gain_z * (1.0 + 2.0 * kin.curvature * q_l) * (-load);
            let next = lift.static_deflection(0.0, tau);
            let done = (next - q_l).abs() < 1e-17;
            q_l = next;
            if done {
                break;
            }
        }
        let leg = TransmissionState {
            q_l,
            ..Default::default()
        };
        let l_z = kin.forward_unchecked(0.0, q_l).l_z;
        let penetration = load / surface.k_n;
        RobotState {
            z: surface.height - penetration + self.body.hip_height_mm + l_z,
            legs: [leg; LEGS],
            ..Default::default()
        }
    }

    /// Body standing in the air at the rest height, for tethered runs.
    pub fn hanging_state(&self) -> RobotState {
        RobotState {
            z: self.body.hip_height_mm + 20.0,
            ..Default::default()
        }
    }
}
