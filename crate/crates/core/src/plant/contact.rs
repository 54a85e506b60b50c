use serde::{Deserialize, Serialize};

use crate::units::GRAVITY_MM_S2;

/// Flat penalty-contact ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurfaceModel {
    /// Ground plane height (mm, world z up).
    pub height: f64,
    /// Normal stiffness per leg (N/m = mN/mm).
    pub k_n: f64,
    /// Normal damping per leg (N·s/m = mN·s/mm).
    pub c_n: f64,
    pub mu: f64,
    /// Friction regularization velocity (mm/s).
    pub v_reg: f64,
}

impl Default for SurfaceModel {
    fn default() -> Self {
        Self {
            height: 0.0,
            k_n: 1.5,
            c_n: 0.008,
            mu: 0.6,
            v_reg: 1.0,
        }
    }
}

impl SurfaceModel {
    pub fn is_valid(&self) -> bool {
        self.k_n > 0.0
            && self.c_n >= 0.0
            && self.mu >= 0.0
            && self.v_reg > 0.0
            && self.height.is_finite()
    }
}

/// Per-leg contact stiffness that, in series with a leg stiffness
/// `leg_stiffness` (mN/mm) and with `legs` legs loaded in parallel, puts the
/// body's vertical resonance at `freq_hz`.
pub fn suspension_stiffness(mass_kg: f64, freq_hz: f64, legs: usize, leg_stiffness: f64) -> f64 {
    let omega = 2.0 * std::f64::consts::PI * freq_hz;
    // mN/mm: kg · (1/s²) gives N/m.
    let per_leg = mass_kg * omega * omega / legs as f64;
    if leg_stiffness.is_finite() && leg_stiffness > per_leg {
        1.0 / (1.0 / per_leg - 1.0 / leg_stiffness)
    } else {
        per_leg
    }
}

/// Static per-leg load for a body of `mass_kg` resting on `legs` legs (mN).
pub fn static_leg_load(mass_kg: f64, legs: usize) -> f64 {
    mass_kg * GRAVITY_MM_S2 / legs as f64
}

/// World-frame leg tip position and velocity (mm, mm/s; z up).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TipState {
    pub x: f64,
    pub z: f64,
    pub vx: f64,
    pub vz: f64,
}

/// World-frame ground reaction on a leg tip.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactForce {
    pub fx: f64,
    pub fz: f64,
    pub penetration: f64,
    pub in_contact: bool,
    /// In contact while moving against the heading.
    pub slip: bool,
}

/// Penalty normal force with regularized Coulomb friction. `heading` is the
/// sign of the robot's direction of travel along world x.
pub fn contact_force(tip: TipState, surface: &SurfaceModel, heading: f64) -> ContactForce {
    let penetration = surface.height - tip.z;
    if penetration <= 0.0 {
        return ContactForce::default();
    }
    let fz = (surface.k_n * penetration - surface.c_n * tip.vz).max(0.0);
    let sat = (tip.vx / surface.v_reg).clamp(-1.0, 1.0);
    let fx = -surface.mu * fz * sat;
    ContactForce {
        fx,
        fz,
        penetration,
        in_contact: true,
        slip: tip.vx * heading < 0.0,
    }
}
