use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use super::PlantError;

/// Leg tip position in the body frame. `+l_x` is protraction (forward),
/// `+l_z` is adduction (downward, toward the ground).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LegPose {
    pub l_x: f64,
    pub l_z: f64,
}

/// Body-frame force acting on a leg tip, along `+l_x` and `+l_z` (mN).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LegForce {
    pub f_x: f64,
    pub f_z: f64,
}

/// Smooth triangular actuator-to-leg map standing in for the spherical
/// five-bar linkage:
///
/// ```text
/// l_x = G_x · q_s · (1 + a · q_l)
/// l_z = G_z · (q_l + c · q_l²)
/// ```
///
/// It is bijective on `|q_s|, |q_l| ≤ domain` as long as
/// `a · domain < 1` and `2 · c · domain < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LegKinematics {
    /// Fore-aft transmission ratio (mm leg per mm actuator).
    pub gain_x: f64,
    /// Vertical transmission ratio.
    pub gain_z: f64,
    /// Swing–lift cross term (1/mm).
    pub cross: f64,
    /// Lift curvature (1/mm).
    pub curvature: f64,
    /// Half-width of the actuator box on which the map is defined (mm).
    pub domain: f64,
}

impl Default for LegKinematics {
    fn default() -> Self {
        Self {
            gain_x: 26.86,
            gain_z: 40.0,
            cross: 0.8,
            curvature: 0.6,
            domain: 0.3,
        }
    }
}

impl LegKinematics {
    pub fn validate(&self) -> Result<(), PlantError> {
        let ok = self.gain_x > 0.0
            && self.gain_z > 0.0
            && self.domain > 0.0
            && self.cross.abs() * self.domain < 1.0
            && 2.0 * self.curvature.abs() * self.domain < 1.0;
        if ok {
            Ok(())
        } else {
            Err(PlantError::InvalidParams(
                "leg kinematics not bijective on its domain".into(),
            ))
        }
    }

    fn check_box(&self, q_s: f64, q_l: f64) -> Result<(), PlantError> {
        if !(q_s.is_finite() && q_l.is_finite()) {
            return Err(PlantError::NonFinite);
        }
        if q_s.abs() > self.domain || q_l.abs() > self.domain {
            return Err(PlantError::OutOfRange { q_s, q_l });
        }
        Ok(())
    }

    pub fn forward(&self, q_s: f64, q_l: f64) -> Result<LegPose, PlantError> {
        self.check_box(q_s, q_l)?;
        Ok(self.forward_unchecked(q_s, q_l))
    }

    pub(crate) fn forward_unchecked(&self, q_s: f64, q_l: f64) -> LegPose {
        LegPose {
            l_x: self.gain_x * q_s * (1.0 + self.cross * q_l),
            l_z: self.gain_z * (q_l + self.curvature * q_l * q_l),
        }
    }

    /// Returns `(q_s, q_l)`.
    pub fn inverse(&self, leg: LegPose) -> Result<(f64, f64), PlantError> {
        if !(leg.l_x.is_finite() && leg.l_z.is_finite()) {
            return Err(PlantError::NonFinite);
        }
        let z = leg.l_z / self.gain_z;
        let disc = 1.0 + 4.0 * self.curvature * z;
        if disc < 0.0 {
            return Err(PlantError::OutOfRange {
                q_s: f64::NAN,
                q_l: f64::NAN,
            });
        }
        // Rationalized root, well conditioned as curvature → 0.
        let q_l = 2.0 * z / (1.0 + disc.sqrt());
        let q_s = leg.l_x / (self.gain_x * (1.0 + self.cross * q_l));
        self.check_box(q_s, q_l)?;
        Ok((q_s, q_l))
    }

    /// `∂(l_x, l_z)/∂(q_s, q_l)`.
    pub fn jacobian(&self, q_s: f64, q_l: f64) -> Matrix2<f64> {
        Matrix2::new(
            self.gain_x * (1.0 + self.cross * q_l),
            self.gain_x * self.cross * q_s,
            0.0,
            self.gain_z * (1.0 + 2.0 * self.curvature * q_l),
        )
    }

    /// Leg tip velocity for actuator velocities `(qd_s, qd_l)`.
    pub fn leg_velocity(&self, q_s: f64, q_l: f64, qd_s: f64, qd_l: f64) -> (f64, f64) {
        let j = self.jacobian(q_s, q_l);
        (
            j[(0, 0)] * qd_s + j[(0, 1)] * qd_l,
            j[(1, 0)] * qd_s + j[(1, 1)] * qd_l,
        )
    }

    /// Generalized actuator forces `Jᵀ F` (mN in the actuator frame).
    pub fn actuator_forces(&self, q_s: f64, q_l: f64, force: LegForce) -> (f64, f64) {
        let j = self.jacobian(q_s, q_l);
        (
            j[(0, 0)] * force.f_x + j[(1, 0)] * force.f_z,
            j[(0, 1)] * force.f_x + j[(1, 1)] * force.f_z,
        )
    }
}
