//! Project-wide unit convention and physical constants.
//!
//! Lengths are in mm, forces in mN, voltages in V, currents in mA,
//! resistances in kΩ, capacitances in nF, time in s. Masses are in kg, which
//! makes `mN / kg = mm/s²` and `N/m = mN/mm` without further scaling.

/// Gravitational acceleration (mm/s²).
pub const GRAVITY_MM_S2: f64 = 9810.0;
/// Gravitational acceleration (m/s²).
pub const GRAVITY_M_S2: f64 = 9.81;
/// Robot mass (kg).
pub const ROBOT_MASS_KG: f64 = 1.43e-3;
/// Robot body length (mm).
pub const BODY_LENGTH_MM: f64 = 45.0;
/// Kinematic step length (mm).
pub const KINEMATIC_STEP_LENGTH_MM: f64 = 4.7;
/// nF·V/s expressed in mA.
pub const NANOFARAD_VOLT_PER_S_TO_MA: f64 = 1e-6;
/// µm to mm.
pub const UM_TO_MM: f64 = 1e-3;
/// mm/s to m/s.
pub const MM_S_TO_M_S: f64 = 1e-3;
/// mW to W.
pub const MW_TO_W: f64 = 1e-3;
