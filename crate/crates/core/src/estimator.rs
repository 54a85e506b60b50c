//! Six-state transmission-sensor system and its constant-gain Kalman
//! filter.
//!
//! State `x = [q_s, q̇_s, q_l, q̇_l, q̇_s(k−1), q̇_l(k−1)]`, input
//! `u_k = [V_s(k), V_l(k), V_s(k−1), V_l(k−1)]`, measurement
//! `y_k = [Vᵐ_s(k), Vᵐ_l(k), Vᵐ_s(k−1), Vᵐ_l(k−1)]`.
//!
//! The process part is written in deviations from the identified fixed
//! point; the measurement part is linear with no offset, so the filter
//! works on `x − x₀` and subtracts `H x₀` from the measurement.

use nalgebra::{DMatrix, Matrix4, SMatrix, SVector, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{LegKinematics, LegPose};
use crate::riccati::{solve_dare, spectral_radius, DareOptions, DareProblem, RiccatiError};
use crate::sensor::MeasurementModel;
use crate::sysid::ProcessModel;

pub type Matrix6 = SMatrix<f64, 6, 6>;
pub type Matrix6x4 = SMatrix<f64, 6, 4>;
pub type Matrix4x6 = SMatrix<f64, 4, 6>;
pub type Vector6 = SVector<f64, 6>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("system structure violated: {0}")]
    DimensionMismatch(String),
    #[error("(A, H) is not detectable: estimator spectral radius {0}")]
    Undetectable(f64),
    #[error("non-finite measurement")]
    NonFinite,
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSystem {
    #[serde(with = "crate::matrix_rows")]
    pub a: Matrix6,
    #[serde(with = "crate::matrix_rows")]
    pub b: Matrix6x4,
    #[serde(with = "crate::matrix_rows")]
    pub h: Matrix4x6,
    #[serde(with = "crate::matrix_rows")]
    pub d: Matrix4<f64>,
    #[serde(with = "crate::matrix_rows")]
    pub w: Matrix6,
    #[serde(with = "crate::matrix_rows")]
    pub n: Matrix4<f64>,
}

/// Stacks the process model with one measurement model per actuator.
///
/// Each sensor's `Nᵐ` covers the pair `(Vᵐ(k), Vᵐ(k−1))` of its own
/// actuator, which sit at measurement indices (0, 2) for swing and (1, 3)
/// for lift.
pub fn build_augmented_system(
    process: &ProcessModel,
    swing: &MeasurementModel,
    lift: &MeasurementModel,
) -> Result<AugmentedSystem, EstimatorError> {
    for (name, m) in [("swing", swing), ("lift", lift)] {
        let structured = m.h[(0, 0)] == 0.0
            && m.h[(1, 0)] == 0.0
            && m.h[(0, 2)] == 0.0
            && m.h[(1, 1)] == 0.0;
        if !structured {
            return Err(EstimatorError::DimensionMismatch(format!(
                "{name} measurement H must be [0 | diag]"
            )));
        }
    }
    let mut a = Matrix6::zeros();
    a.fixed_view_mut::<4, 4>(0, 0).copy_from(&process.a);
    a[(4, 1)] = 1.0;
    a[(5, 3)] = 1.0;

    let mut b = Matrix6x4::zeros();
    b.fixed_view_mut::<4, 2>(0, 0).copy_from(&process.b);

    let mut h = Matrix4x6::zeros();
    h[(0, 1)] = swing.h[(0, 1)];
    h[(1, 3)] = lift.h[(0, 1)];
    h[(2, 4)] = swing.h[(1, 2)];
    h[(3, 5)] = lift.h[(1, 2)];

    let mut d = Matrix4::zeros();
    let mut n = Matrix4::zeros();
    for (m, (i, j)) in [(swing, (0, 2)), (lift, (1, 3))] {
        let idx = [i, j];
        for r in 0..2 {
            for c in 0..2 {
                d[(idx[r], idx[c])] = m.d[(r, c)];
                n[(idx[r], idx[c])] = m.n[(r, c)];
            }
        }
    }

    let mut w = Matrix6::zeros();
    w.fixed_view_mut::<4, 4>(0, 0).copy_from(&process.w);

    let sys = AugmentedSystem { a, b, h, d, w, n };
    sys.check_structure()?;
    Ok(sys)
}

impl AugmentedSystem {
    fn check_structure(&self) -> Result<(), EstimatorError> {
        let fail = |what: &str| Err(EstimatorError::DimensionMismatch(what.to_string()));
        if self.a.fixed_view::<4, 2>(0, 4).amax() != 0.0 || self.a.fixed_view::<2, 2>(4, 4).amax() != 0.0 {
            return fail("A delayed-state columns must be zero");
        }
        if self.b.fixed_view::<2, 4>(4, 0).amax() != 0.0 || self.b.fixed_view::<4, 2>(0, 2).amax() != 0.0 {
            return fail("B only drives the process block with the current input");
        }
        let h_pattern = [(0, 1), (1, 3), (2, 4), (3, 5)];
        for i in 0..4 {
            for j in 0..6 {
                if !h_pattern.contains(&(i, j)) && self.h[(i, j)] != 0.0 {
                    return fail("H sparsity");
                }
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                if (i + j) % 2 == 1 && self.d[(i, j)] != 0.0 {
                    return fail("D sparsity");
                }
            }
        }
        Ok(())
    }

    /// Measurement offset `H x₀` of the fixed point.
    fn measurement_offset(&self, x0: &Vector4<f64>) -> Vector4<f64> {
        self.h * augment(x0)
    }
}

/// Lifts a process state to the augmented state with the delayed
/// velocities equal to the current ones.
pub fn augment(x: &Vector4<f64>) -> Vector6 {
    Vector6::from_column_slice(&[x[0], x[1], x[2], x[3], x[1], x[3]])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanGain {
    #[serde(with = "crate::matrix_rows")]
    pub k: Matrix6x4,
    /// Steady-state prior (one-step prediction) error covariance.
    #[serde(with = "crate::matrix_rows")]
    pub p: Matrix6,
}

fn to_dyn<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

/// Generic steady-state Kalman gain `K = P Hᵀ(H P Hᵀ + N)⁻¹` with `P` from the
/// dual Riccati equation. Returns `(K, P)`.
pub fn kalman_gain_dyn(
    a: &DMatrix<f64>,
    h: &DMatrix<f64>,
    w: &DMatrix<f64>,
    n: &DMatrix<f64>,
    options: DareOptions,
) -> Result<(DMatrix<f64>, DMatrix<f64>), EstimatorError> {
    let mut n = n.clone();
    if n.clone().cholesky().is_none() {
        // A noiseless channel: regularize just enough to keep N invertible.
        let trace = n.trace();
        let eps = if trace > 0.0 { 1e-12 * trace } else { 1e-12 };
        for i in 0..n.nrows() {
            n[(i, i)] += eps;
        }
    }
    let problem = DareProblem::new(a.transpose(), h.transpose(), w.clone(), n.clone())?;
    let p = solve_dare(&problem, options)?;
    let s = h * &p * h.transpose() + &n;
    let s_inv = s
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| s.try_inverse())
        .ok_or(RiccatiError::IllConditioned)?;
    let k = &p * h.transpose() * s_inv;
    Ok((k, p))
}

pub fn compute_kalman_gain(sys: &AugmentedSystem) -> Result<KalmanGain, EstimatorError> {
    let (k, p) = kalman_gain_dyn(
        &to_dyn(&sys.a),
        &to_dyn(&sys.h),
        &to_dyn(&sys.w),
        &to_dyn(&sys.n),
        DareOptions::default(),
    )
    .map_err(|e| match e {
        EstimatorError::Riccati(RiccatiError::NonConvergence { .. }) => {
            EstimatorError::Undetectable(f64::NAN)
        }
        other => other,
    })?;
    let k = Matrix6x4::from_fn(|i, j| k[(i, j)]);
    let p = Matrix6::from_fn(|i, j| p[(i, j)]);
    let rho = estimator_spectral_radius(sys, &k);
    if !(rho < 1.0) {
        return Err(EstimatorError::Undetectable(rho));
    }
    Ok(KalmanGain { k, p })
}

/// Spectral radius of `(I − KH)A`, the error dynamics of the fused update.
pub fn estimator_spectral_radius(sys: &AugmentedSystem, k: &Matrix6x4) -> f64 {
    let m = (Matrix6::identity() - k * sys.h) * sys.a;
    spectral_radius(&to_dyn(&m)).unwrap_or(f64::NAN)
}

/// The constant-gain fused predict-correct update:
///
/// ```text
/// x̂_k = A x̂_{k−1} + B u_{k−1} + K(y_k − H(A x̂_{k−1} + B u_{k−1}) − D u_k)
/// ```
///
/// Returns the new estimate and the innovation.
pub fn kalman_update(
    x_hat: &Vector6,
    sys: &AugmentedSystem,
    k: &Matrix6x4,
    u_prev: &Vector4<f64>,
    u_k: &Vector4<f64>,
    y_k: &Vector4<f64>,
) -> Result<(Vector6, Vector4<f64>), EstimatorError> {
    if !(y_k.iter().all(|v| v.is_finite()) && u_k.iter().all(|v| v.is_finite())) {
        return Err(EstimatorError::NonFinite);
    }
    let prior = sys.a * x_hat + sys.b * u_prev;
    let innovation = y_k - sys.h * prior - sys.d * u_k;
    Ok((prior + k * innovation, innovation))
}

/// Running filter for one transmission, in absolute units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    /// Estimate of `x − x₀` in the augmented coordinates.
    pub x_hat: Vector6,
    /// Commanded voltages of the previous tick.
    pub u_prev: Vector2<f64>,
    /// Measured drive voltages of the previous tick.
    pub v_prev: Vector2<f64>,
    /// Measured `Vᵐ` of the previous tick.
    pub y_prev: Vector2<f64>,
    pub last_innovation: Vector4<f64>,
}

impl Default for FilterState {
    fn default() -> Self {
        Self {
            x_hat: Vector6::zeros(),
            u_prev: Vector2::zeros(),
            v_prev: Vector2::zeros(),
            y_prev: Vector2::zeros(),
            last_innovation: Vector4::zeros(),
        }
    }
}

/// Everything the online filter needs, precomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    pub system: AugmentedSystem,
    pub gain: KalmanGain,
    pub x0: Vector4<f64>,
    pub u0: Vector2<f64>,
    y_offset: Vector4<f64>,
}

impl Estimator {
    pub fn new(process: &ProcessModel, swing: &MeasurementModel, lift: &MeasurementModel) -> Result<Self, EstimatorError> {
        let system = build_augmented_system(process, swing, lift)?;
        let gain = compute_kalman_gain(&system)?;
        Ok(Self::from_parts(system, gain, process.x0, process.u0))
    }

    pub fn from_parts(system: AugmentedSystem, gain: KalmanGain, x0: Vector4<f64>, u0: Vector2<f64>) -> Self {
        let y_offset = system.measurement_offset(&x0);
        Self {
            system,
            gain,
            x0,
            u0,
            y_offset,
        }
    }

    /// Initial filter state, `x̂₀ = 0` in deviation coordinates.
    pub fn initial_state(&self) -> FilterState {
        FilterState {
            u_prev: self.u0,
            ..Default::default()
        }
    }

    /// One-step prediction of the process state before the measurement
    /// arrives, in absolute units.
    pub fn predict(&self, state: &FilterState) -> Vector4<f64> {
        let prior = self.system.a * state.x_hat + self.system.b * self.input_deviation(&state.u_prev);
        self.x0 + prior.fixed_rows::<4>(0)
    }

    fn input_deviation(&self, u: &Vector2<f64>) -> Vector4<f64> {
        let du = u - self.u0;
        Vector4::new(du[0], du[1], 0.0, 0.0)
    }

    /// Feeds one tick: `u_cmd` was applied during this tick, `v_meas` and
    /// `vm_meas` are the encoder voltages `(V, Vᵐ)` for swing and lift.
    pub fn update(
        &self,
        state: &mut FilterState,
        u_cmd: Vector2<f64>,
        v_meas: Vector2<f64>,
        vm_meas: Vector2<f64>,
    ) -> Result<(), EstimatorError> {
        let u_prev = self.input_deviation(&state.u_prev);
        let u_k = Vector4::new(v_meas[0], v_meas[1], state.v_prev[0], state.v_prev[1]);
        let y_k = Vector4::new(vm_meas[0], vm_meas[1], state.y_prev[0], state.y_prev[1]) - self.y_offset;
        let (x_hat, innovation) = kalman_update(&state.x_hat, &self.system, &self.gain.k, &u_prev, &u_k, &y_k)?;
        state.x_hat = x_hat;
        state.last_innovation = innovation;
        state.u_prev = u_cmd;
        state.v_prev = v_meas;
        state.y_prev = vm_meas;
        Ok(())
    }

    /// Current process-state estimate in absolute units.
    pub fn process_estimate(&self, state: &FilterState) -> Vector4<f64> {
        self.x0 + state.x_hat.fixed_rows::<4>(0)
    }
}

/// Leg pose from an estimated process state. Actuator positions are clamped
/// to `clamp` (mm) first so the kinematic map is never extrapolated far.
pub fn estimate_leg_pose(x_hat: &Vector4<f64>, kinematics: &LegKinematics, clamp: f64) -> LegPose {
    let limit = clamp.min(kinematics.domain);
    let q_s = x_hat[0].clamp(-limit, limit);
    let q_l = x_hat[2].clamp(-limit, limit);
    kinematics.forward_unchecked(q_s, q_l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::{build_measurement_model, SensorParams};
    use approx::assert_relative_eq;
    use nalgebra::{Matrix2, Matrix4x2};

    pub(crate) fn toy_process() -> ProcessModel {
        ProcessModel {
            a: Matrix4::new(
                0.99, 3.9e-4, 0.0, 0.0, //
                -50.0, 0.95, 0.0, 0.0, //
                0.0, 0.0, 0.99, 3.9e-4, //
                0.0, 0.0, -45.0, 0.955,
            ),
            b: Matrix4x2::new(1e-5, 0.0, 0.05, 0.0, 0.0, 1e-5, 0.0, 0.045),
            w: Matrix4::from_diagonal(&Vector4::new(1e-8, 1e-2, 1e-8, 1e-2)),
            x0: Vector4::new(0.001, 0.0, -0.002, 0.0),
            u0: Vector2::new(1.0, -2.0),
            dt: 4e-4,
            seed: None,
            stability_enforced: false,
        }
    }

    fn sensor() -> MeasurementModel {
        build_measurement_model(
            &SensorParams::default(),
            &Matrix2::from_diagonal_element(0.25),
            &Matrix2::from_diagonal_element(0.04),
        )
        .unwrap()
    }

    #[test]
    fn block_structure() {
        let sys = build_augmented_system(&toy_process(), &sensor(), &sensor()).unwrap();
        assert_eq!(sys.a[(4, 1)], 1.0);
        assert_eq!(sys.a[(5, 3)], 1.0);
        assert_eq!(sys.b.fixed_view::<2, 4>(4, 0).amax(), 0.0);
        assert_eq!(sys.w.fixed_view::<2, 2>(4, 4).amax(), 0.0);
        assert_eq!(sys.a.fixed_view::<4, 4>(0, 0), toy_process().a);
        let m = sensor();
        assert_eq!(sys.h[(0, 1)], m.h[(0, 1)]);
        assert_eq!(sys.h[(1, 3)], m.h[(0, 1)]);
        assert_eq!(sys.h[(2, 4)], m.h[(1, 2)]);
        assert_eq!(sys.d[(2, 2)], m.d[(1, 1)]);
        assert_eq!(sys.d[(0, 2)], m.d[(0, 1)]);
        assert_eq!(sys.n[(0, 2)], m.n[(0, 1)]);
        assert_eq!(sys.n[(0, 1)], 0.0);
    }

    #[test]
    fn scalar_gain() {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        let (k, p) = kalman_gain_dyn(&s(0.5), &s(1.0), &s(1.0), &s(1.0), DareOptions::default()).unwrap();
        let expected = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
        assert_relative_eq!(p[(0, 0)], expected, epsilon = 1e-10);
        assert_relative_eq!(k[(0, 0)], expected / (expected + 1.0), epsilon = 1e-10);
        assert!((k[(0, 0)] - 0.5311).abs() < 1e-4);
    }

    #[test]
    fn zero_process_noise_gives_zero_gain() {
        let mut proc = toy_process();
        proc.w = Matrix4::zeros();
        let sys = build_augmented_system(&proc, &sensor(), &sensor()).unwrap();
        let gain = compute_kalman_gain(&sys).unwrap();
        assert!(gain.k.amax() < 1e-9);
    }

    #[test]
    fn filter_is_stable_and_update_is_linear() {
        let sys = build_augmented_system(&toy_process(), &sensor(), &sensor()).unwrap();
        let gain = compute_kalman_gain(&sys).unwrap();
        assert!(estimator_spectral_radius(&sys, &gain.k) < 1.0);
        let zero = Vector4::zeros();
        let (x, _) = kalman_update(&Vector6::zeros(), &sys, &gain.k, &zero, &zero, &zero).unwrap();
        assert_eq!(x, Vector6::zeros());
        let x1 = Vector6::from_fn(|i, _| i as f64 * 0.1);
        let x2 = Vector6::from_fn(|i, _| 1.0 - i as f64);
        let u1 = Vector4::new(1.0, 2.0, 3.0, 4.0);
        let u2 = Vector4::new(-3.0, 0.5, 2.0, 1.0);
        let y1 = Vector4::new(0.3, -0.2, 5.0, 1.0);
        let y2 = Vector4::new(-1.0, 2.0, 0.0, 3.0);
        let (a, _) = kalman_update(&x1, &sys, &gain.k, &u1, &u2, &y1).unwrap();
        let (b, _) = kalman_update(&x2, &sys, &gain.k, &u2, &u1, &y2).unwrap();
        let (c, _) = kalman_update(&(x1 * 2.0 + x2), &sys, &gain.k, &(u1 * 2.0 + u2), &(u2 * 2.0 + u1), &(y1 * 2.0 + y2)).unwrap();
        assert!((c - (a * 2.0 + b)).amax() < 1e-9 * c.amax().max(1.0));
    }

    #[test]
    fn zero_gain_is_open_loop_prediction() {
        let sys = build_augmented_system(&toy_process(), &sensor(), &sensor()).unwrap();
        let x = Vector6::from_fn(|i, _| 0.01 * i as f64);
        let u = Vector4::new(3.0, -1.0, 0.0, 0.0);
        let (next, _) = kalman_update(&x, &sys, &Matrix6x4::zeros(), &u, &Vector4::zeros(), &Vector4::new(9.0, 9.0, 9.0, 9.0)).unwrap();
        assert_eq!(next, sys.a * x + sys.b * u);
    }

    #[test]
    fn non_finite_measurement_is_rejected() {
        let sys = build_augmented_system(&toy_process(), &sensor(), &sensor()).unwrap();
        let y = Vector4::new(f64::NAN, 0.0, 0.0, 0.0);
        assert_eq!(
            kalman_update(&Vector6::zeros(), &sys, &Matrix6x4::zeros(), &Vector4::zeros(), &Vector4::zeros(), &y),
            Err(EstimatorError::NonFinite)
        );
    }

    #[test]
    fn noiseless_linear_plant_converges() {
        let sys = build_augmented_system(&toy_process(), &sensor(), &sensor()).unwrap();
        let gain = compute_kalman_gain(&sys).unwrap();
        let rho = estimator_spectral_radius(&sys, &gain.k);
        let mut x = Vector6::new(0.02, 1.0, -0.01, -2.0, 0.5, 0.0);
        let mut x_hat = Vector6::zeros();
        let input = |k: usize| {
            let t = k as f64;
            Vector4::new(30.0 * (t * 0.05).sin(), 20.0 * (t * 0.03).cos(), 0.0, 0.0)
        };
        let initial = (x - x_hat).norm();
        for k in 1..=400 {
            let (u_prev, u) = (input(k - 1), input(k));
            x = sys.a * x + sys.b * u_prev;
            let y = sys.h * x + sys.d * u;
            x_hat = kalman_update(&x_hat, &sys, &gain.k, &u_prev, &u, &y).unwrap().0;
        }
        let err = (x - x_hat).norm();
        // Geometric decay at the error-dynamics rate, with slack for the
        // transient constant.
        assert!(err <= 1e3 * initial * rho.powi(400) + 1e-12, "err {err}, rho {rho}");
        assert!(err < 1e-6 * initial);
    }

    #[test]
    fn leg_pose_from_estimate() {
        let kin = LegKinematics::default();
        assert_eq!(estimate_leg_pose(&Vector4::zeros(), &kin, 0.225), LegPose::default());
        let x = Vector4::new(0.05, 0.0, -0.02, 0.0);
        assert_eq!(estimate_leg_pose(&x, &kin, 0.225), kin.forward(0.05, -0.02).unwrap());
        let far = estimate_leg_pose(&Vector4::new(5.0, 0.0, 0.0, 0.0), &kin, 0.225);
        assert_relative_eq!(far.l_x, kin.gain_x * 0.225, epsilon = 1e-12);
    }
}
