//! Infinite-horizon LQR tracking with feed-forward:
//!
//! ```text
//! u_k = u₀ + uᵗ_k + L(xʳ_k − x̂_k)
//! ```

use nalgebra::{DMatrix, Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::riccati::{solve_dare, spectral_radius, DareOptions, DareProblem, RiccatiError};
use crate::sysid::ProcessModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("cost weight {name} = {value} must be positive")]
    NonPositiveWeight { name: &'static str, value: f64 },
    #[error("(A, B) is not stabilizable: closed-loop spectral radius {0}")]
    Unstabilizable(f64),
    #[error("input matrix is rank deficient")]
    RankDeficient,
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    /// Position weight (1/mm²).
    pub k_p: f64,
    /// Velocity weight (s²/mm²).
    pub k_d: f64,
    /// Input weight (1/V²).
    pub k_u: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            k_p: 1.0e4,
            k_d: 1.0e-3,
            k_u: 1.0e-3,
        }
    }
}

/// `Q = diag(k_p, k_d, k_p, k_d)`, `R = diag(k_u, k_u)`.
pub fn build_cost(weights: &CostWeights) -> Result<(Matrix4<f64>, Matrix2<f64>), ControllerError> {
    for (name, value) in [("k_p", weights.k_p), ("k_d", weights.k_d), ("k_u", weights.k_u)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(ControllerError::NonPositiveWeight { name, value });
        }
    }
    let q = Matrix4::from_diagonal(&Vector4::new(weights.k_p, weights.k_d, weights.k_p, weights.k_d));
    let r = Matrix2::from_diagonal_element(weights.k_u);
    Ok((q, r))
}

/// Drive voltage bounds (V).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriveLimits {
    pub min: f64,
    pub max: f64,
}

impl Default for DriveLimits {
    fn default() -> Self {
        Self {
            min: -200.0,
            max: 200.0,
        }
    }
}

impl DriveLimits {
    pub fn unbounded() -> Self {
        Self {
            min: f64::NEG_INFINITY,
            max: f64::INFINITY,
        }
    }

    pub fn clamp(&self, v: f64) -> (f64, bool) {
        let c = v.clamp(self.min, self.max);
        (c, c != v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlLaw {
    #[serde(with = "crate::matrix_rows")]
    pub l: Matrix2x4<f64>,
    #[serde(with = "crate::matrix_rows")]
    pub s: Matrix4<f64>,
    pub u0: Vector2<f64>,
    /// Periodic feed-forward, indexed modulo its length. Empty means none.
    #[serde(default)]
    pub u_t: Vec<Vector2<f64>>,
    #[serde(default)]
    pub limits: DriveLimits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlOutput {
    pub u: [f64; 2],
    pub saturated: bool,
}

/// Generic LQR gain `L = (R + BᵀSB)⁻¹BᵀSA`. Returns `(L, S)`.
pub fn lqr_gain_dyn(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    options: DareOptions,
) -> Result<(DMatrix<f64>, DMatrix<f64>), ControllerError> {
    let problem = DareProblem::new(a.clone(), b.clone(), q.clone(), r.clone())?;
    let s = solve_dare(&problem, options)?;
    let l = problem.gain(&s)?;
    Ok((l, s))
}

pub fn compute_lqr_gain(
    process: &ProcessModel,
    q: &Matrix4<f64>,
    r: &Matrix2<f64>,
) -> Result<ControlLaw, ControllerError> {
    let a = DMatrix::from_column_slice(4, 4, process.a.as_slice());
    let b = DMatrix::from_column_slice(4, 2, process.b.as_slice());
    let (l, s) = lqr_gain_dyn(
        &a,
        &b,
        &DMatrix::from_column_slice(4, 4, q.as_slice()),
        &DMatrix::from_column_slice(2, 2, r.as_slice()),
        DareOptions::default(),
    )
    .map_err(|e| match e {
        ControllerError::Riccati(RiccatiError::NonConvergence { .. }) => {
            ControllerError::Unstabilizable(f64::NAN)
        }
        other => other,
    })?;
    let l = Matrix2x4::from_fn(|i, j| l[(i, j)]);
    let s = Matrix4::from_fn(|i, j| s[(i, j)]);
    let rho = closed_loop_radius(process, &l);
    if !(rho < 1.0) {
        return Err(ControllerError::Unstabilizable(rho));
    }
    Ok(ControlLaw {
        l,
        s,
        u0: process.u0,
        u_t: Vec::new(),
        limits: DriveLimits::default(),
    })
}

/// Spectral radius of `Aᵖ − BᵖL`.
pub fn closed_loop_radius(process: &ProcessModel, l: &Matrix2x4<f64>) -> f64 {
    let m = process.a - process.b * l;
    spectral_radius(&DMatrix::from_column_slice(4, 4, m.as_slice())).unwrap_or(f64::NAN)
}

impl ControlLaw {
    /// Control output for an explicit feed-forward value.
    pub fn output(&self, x_ref: &Vector4<f64>, x_hat: &Vector4<f64>, u_t: &Vector2<f64>) -> ControlOutput {
        let raw = self.u0 + u_t + self.l * (x_ref - x_hat);
        let (u0, s0) = self.limits.clamp(raw[0]);
        let (u1, s1) = self.limits.clamp(raw[1]);
        ControlOutput {
            u: [u0, u1],
            saturated: s0 || s1,
        }
    }
}

/// Control output at tick `k`, taking `uᵗ` from the stored periodic
/// sequence.
pub fn control_step(law: &ControlLaw, x_ref: &Vector4<f64>, x_hat_p: &Vector4<f64>, k: usize) -> ControlOutput {
    let u_t = if law.u_t.is_empty() {
        Vector2::zeros()
    } else {
        law.u_t[k % law.u_t.len()]
    };
    law.output(x_ref, x_hat_p, &u_t)
}

/// Per-step least-squares inversion of the process model.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardMap {
    pinv: nalgebra::Matrix2x4<f64>,
    a: Matrix4<f64>,
    x0: Vector4<f64>,
}

impl FeedforwardMap {
    pub fn new(process: &ProcessModel) -> Result<Self, ControllerError> {
        let bt = process.b.transpose();
        let gram = bt * process.b;
        let inv = gram.try_inverse().ok_or(ControllerError::RankDeficient)?;
        let svd = gram.singular_values();
        if !(svd.min() > 1e-14 * svd.max()) {
            return Err(ControllerError::RankDeficient);
        }
        Ok(Self {
            pinv: inv * bt,
            a: process.a,
            x0: process.x0,
        })
    }

    /// `uᵗ` that best moves the model from `x_now` to `x_next`.
    pub fn step(&self, x_now: &Vector4<f64>, x_next: &Vector4<f64>) -> Vector2<f64> {
        self.pinv * ((x_next - self.x0) - self.a * (x_now - self.x0))
    }
}

/// Feed-forward for a periodic sampled reference; the last sample wraps to
/// the first.
pub fn feedforward_from_reference(
    process: &ProcessModel,
    reference: &[Vector4<f64>],
) -> Result<Vec<Vector2<f64>>, ControllerError> {
    let map = FeedforwardMap::new(process)?;
    let n = reference.len();
    Ok((0..n)
        .map(|k| map.step(&reference[k], &reference[(k + 1) % n]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4x2;

    fn process() -> ProcessModel {
        ProcessModel {
            a: Matrix4::new(
                0.99, 3.9e-4, 0.0, 0.0, //
                -50.0, 0.95, 0.001, 0.0, //
                0.0, 0.0, 0.99, 3.9e-4, //
                0.0, 0.002, -45.0, 0.955,
            ),
            b: Matrix4x2::new(1e-5, 0.0, 0.05, 0.001, 0.0, 1e-5, 0.002, 0.045),
            w: Matrix4::zeros(),
            x0: Vector4::new(0.001, 0.0, -0.002, 0.0),
            u0: Vector2::new(1.0, -2.0),
            dt: 4e-4,
            seed: None,
            stability_enforced: false,
        }
    }

    #[test]
    fn cost_construction() {
        assert!(matches!(
            build_cost(&CostWeights { k_p: 1.0, k_d: 0.0, k_u: 1.0 }),
            Err(ControllerError::NonPositiveWeight { name: "k_d", .. })
        ));
        let (q, r) = build_cost(&CostWeights { k_p: 1.0, k_d: 1.0, k_u: 1.0 }).unwrap();
        assert_eq!(q, Matrix4::identity());
        assert_eq!(r, Matrix2::identity());
    }

    #[test]
    fn scalar_gain() {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        let (l, x) = lqr_gain_dyn(&s(0.5), &s(1.0), &s(1.0), &s(1.0), DareOptions::default()).unwrap();
        let expected = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
        assert_relative_eq!(x[(0, 0)], expected, epsilon = 1e-10);
        assert_relative_eq!(l[(0, 0)], 0.5 * expected / (1.0 + expected), epsilon = 1e-10);
        assert!((l[(0, 0)] - 0.2656).abs() < 1e-4);
    }

    #[test]
    fn expensive_control_gives_small_gain() {
        let (q, r) = build_cost(&CostWeights { k_p: 1.0, k_d: 1.0, k_u: 1e9 }).unwrap();
        let law = compute_lqr_gain(&process(), &q, &r).unwrap();
        assert!(law.l.norm() < 1e-3);
    }

    #[test]
    fn weight_scaling_leaves_gain_unchanged() {
        let w = CostWeights { k_p: 100.0, k_d: 0.01, k_u: 0.5 };
        let (q, r) = build_cost(&w).unwrap();
        let base = compute_lqr_gain(&process(), &q, &r).unwrap();
        for c in [1e-3, 7.0, 1e4] {
            let law = compute_lqr_gain(&process(), &(q * c), &(r * c)).unwrap();
            assert!((law.l - base.l).amax() < 1e-10 * base.l.amax().max(1.0));
        }
        assert!(closed_loop_radius(&process(), &base.l) < 1.0);
    }

    #[test]
    fn control_law_cases() {
        let (q, r) = build_cost(&CostWeights::default()).unwrap();
        let mut law = compute_lqr_gain(&process(), &q, &r).unwrap();
        law.limits = DriveLimits::unbounded();
        let x = Vector4::new(0.01, 2.0, -0.03, 1.0);
        assert_eq!(control_step(&law, &x, &x, 0).u, [law.u0[0], law.u0[1]]);
        law.l = Matrix2x4::zeros();
        law.u_t = vec![Vector2::new(3.0, 4.0), Vector2::new(-1.0, 0.5)];
        let out = control_step(&law, &x, &Vector4::zeros(), 3);
        assert_eq!(out.u, [law.u0[0] - 1.0, law.u0[1] + 0.5]);
    }

    #[test]
    fn saturation_is_flagged() {
        let law = ControlLaw {
            l: Matrix2x4::from_element(1e6),
            s: Matrix4::zeros(),
            u0: Vector2::zeros(),
            u_t: Vec::new(),
            limits: DriveLimits::default(),
        };
        let out = control_step(&law, &Vector4::from_element(1.0), &Vector4::zeros(), 0);
        assert!(out.saturated);
        assert_eq!(out.u, [200.0, 200.0]);
    }

    #[test]
    fn feedforward_inverts_the_model() {
        let p = process();
        let n = 100;
        let inputs: Vec<Vector2<f64>> = (0..n)
            .map(|k| {
                let ph = std::f64::consts::TAU * k as f64 / n as f64;
                p.u0 + Vector2::new(40.0 * ph.cos(), 25.0 * (2.0 * ph).sin())
            })
            .collect();
        let mut x = p.x0;
        let mut states = Vec::new();
        for k in 0..n + 1 {
            states.push(x);
            x = p.predict(&x, &inputs[k % n]);
        }
        let ff = FeedforwardMap::new(&p).unwrap();
        for k in 0..n {
            let ut = ff.step(&states[k], &states[k + 1]);
            assert!((ut - (inputs[k] - p.u0)).amax() < 1e-8);
        }
        let constant = vec![p.x0; 10];
        let u = feedforward_from_reference(&p, &constant).unwrap();
        assert!(u.iter().all(|v| v.amax() < 1e-12));
    }
}
