//! Discrete-time algebraic Riccati equation (DARE) solver and small
//! stability utilities.
//!
//! Solves
//!
//! ```text
//! X = AᵀXA − AᵀXB(R + BᵀXB)⁻¹BᵀXA + Q
//! ```
//!
//! with the structured doubling algorithm (SDA), followed by a few
//! fixed-point sweeps of the Riccati map as a polish step. The control form
//! `(A, B, Q, R)` gives the LQR cost-to-go `S`; the dual form
//! `(Aᵀ, Hᵀ, W, N)` gives the steady-state a-priori error covariance `P` of
//! the Kalman filter.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiccatiError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("R + BᵀXB is numerically singular")]
    IllConditioned,
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
}

/// A DARE instance. `b` is the input map in the control form and the
/// transposed output map in the filtering form.
#[derive(Debug, Clone, PartialEq)]
pub struct DareProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DareOptions {
    /// Residual tolerance, relative to `max(1, ‖X‖_F)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

impl DareProblem {
    /// Validates dimensions, finiteness, `Q = Qᵀ ⪰ 0` and `R = Rᵀ ≻ 0`.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self, RiccatiError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(RiccatiError::DimensionMismatch(format!(
                "A is {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let m = b.ncols();
        if b.nrows() != n {
            return Err(RiccatiError::DimensionMismatch(format!(
                "B has {} rows, expected {n}",
                b.nrows()
            )));
        }
        if q.shape() != (n, n) {
            return Err(RiccatiError::DimensionMismatch(format!(
                "Q is {:?}, expected ({n}, {n})",
                q.shape()
            )));
        }
        if r.shape() != (m, m) {
            return Err(RiccatiError::DimensionMismatch(format!(
                "R is {:?}, expected ({m}, {m})",
                r.shape()
            )));
        }
        for mat in [&a, &b, &q, &r] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(RiccatiError::NonFinite);
            }
        }
        if !is_symmetric(&q, 1e-9) {
            return Err(RiccatiError::InvalidProblem("Q is not symmetric".into()));
        }
        if !is_symmetric(&r, 1e-9) {
            return Err(RiccatiError::InvalidProblem("R is not symmetric".into()));
        }
        let q_scale = q.norm().max(1.0);
        if n > 0 && min_symmetric_eigenvalue(&q) < -1e-10 * q_scale {
            return Err(RiccatiError::InvalidProblem(
                "Q is not positive semidefinite".into(),
            ));
        }
        if m > 0 && min_symmetric_eigenvalue(&r) <= 0.0 {
            return Err(RiccatiError::InvalidProblem(
                "R is not positive definite".into(),
            ));
        }
        Ok(Self { a, b, q, r })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// `(R + BᵀXB)⁻¹BᵀXA`, the optimal feedback for a given `X`.
    pub fn gain(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, RiccatiError> {
        let bt = self.b.transpose();
        let s = &self.r + &bt * x * &self.b;
        let rhs = &bt * x * &self.a;
        s.lu().solve(&rhs).ok_or(RiccatiError::IllConditioned)
    }

    /// One application of the Riccati map.
    fn riccati_map(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, RiccatiError> {
        let at = self.a.transpose();
        let gain = self.gain(x)?;
        let xa = x * &self.a;
        let mut next = &at * &xa - &at * x * &self.b * gain + &self.q;
        symmetrize(&mut next);
        Ok(next)
    }

    /// Frobenius norm of `X − AᵀXA + AᵀXB(R+BᵀXB)⁻¹BᵀXA − Q`.
    pub fn residual(&self, x: &DMatrix<f64>) -> Result<f64, RiccatiError> {
        Ok((x - self.riccati_map(x)?).norm())
    }

    /// `A − B(R+BᵀXB)⁻¹BᵀXA`.
    pub fn closed_loop(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, RiccatiError> {
        Ok(&self.a - &self.b * self.gain(x)?)
    }
}

/// Solves the DARE. Deterministic for identical inputs.
pub fn solve_dare(
    problem: &DareProblem,
    options: DareOptions,
) -> Result<DMatrix<f64>, RiccatiError> {
    let n = problem.state_dim();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let identity = DMatrix::<f64>::identity(n, n);
    let r_inv = problem
        .r
        .clone()
        .try_inverse()
        .ok_or(RiccatiError::IllConditioned)?;
    let mut g = &problem.b * r_inv * problem.b.transpose();
    symmetrize(&mut g);
    let mut a = problem.a.clone();
    let mut h = problem.q.clone();

    // Doubling converges quadratically; 64 doublings cover 2^64 Riccati steps.
    let doublings = options.max_iter.min(64);
    let mut iterations = 0;
    for _ in 0..doublings {
        iterations += 1;
        let w = &identity + &g * &h;
        let lu = w.lu();
        let w_inv_a = lu.solve(&a).ok_or(RiccatiError::IllConditioned)?;
        let w_inv_g = lu.solve(&g).ok_or(RiccatiError::IllConditioned)?;
        let at = a.transpose();
        let mut h_next = &h + &at * &h * &w_inv_a;
        let mut g_next = &g + &a * w_inv_g * &at;
        let a_next = &a * w_inv_a;
        symmetrize(&mut h_next);
        symmetrize(&mut g_next);
        if h_next.iter().any(|v| !v.is_finite()) {
            break;
        }
        let change = (&h_next - &h).norm();
        h = h_next;
        g = g_next;
        a = a_next;
        if change <= 1e-15 * h.norm().max(1.0) {
            break;
        }
    }

    // Polish with the plain Riccati map; also the fallback if doubling stalled.
    let mut x = if h.iter().all(|v| v.is_finite()) {
        h
    } else {
        problem.q.clone()
    };
    let mut residual = problem.residual(&x)?;
    while residual > options.tol * x.norm().max(1.0) && iterations < options.max_iter {
        iterations += 1;
        x = problem.riccati_map(&x)?;
        residual = problem.residual(&x)?;
        if !residual.is_finite() {
            break;
        }
    }
    if !residual.is_finite() || residual > options.tol * x.norm().max(1.0) {
        return Err(RiccatiError::NonConvergence {
            iterations,
            residual,
        });
    }
    Ok(x)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64, RiccatiError> {
    if m.nrows() != m.ncols() {
        return Err(RiccatiError::DimensionMismatch(format!(
            "spectral radius of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(RiccatiError::NonFinite);
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// `X ← (X + Xᵀ)/2` in place.
pub fn symmetrize(x: &mut DMatrix<f64>) {
    let n = x.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (x[(i, j)] + x[(j, i)]);
            x[(i, j)] = avg;
            x[(j, i)] = avg;
        }
    }
}

pub fn is_symmetric(x: &DMatrix<f64>, rel_tol: f64) -> bool {
    if x.nrows() != x.ncols() {
        return false;
    }
    let scale = x.amax().max(1e-300);
    (x - x.transpose()).amax() <= rel_tol * scale
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(x: &DMatrix<f64>) -> f64 {
    x.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
