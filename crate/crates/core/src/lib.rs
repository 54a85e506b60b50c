//! Proprioceptive estimation and control for piezo-actuated legged
//! microrobots.
//!
//! The pipeline per leg transmission:
//!
//! * [`sysid`] fits a four-state linear process model to excitation data from
//!   the nonlinear [`plant`];
//! * [`sensor`] inverts the piezoelectric encoder circuit into a linear
//!   measurement model;
//! * [`estimator`] stacks both into a six-state system and runs a
//!   constant-gain Kalman filter;
//! * [`controller`] closes the loop with an infinite-horizon LQR and a
//!   model-inversion feed-forward;
//! * [`gait`] produces spline reference trajectories;
//! * [`metrics`] scores locomotion;
//! * [`harness`] ties it together into calibrated, seeded, batch experiments.

// NaN must fail these checks, so negated comparisons are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub(crate) mod matrix_rows;
pub mod controller;
pub mod estimator;
pub mod gait;
pub mod harness;
pub mod metrics;
pub mod plant;
pub mod riccati;
pub mod sensor;
pub mod sysid;
pub mod units;

pub use controller::{ControlLaw, CostWeights, DriveLimits};
pub use estimator::{AugmentedSystem, Estimator, KalmanGain};
pub use gait::{GaitKind, GaitParams, Matching, ReferenceTrajectory};
pub use harness::{ExperimentConfig, HarnessError, Pipeline};
pub use metrics::MetricsRecord;
pub use plant::{Robot, RobotState, TransmissionParams, LEGS};
pub use riccati::{solve_dare, spectral_radius, DareOptions, DareProblem, RiccatiError};
pub use sensor::{MeasurementModel, SensorParams};
pub use sysid::ProcessModel;
