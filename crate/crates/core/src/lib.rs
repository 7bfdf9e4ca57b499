//! Fault-tolerant two-loop control for four-Mecanum-wheeled mobile robots.
//!
//! The outer loop tracks posture with a linear time-varying MPC solved by a
//! box-constrained ADMM QP solver. The inner loop runs a bank of extended
//! Kalman filters, one per actuator-fault hypothesis, fuses their posterior
//! probabilities and blends per-model torque commands. Baseline PID and
//! adaptive controllers and a closed-loop simulation harness are included.

pub mod baselines;
pub mod error;
pub mod estimation;
pub mod fault;
pub mod ftc;
pub mod models;
pub mod mpc;
pub mod qp;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Real;

pub type RobotParamsF64 = models::RobotParams<f64>;
pub type RobotParamsF32 = models::RobotParams<f32>;
pub type ModelBankF64 = ftc::ModelBank<f64>;
pub type ModelBankF32 = ftc::ModelBank<f32>;
pub type FaultSetF64 = fault::FaultSet<f64>;
pub type FaultSetF32 = fault::FaultSet<f32>;
