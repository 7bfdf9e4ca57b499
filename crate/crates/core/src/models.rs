//! Ground-truth plant: discrete kinematics and dynamics of a four-Mecanum-wheeled
//! robot, the wheel force map with multiplicative actuator faults, and the
//! body wrench mixing.
//!
//! Both models are forward-Euler discretizations with sampling interval
//! `ts`. The yaw angle is never wrapped here.

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Physical parameters of the platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams<T> {
    /// Mass (kg).
    pub m: T,
    /// Yaw inertia (kg m^2).
    pub i_z: T,
    /// Wheel radius (m).
    pub r: T,
    /// Half length (m).
    pub l_x: T,
    /// Half width (m).
    pub l_y: T,
    /// Linear damping (N s/m).
    pub c_v: T,
    /// Angular damping (N m s).
    pub c_theta: T,
    /// Per-wheel friction torque (N m).
    pub tau_f: [T; 4],
    pub tau_min: T,
    pub tau_max: T,
    /// Sampling interval (s).
    pub ts: T,
}

impl<T: Real> RobotParams<T> {
    /// Reference platform: 3 kg, 1.2 kg m^2, 4 cm wheels, 0.2 m x 0.2 m
    /// footprint, torque box of +-0.5 N m, 0.1 s sampling.
    pub fn reference() -> Self {
        Self {
            m: T::lit(3.0),
            i_z: T::lit(1.2),
            r: T::lit(0.04),
            l_x: T::lit(0.1),
            l_y: T::lit(0.1),
            c_v: T::lit(2.0),
            c_theta: T::lit(0.1),
            tau_f: [T::lit(0.05); 4],
            tau_min: T::lit(-0.5),
            tau_max: T::lit(0.5),
            ts: T::lit(0.1),
        }
    }

    /// `L_x + L_y`.
    pub fn l_bar(&self) -> T {
        self.l_x + self.l_y
    }

    pub fn tau_f_vec(&self) -> Vector4<T> {
        Vector4::from(self.tau_f)
    }

    pub fn validate(&self) -> Result<()> {
        let z = T::zero();
        let finite = [
            self.m,
            self.i_z,
            self.r,
            self.l_x,
            self.l_y,
            self.c_v,
            self.c_theta,
            self.tau_min,
            self.tau_max,
            self.ts,
        ]
        .iter()
        .chain(self.tau_f.iter())
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("robot parameters must be finite"));
        }
        if self.m <= z || self.i_z <= z || self.r <= z {
            return Err(Error::config("m, i_z and r must be positive"));
        }
        if self.l_x <= z || self.l_y <= z {
            return Err(Error::config("l_x and l_y must be positive"));
        }
        if self.c_v < z || self.c_theta < z {
            return Err(Error::config("damping coefficients must be non-negative"));
        }
        if self.tau_min >= self.tau_max {
            return Err(Error::config("tau_min must be below tau_max"));
        }
        if self.ts <= z {
            return Err(Error::config("sampling interval must be positive"));
        }
        Ok(())
    }
}

/// Planar posture in the inertial frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseState<T> {
    pub x: T,
    pub y: T,
    /// Yaw (rad), accumulated without wrapping.
    pub theta: T,
}

impl<T: Real> PoseState<T> {
    pub fn new(x: T, y: T, theta: T) -> Self {
        Self { x, y, theta }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn to_vector(self) -> Vector3<T> {
        Vector3::new(self.x, self.y, self.theta)
    }

    pub fn from_vector(v: &Vector3<T>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// Body-frame twist `(u, v, omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyVelocity<T> {
    pub u: T,
    pub v: T,
    pub omega: T,
}

impl<T: Real> BodyVelocity<T> {
    pub fn new(u: T, v: T, omega: T) -> Self {
        Self { u, v, omega }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn to_vector(self) -> Vector3<T> {
        Vector3::new(self.u, self.v, self.omega)
    }

    pub fn from_vector(v: &Vector3<T>) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// Commanded driving torque per wheel (N m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelTorques<T: Real> {
    pub tau: Vector4<T>,
}

impl<T: Real> WheelTorques<T> {
    pub fn new(tau: Vector4<T>) -> Self {
        Self { tau }
    }

    pub fn zero() -> Self {
        Self::new(Vector4::zeros())
    }

    /// Componentwise saturation to `[lo, hi]`.
    pub fn clamped(&self, lo: T, hi: T) -> Self {
        Self::new(self.tau.map(|t| t.clamp(lo, hi)))
    }
}

/// Resultant body-frame force and moment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyWrench<T> {
    pub fx: T,
    pub fy: T,
    pub tau_z: T,
}

impl<T: Real> BodyWrench<T> {
    pub fn zero() -> Self {
        Self {
            fx: T::zero(),
            fy: T::zero(),
            tau_z: T::zero(),
        }
    }

    pub fn to_vector(self) -> Vector3<T> {
        Vector3::new(self.fx, self.fy, self.tau_z)
    }
}

/// Actuation health per wheel; 1 is healthy, 0 is complete failure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultVector<T: Real> {
    pub lambda: Vector4<T>,
}

impl<T: Real> FaultVector<T> {
    pub fn new(lambda: [T; 4]) -> Result<Self> {
        if lambda.iter().any(|l| !l.is_finite() || *l < T::zero() || *l > T::one()) {
            return Err(Error::config("fault parameters must lie in [0, 1]"));
        }
        Ok(Self {
            lambda: Vector4::from(lambda),
        })
    }

    pub fn healthy() -> Self {
        Self {
            lambda: Vector4::repeat(T::one()),
        }
    }

    pub fn as_array(&self) -> [T; 4] {
        [self.lambda[0], self.lambda[1], self.lambda[2], self.lambda[3]]
    }
}

/// Unscaled 3x4 wheel-to-wrench mixing matrix.
pub fn mixing_matrix<T: Real>(params: &RobotParams<T>) -> Matrix3x4<T> {
    let l = params.l_bar();
    let (o, n) = (T::one(), -T::one());
    Matrix3x4::new(o, o, o, o, n, o, n, o, -l, l, l, -l)
}

/// Rotation taking body-frame velocity to inertial-frame rates.
pub fn body_to_world<T: Real>(theta: T) -> Matrix3<T> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, T::zero(), s, c, T::zero(), T::zero(), T::zero(), T::one())
}

pub fn kinematic_step<T: Real>(pose: &PoseState<T>, xi: &BodyVelocity<T>, params: &RobotParams<T>) -> PoseState<T> {
    let (s, c) = pose.theta.sin_cos();
    let ts = params.ts;
    PoseState {
        x: pose.x + ts * (xi.u * c - xi.v * s),
        y: pose.y + ts * (xi.u * s + xi.v * c),
        theta: pose.theta + ts * xi.omega,
    }
}

/// `F_i = (lambda_i tau_i - tau_f_i) / r`. Friction is a signed constant.
pub fn wheel_forces<T: Real>(torques: &WheelTorques<T>, fault: &FaultVector<T>, params: &RobotParams<T>) -> Vector4<T> {
    (fault.lambda.component_mul(&torques.tau) - params.tau_f_vec()) / params.r
}

pub fn body_wrench<T: Real>(forces: &Vector4<T>, params: &RobotParams<T>) -> BodyWrench<T> {
    let w = mixing_matrix(params) * forces * T::lit(std::f64::consts::FRAC_1_SQRT_2);
    BodyWrench {
        fx: w[0],
        fy: w[1],
        tau_z: w[2],
    }
}

pub fn dynamic_step<T: Real>(xi: &BodyVelocity<T>, wrench: &BodyWrench<T>, params: &RobotParams<T>) -> BodyVelocity<T> {
    let ts = params.ts;
    BodyVelocity {
        u: xi.u + ts * ((wrench.fx - params.c_v * xi.u) / params.m + xi.v * xi.omega),
        v: xi.v + ts * ((wrench.fy - params.c_v * xi.v) / params.m - xi.u * xi.omega),
        omega: xi.omega + ts * ((wrench.tau_z - params.c_theta * xi.omega) / params.i_z),
    }
}

/// One ground-truth step of the stacked state. Both updates read the
/// pre-step twist; the noises are added after the deterministic update.
pub fn plant_step<T: Real>(
    pose: &PoseState<T>,
    xi: &BodyVelocity<T>,
    torques: &WheelTorques<T>,
    fault: &FaultVector<T>,
    params: &RobotParams<T>,
    process_noise_kine: &Vector3<T>,
    process_noise_dyna: &Vector3<T>,
) -> (PoseState<T>, BodyVelocity<T>) {
    let wrench = body_wrench(&wheel_forces(torques, fault, params), params);
    let xi_next = dynamic_step(xi, &wrench, params).to_vector() + process_noise_dyna;
    let pose_next = kinematic_step(pose, xi, params).to_vector() + process_noise_kine;
    (PoseState::from_vector(&pose_next), BodyVelocity::from_vector(&xi_next))
}
