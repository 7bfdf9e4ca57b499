//! Dynamics-loop fault-tolerant controller.
//!
//! Every fault hypothesis carries its own control matrix and velocity
//! filter. Innovations of the filter bank drive a Bayesian posterior over
//! the hypotheses, and the applied torque is the posterior-weighted sum of
//! the per-hypothesis one-step optimal torques, saturated after fusion.

use log::warn;
use nalgebra::{Cholesky, DMatrix, Matrix3, Matrix3x4, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::estimation::{dyna_filter_step, GaussianBelief, NoiseConfig, UpdateResult};
use crate::fault::FaultSet;
use crate::models::{mixing_matrix, BodyVelocity, FaultVector, RobotParams, WheelTorques};
use crate::scalar::Real;

fn input_scaling<T: Real>(params: &RobotParams<T>) -> Matrix3<T> {
    let k = params.ts / (T::lit(2.0).sqrt() * params.r);
    Matrix3::from_diagonal(&Vector3::new(k / params.m, k / params.m, k / params.i_z))
}

/// Torque-to-next-twist matrix for a given actuation health.
pub fn control_matrix<T: Real>(fault: &FaultVector<T>, params: &RobotParams<T>) -> Matrix3x4<T> {
    input_scaling(params) * mixing_matrix(params) * Matrix4::from_diagonal(&fault.lambda)
}

/// Torque-free one-step twist map: damping, Coriolis coupling and the
/// friction torque fed through the wheel mixing (friction opposes drive).
pub fn drift_term<T: Real>(xi: &BodyVelocity<T>, params: &RobotParams<T>) -> Vector3<T> {
    let ts = params.ts;
    let own = Vector3::new(
        -params.c_v * xi.u / params.m + xi.v * xi.omega,
        -params.c_v * xi.v / params.m - xi.u * xi.omega,
        -params.c_theta * xi.omega / params.i_z,
    );
    let friction = input_scaling(params) * mixing_matrix(params) * params.tau_f_vec();
    xi.to_vector() + own * ts - friction
}

/// Minimizer of `|F(xi_hat) + G u - xi_des|^2 + beta |u|^2`, unclamped.
pub fn per_model_control<T: Real>(
    belief: &GaussianBelief<T, 3>,
    g: &Matrix3x4<T>,
    xi_des: &BodyVelocity<T>,
    beta: T,
    params: &RobotParams<T>,
) -> WheelTorques<T> {
    let residual = drift_term(&BodyVelocity::from_vector(&belief.mean), params) - xi_des.to_vector();
    let normal = g.transpose() * g + Matrix4::identity() * beta;
    let chol = Cholesky::new(normal).expect("G^T G + beta I is positive definite for beta > 0");
    WheelTorques::new(-chol.solve(&(g.transpose() * residual)))
}

/// `ln(|S|^-1/2 exp(-e^T S^-1 e / 2))`, without the `(2 pi)^-l/2` factor.
pub fn log_likelihood<T: Real>(innovation: &Vector3<T>, cov: &Matrix3<T>) -> Result<T> {
    let chol = Cholesky::new(*cov).ok_or_else(|| Error::numerical("likelihood covariance not positive definite"))?;
    let log_det = chol.l().diagonal().map(|d| d.ln()).sum() * T::lit(2.0);
    let maha = innovation.dot(&chol.solve(innovation));
    Ok(-(log_det + maha) * T::lit(0.5))
}

pub fn likelihood<T: Real>(innovation: &Vector3<T>, cov: &Matrix3<T>) -> Result<T> {
    Ok(log_likelihood(innovation, cov)?.exp())
}

/// Raises every weight to at least `floor` and renormalizes the rest so the
/// total is one.
pub fn apply_floor<T: Real>(pis: &mut [T], floor: T) {
    if floor <= T::zero() {
        return;
    }
    let n = pis.len();
    let mut pinned = vec![false; n];
    loop {
        let pinned_count = pinned.iter().filter(|p| **p).count();
        let free_mass: T = pis
            .iter()
            .zip(&pinned)
            .filter(|(_, p)| !**p)
            .fold(T::zero(), |a, (v, _)| a + *v);
        let budget = T::one() - floor * T::from_usize(pinned_count).unwrap();
        let mut changed = false;
        for i in 0..n {
            if pinned[i] {
                pis[i] = floor;
            } else {
                pis[i] = pis[i] * budget / free_mass;
                if pis[i] < floor {
                    pinned[i] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

fn normalize_log_weights<T: Real>(prior: &[T], log_liks: &[T], floor: T) -> Option<Vec<T>> {
    let log_post: Vec<T> = prior
        .iter()
        .zip(log_liks)
        .map(|(p, l)| {
            if *p > T::zero() {
                p.ln() + *l
            } else {
                T::min_value().unwrap()
            }
        })
        .collect();
    let max = log_post.iter().copied().fold(T::min_value().unwrap(), T::max);
    if !max.is_finite() || prior.iter().zip(log_post.iter()).all(|(p, _)| *p <= T::zero()) {
        return None;
    }
    let mut w: Vec<T> = prior
        .iter()
        .zip(&log_post)
        .map(|(p, l)| if *p > T::zero() { (*l - max).exp() } else { T::zero() })
        .collect();
    let total = w.iter().fold(T::zero(), |a, b| a + *b);
    if !(total > T::zero()) || !total.is_finite() {
        return None;
    }
    w.iter_mut().for_each(|v| *v /= total);
    apply_floor(&mut w, floor);
    Some(w)
}

/// Bayes rule over the hypotheses followed by flooring. An all-zero
/// likelihood row leaves the prior untouched.
pub fn posterior_update<T: Real>(prior: &[T], likelihoods: &[T], floor: T) -> Vec<T> {
    let logs: Vec<T> = likelihoods.iter().map(|l| l.ln()).collect();
    posterior_update_log(prior, &logs, floor)
}

/// Log-domain variant of [`posterior_update`].
pub fn posterior_update_log<T: Real>(prior: &[T], log_likelihoods: &[T], floor: T) -> Vec<T> {
    match normalize_log_weights(prior, log_likelihoods, floor) {
        Some(p) => p,
        None => {
            warn!("posterior update skipped: no hypothesis has positive evidence");
            prior.to_vec()
        }
    }
}

/// Posterior-weighted torque, then saturation to `[lo, hi]`.
pub fn aggregate_control<T: Real>(pis: &[T], controls: &[WheelTorques<T>], limits: (T, T)) -> WheelTorques<T> {
    fuse(pis, controls).clamped(limits.0, limits.1)
}

fn fuse<T: Real>(pis: &[T], controls: &[WheelTorques<T>]) -> WheelTorques<T> {
    let tau = pis
        .iter()
        .zip(controls)
        .fold(nalgebra::Vector4::zeros(), |acc, (p, u)| acc + u.tau * *p);
    WheelTorques::new(tau)
}

/// `l + ln|A| - ln|B| - tr(B^-1 A)`; non-positive for SPD inputs, zero iff `A = B`.
pub fn matrix_divergence<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<T> {
    if !a.is_square() || a.shape() != b.shape() {
        return Err(Error::numerical("matrix_divergence needs equal square shapes"));
    }
    let ca = Cholesky::new(a.clone()).ok_or_else(|| Error::numerical("A is not positive definite"))?;
    let cb = Cholesky::new(b.clone()).ok_or_else(|| Error::numerical("B is not positive definite"))?;
    let log_det = |c: &Cholesky<T, nalgebra::Dyn>| c.l().diagonal().map(|d| d.ln()).sum() * T::lit(2.0);
    let l = T::from_usize(a.nrows()).unwrap();
    Ok(l + log_det(&ca) - log_det(&cb) - cb.solve(a).trace())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelHypothesis<T: Real> {
    /// 1-based, matching the fault set.
    pub index: usize,
    pub fault: FaultVector<T>,
    pub g: Matrix3x4<T>,
    pub belief: GaussianBelief<T, 3>,
    pub pi: T,
}

/// Filter-bank outcome of one observation.
#[derive(Debug, Clone)]
pub struct BankObservation<T: Real> {
    pub updates: Vec<UpdateResult<T, 3, 3>>,
    pub log_likelihoods: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct FtcControl<T: Real> {
    pub torques: WheelTorques<T>,
    /// Fused torque before saturation.
    pub unclamped: WheelTorques<T>,
    pub per_model: Vec<WheelTorques<T>>,
}

#[derive(Debug, Clone)]
pub struct ModelBank<T: Real> {
    pub hypotheses: Vec<ModelHypothesis<T>>,
    pub floor: T,
    pub beta: T,
    pub u_limits: (T, T),
    /// Saturate every per-model control before fusing instead of saturating
    /// the fused torque.
    pub clamp_per_model: bool,
}

impl<T: Real> ModelBank<T> {
    /// Uniform prior over `set`; every filter starts from `initial`.
    pub fn new(
        set: &FaultSet<T>,
        params: &RobotParams<T>,
        initial: GaussianBelief<T, 3>,
        beta: T,
        floor: T,
    ) -> Result<Self> {
        if !(beta > T::zero()) {
            return Err(Error::config("beta must be positive"));
        }
        let s = T::from_usize(set.len()).unwrap();
        if floor < T::zero() || floor * s >= T::one() {
            return Err(Error::config("posterior floor must lie in [0, 1/s)"));
        }
        let hypotheses = set
            .entries()
            .iter()
            .map(|e| ModelHypothesis {
                index: e.index,
                fault: e.vector,
                g: control_matrix(&e.vector, params),
                belief: initial,
                pi: T::one() / s,
            })
            .collect();
        Ok(Self {
            hypotheses,
            floor,
            beta,
            u_limits: (params.tau_min, params.tau_max),
            clamp_per_model: false,
        })
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn posterior(&self) -> Vec<T> {
        self.hypotheses.iter().map(|h| h.pi).collect()
    }

    /// 1-based index of the most probable hypothesis (lowest index on ties).
    pub fn map_index(&self) -> usize {
        let mut best = &self.hypotheses[0];
        for h in &self.hypotheses[1..] {
            if h.pi > best.pi {
                best = h;
            }
        }
        best.index
    }

    /// Posterior-weighted velocity estimate.
    pub fn fused_estimate(&self) -> Vector3<T> {
        self.hypotheses
            .iter()
            .fold(Vector3::zeros(), |acc, h| acc + h.belief.mean * h.pi)
    }

    /// Velocity estimate of the most probable hypothesis.
    pub fn map_estimate(&self) -> Vector3<T> {
        self.hypotheses[self.map_index() - 1].belief.mean
    }

    /// Runs every hypothesis filter on `obs`, then updates the posterior.
    pub fn observe(
        &mut self,
        obs: &BodyVelocity<T>,
        u_prev: &WheelTorques<T>,
        params: &RobotParams<T>,
        noise: &NoiseConfig<T>,
    ) -> Result<BankObservation<T>> {
        let mut updates = Vec::with_capacity(self.len());
        let mut log_likelihoods = Vec::with_capacity(self.len());
        for h in &self.hypotheses {
            let tag = |e: Error| Error::Hypothesis {
                index: h.index,
                source: Box::new(e),
            };
            let up = dyna_filter_step(&h.belief, &h.g, u_prev, obs, params, noise).map_err(tag)?;
            log_likelihoods.push(log_likelihood(&up.innovation, &up.innovation_cov).map_err(tag)?);
            updates.push(up);
        }
        let post = posterior_update_log(&self.posterior(), &log_likelihoods, self.floor);
        for ((h, up), p) in self.hypotheses.iter_mut().zip(&updates).zip(post) {
            h.belief = up.belief;
            h.pi = p;
        }
        Ok(BankObservation {
            updates,
            log_likelihoods,
        })
    }

    /// Fused torque from each hypothesis' own estimate.
    pub fn control(&self, xi_des: &BodyVelocity<T>, params: &RobotParams<T>) -> FtcControl<T> {
        let (lo, hi) = self.u_limits;
        let per_model: Vec<_> = self
            .hypotheses
            .iter()
            .map(|h| {
                let u = per_model_control(&h.belief, &h.g, xi_des, self.beta, params);
                if self.clamp_per_model {
                    u.clamped(lo, hi)
                } else {
                    u
                }
            })
            .collect();
        let pis = self.posterior();
        let unclamped = fuse(&pis, &per_model);
        FtcControl {
            torques: unclamped.clamped(lo, hi),
            unclamped,
            per_model,
        }
    }

    /// Filter, posterior and control for one tick, using `u_prev` for the
    /// filter prediction.
    pub fn step(
        &mut self,
        obs: &BodyVelocity<T>,
        u_prev: &WheelTorques<T>,
        xi_des: &BodyVelocity<T>,
        params: &RobotParams<T>,
        noise: &NoiseConfig<T>,
    ) -> Result<(FtcControl<T>, BankObservation<T>)> {
        let seen = self.observe(obs, u_prev, params, noise)?;
        Ok((self.control(xi_des, params), seen))
    }
}
