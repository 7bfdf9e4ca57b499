//! Closed-loop simulation: plant, noise, both estimation loops, the posture
//! MPC and the selected inner controller, one record per control tick.

use std::time::Instant;

use nalgebra::{Matrix3, Matrix3x4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::baselines::{AptController, PidController, RlsState};
use crate::error::{Error, Result};
use crate::estimation::{belief_from_observation, dyna_filter_step, kine_filter_step, GaussianBelief, UpdateResult};
use crate::ftc::{control_matrix, ModelBank};
use crate::models::{kinematic_step, plant_step, BodyVelocity, FaultVector, PoseState, WheelTorques};
use crate::mpc::KinematicsMpc;
use crate::qp::QpStatus;

use super::config::{ControllerKind, ScenarioConfig};
use super::metrics::{compute_metrics, RunMetrics};
use super::reference::ReferenceGenerator;

/// Everything logged at one control tick. Plant quantities are the values
/// at the start of the tick, before the torques act.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    pub true_pose: [f64; 3],
    pub true_xi: [f64; 3],
    pub est_pose: [f64; 3],
    pub est_xi: [f64; 3],
    pub reference: [f64; 3],
    pub xi_des: [f64; 3],
    pub tau: [f64; 4],
    pub lambda: [f64; 4],
    /// Posterior over the hypothesis set; empty unless the controller is FTC.
    pub pi: Vec<f64>,
    /// Signed clearance `|p - c| - radius` per obstacle.
    pub obstacle_distances: Vec<f64>,
    pub qp_iters: usize,
    /// `None` when no QP was solved this tick.
    pub qp_status: Option<QpStatus>,
    pub innov_kine: Option<f64>,
    pub innov_dyna: Option<f64>,
    pub nis_kine: Option<f64>,
    pub nis_dyna: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesLog {
    pub hypotheses: usize,
    pub obstacles: usize,
    pub records: Vec<TickRecord>,
}

/// Seeded Gaussian source with the per-tick draw order kinematic process,
/// dynamic process, kinematic observation, dynamic observation.
struct NoiseSource {
    rng: ChaCha8Rng,
    factors: [Matrix3<f64>; 4],
    scale: f64,
}

impl NoiseSource {
    fn new(config: &ScenarioConfig) -> Result<Self> {
        let n = config.noise_config();
        let chol = |m: Matrix3<f64>, name: &str| {
            m.cholesky()
                .map(|c| c.l())
                .ok_or_else(|| Error::config(format!("{name} is not positive definite")))
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            factors: [
                chol(n.q_kine, "q_kine")?,
                chol(n.q_dyna, "q_dyna")?,
                chol(n.r_kine, "r_kine")?,
                chol(n.r_dyna, "r_dyna")?,
            ],
            scale: config.plant_noise_scale,
        })
    }

    fn draw(&mut self) -> [Vector3<f64>; 4] {
        let mut out = [Vector3::zeros(); 4];
        for (slot, l) in out.iter_mut().zip(&self.factors) {
            let z = Vector3::from_fn(|_, _| self.rng.sample::<f64, _>(StandardNormal));
            *slot = l * z * self.scale;
        }
        out
    }
}

enum Inner {
    Ftc(ModelBank<f64>),
    Apt(AptController<f64>),
    Pid {
        pid: PidController<f64>,
        belief: GaussianBelief<f64, 3>,
        g: Matrix3x4<f64>,
    },
}

impl Inner {
    fn new(config: &ScenarioConfig, initial: GaussianBelief<f64, 3>) -> Result<Self> {
        let params = &config.robot;
        Ok(match config.controller {
            ControllerKind::Ftc => {
                let mut bank = ModelBank::new(&config.hypothesis_set()?, params, initial, config.beta, config.floor)?;
                bank.clamp_per_model = config.clamp_per_model;
                Inner::Ftc(bank)
            }
            ControllerKind::Apt => Inner::Apt(AptController::new(
                RlsState::new(config.apt_theta0(), config.apt.p0, config.apt.forgetting)?,
                initial,
                config.beta,
            )),
            ControllerKind::Pid => Inner::Pid {
                pid: PidController::new(config.pid.to_gains()),
                belief: initial,
                g: control_matrix(&FaultVector::healthy(), params),
            },
        })
    }

    /// Dynamics-loop update; returns the innovation of the reported filter
    /// (the most probable hypothesis for FTC).
    fn observe(
        &mut self,
        obs: &BodyVelocity<f64>,
        u_prev: &WheelTorques<f64>,
        config: &ScenarioConfig,
    ) -> Result<UpdateResult<f64, 3, 3>> {
        let (params, noise) = (&config.robot, config.noise_config());
        match self {
            Inner::Ftc(bank) => {
                let mut seen = bank.observe(obs, u_prev, params, &noise)?;
                let map = bank.map_index();
                let pos = bank.hypotheses.iter().position(|h| h.index == map).unwrap_or(0);
                Ok(seen.updates.swap_remove(pos))
            }
            Inner::Apt(apt) => apt.observe(obs, u_prev, params, &noise),
            Inner::Pid { belief, g, .. } => {
                let up = dyna_filter_step(belief, g, u_prev, obs, params, &noise)?;
                *belief = up.belief;
                Ok(up)
            }
        }
    }

    fn velocity_estimate(&self) -> Vector3<f64> {
        match self {
            Inner::Ftc(bank) => bank.map_estimate(),
            Inner::Apt(apt) => apt.belief.mean,
            Inner::Pid { belief, .. } => belief.mean,
        }
    }

    fn module(&self) -> &'static str {
        match self {
            Inner::Ftc(_) => "ftc_controller",
            Inner::Apt(_) | Inner::Pid { .. } => "baselines",
        }
    }
}

fn arr3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn tick_err(tick: usize, module: &'static str) -> impl Fn(Error) -> Error {
    move |e| Error::Tick {
        tick,
        module,
        source: Box::new(e),
    }
}

/// Shifts the reference headings by the multiple of a full turn that brings
/// the first one closest to `theta`.
fn align_heading(mut window: Vec<PoseState<f64>>, theta: f64) -> Vec<PoseState<f64>> {
    if let Some(first) = window.first() {
        let turns = ((theta - first.theta) / std::f64::consts::TAU).round();
        for p in &mut window {
            p.theta += turns * std::f64::consts::TAU;
        }
    }
    window
}

/// Runs the closed loop and returns the per-tick log.
pub fn simulate(config: &ScenarioConfig) -> Result<TimeSeriesLog> {
    config.validate()?;
    let params = config.robot;
    let ts = params.ts;
    let noise = config.noise_config();
    let schedule = config.schedule()?;
    let hypotheses = config.hypothesis_set()?.len();
    let mut source = NoiseSource::new(config)?;
    let mut refgen = ReferenceGenerator::new(&config.trajectory);
    let mut mpc = KinematicsMpc::new(config.mpc.to_config(), config.admm);
    let horizon = config.mpc.horizon;
    let pose_driven = matches!(refgen, ReferenceGenerator::Waypoints { .. });

    let mut pose = config.initial_pose();
    let mut xi = config.initial_xi();
    let mut kine: Option<GaussianBelief<f64, 3>> = None;
    let mut inner: Option<Inner> = None;
    let mut u_prev = WheelTorques::zero();
    let mut xi_des_prev = BodyVelocity::zero();
    let mut xi_est_prev = Vector3::zeros();
    let ticks = config.ticks();
    let mut records = Vec::with_capacity(ticks);

    for k in 0..ticks {
        let t = k as f64 * ts;
        let fault = schedule.lookup(t).map_err(tick_err(k, "fault_set"))?;
        let [w_kine, w_dyna, v_kine, v_dyna] = source.draw();
        let obs_pose = PoseState::from_vector(&(pose.to_vector() + v_kine));
        let obs_xi = BodyVelocity::from_vector(&(xi.to_vector() + v_dyna));

        let (mut innov_kine, mut innov_dyna, mut nis_kine, mut nis_dyna) = (None, None, None, None);
        let (kine_belief, ctl) = match (kine.as_mut(), inner.as_mut()) {
            (Some(kb), Some(ctl)) => {
                let up = kine_filter_step(kb, &BodyVelocity::from_vector(&xi_est_prev), &obs_pose, &params, &noise)
                    .map_err(tick_err(k, "estimation"))?;
                innov_kine = Some(up.innovation.norm());
                nis_kine = Some(up.nis().map_err(tick_err(k, "estimation"))?);
                *kb = up.belief;
                let module = ctl.module();
                let dy = ctl.observe(&obs_xi, &u_prev, config).map_err(tick_err(k, module))?;
                innov_dyna = Some(dy.innovation.norm());
                nis_dyna = Some(dy.nis().map_err(tick_err(k, module))?);
                (kb, ctl)
            }
            _ => {
                kine = Some(belief_from_observation(obs_pose.to_vector(), &noise.r_kine));
                let initial = belief_from_observation(obs_xi.to_vector(), &noise.r_dyna);
                inner = Some(Inner::new(config, initial)?);
                (kine.as_mut().unwrap(), inner.as_mut().unwrap())
            }
        };
        let pose_est = PoseState::from_vector(&kine_belief.mean);
        let xi_est_vec = ctl.velocity_estimate();
        let xi_est = BodyVelocity::from_vector(&xi_est_vec);

        let (xi_des, tau, qp_iters, qp_status) = match ctl {
            Inner::Pid { pid, .. } => {
                let window = refgen.window(k, horizon + 1, &pose_est, ts);
                let target = if pose_driven { window[horizon] } else { window[0] };
                let out = pid.step(&pose_est, &xi_est, &target, &params);
                (out.xi_des, out.torques, 0, None)
            }
            _ => {
                let (start, first) = if config.delay_compensation {
                    (kinematic_step(&pose_est, &xi_est, &params), k + 1)
                } else {
                    (pose_est, k)
                };
                let window = align_heading(refgen.window(first, horizon + 1, &start, ts), start.theta);
                let out = mpc
                    .step(&start, &window, &xi_des_prev, &params)
                    .map_err(tick_err(k, "qp_mpc"))?;
                let tau = match ctl {
                    Inner::Ftc(bank) => bank.control(&out.xi, &params).torques,
                    Inner::Apt(apt) => apt.control(&out.xi, &params).torques,
                    Inner::Pid { .. } => unreachable!(),
                };
                (out.xi, tau, out.iterations, Some(out.status))
            }
        };

        let pi = match ctl {
            Inner::Ftc(bank) => bank.posterior(),
            _ => Vec::new(),
        };
        let obstacle_distances = config
            .obstacles
            .iter()
            .map(|o| (pose.x - o.center[0]).hypot(pose.y - o.center[1]) - o.radius)
            .collect();
        records.push(TickRecord {
            t,
            true_pose: arr3(&pose.to_vector()),
            true_xi: arr3(&xi.to_vector()),
            est_pose: arr3(&pose_est.to_vector()),
            est_xi: arr3(&xi_est_vec),
            reference: arr3(&refgen.at(k, ts).to_vector()),
            xi_des: arr3(&xi_des.to_vector()),
            tau: tau.tau.into(),
            lambda: fault.as_array(),
            pi,
            obstacle_distances,
            qp_iters,
            qp_status,
            innov_kine,
            innov_dyna,
            nis_kine,
            nis_dyna,
        });

        (pose, xi) = plant_step(&pose, &xi, &tau, &fault, &params, &w_kine, &w_dyna);
        if !(pose.is_finite() && xi.to_vector().iter().all(|v| v.is_finite())) {
            return Err(tick_err(k, "core_models")(Error::numerical(
                "plant state became non-finite",
            )));
        }
        u_prev = tau;
        xi_des_prev = xi_des;
        xi_est_prev = xi_est_vec;
    }

    Ok(TimeSeriesLog {
        hypotheses,
        obstacles: config.obstacles.len(),
        records,
    })
}

/// Closed loop plus metrics; the metrics carry the wall-clock runtime.
pub fn run_scenario(config: &ScenarioConfig) -> Result<(TimeSeriesLog, RunMetrics)> {
    let started = Instant::now();
    let log = simulate(config)?;
    let mut metrics = compute_metrics(&log, config)?;
    metrics.runtime_s = started.elapsed().as_secs_f64();
    Ok((log, metrics))
}

/// Directory name used for a run's artifacts.
pub fn run_id(config: &ScenarioConfig) -> String {
    format!("{}-{}-s{}", config.name, config.controller.as_str(), config.seed)
}
