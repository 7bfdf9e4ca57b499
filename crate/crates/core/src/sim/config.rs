//! Scenario configuration, read from TOML.
//!
//! Every field has a default, so a file only needs to state what differs
//! from the reference setup.

use std::path::Path;

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::PidGains;
use crate::error::{Error, Result};
use crate::estimation::NoiseConfig;
use crate::fault::{standard_fault_set, FaultSchedule, FaultSegment, FaultSet};
use crate::models::{BodyVelocity, FaultVector, PoseState, RobotParams};
use crate::mpc::MpcConfig;
use crate::qp::AdmmSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Ftc,
    Apt,
    Pid,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::Ftc, ControllerKind::Apt, ControllerKind::Pid];

    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Ftc => "ftc",
            ControllerKind::Apt => "apt",
            ControllerKind::Pid => "pid",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ftc" => Ok(ControllerKind::Ftc),
            "apt" => Ok(ControllerKind::Apt),
            "pid" => Ok(ControllerKind::Pid),
            other => Err(Error::config(format!(
                "unknown controller '{other}' (expected ftc, apt or pid)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub q_kine: [[f64; 3]; 3],
    pub r_kine: [[f64; 3]; 3],
    pub q_dyna: [[f64; 3]; 3],
    pub r_dyna: [[f64; 3]; 3],
}

fn diag3(v: f64) -> [[f64; 3]; 3] {
    [[v, 0.0, 0.0], [0.0, v, 0.0], [0.0, 0.0, v]]
}

fn matrix(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| rows[i][j])
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            q_kine: diag3(0.0025),
            r_kine: diag3(0.01),
            q_dyna: diag3(1e-4),
            r_dyna: diag3(4e-4),
        }
    }
}

impl NoiseSpec {
    pub fn to_noise(&self) -> NoiseConfig<f64> {
        NoiseConfig {
            q_kine: matrix(&self.q_kine),
            r_kine: matrix(&self.r_kine),
            q_dyna: matrix(&self.q_dyna),
            r_dyna: matrix(&self.r_dyna),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub t_start: f64,
    pub lambda: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrajectorySpec {
    Lemniscate {
        #[serde(default = "default_amp_x")]
        amp_x: f64,
        #[serde(default = "default_amp_y")]
        amp_y: f64,
        /// Ticks per lap.
        #[serde(default = "default_steps_per_lap")]
        steps_per_lap: usize,
    },
    Square {
        #[serde(default = "default_side")]
        side: f64,
        /// Seconds per lap.
        #[serde(default = "default_period")]
        period: f64,
        /// Seconds spent at each corner before moving on.
        #[serde(default)]
        corner_dwell: f64,
        #[serde(default)]
        origin: [f64; 2],
    },
    Waypoints {
        points: Vec<[f64; 2]>,
        #[serde(default = "default_capture_radius")]
        capture_radius: f64,
        /// Speed of the straight-line reference ramp toward the target.
        #[serde(default = "default_ramp_speed")]
        speed: f64,
    },
}

fn default_amp_x() -> f64 {
    0.3
}
fn default_amp_y() -> f64 {
    0.4
}
fn default_steps_per_lap() -> usize {
    350
}
fn default_side() -> f64 {
    1.0
}
fn default_period() -> f64 {
    10.0
}
fn default_capture_radius() -> f64 {
    0.05
}
fn default_ramp_speed() -> f64 {
    0.3
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec::Lemniscate {
            amp_x: default_amp_x(),
            amp_y: default_amp_y(),
            steps_per_lap: default_steps_per_lap(),
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            TrajectorySpec::Lemniscate {
                amp_x,
                amp_y,
                steps_per_lap,
            } => *amp_x > 0.0 && *amp_y > 0.0 && *steps_per_lap >= 1,
            TrajectorySpec::Square {
                side,
                period,
                corner_dwell,
                ..
            } => *side > 0.0 && *period > 0.0 && *corner_dwell >= 0.0 && 4.0 * corner_dwell < *period,
            TrajectorySpec::Waypoints {
                points,
                capture_radius,
                speed,
            } => !points.is_empty() && *capture_radius > 0.0 && *speed > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "trajectory parameters must be positive (and waypoints nonempty)",
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub center: [f64; 2],
    pub radius: f64,
    pub danger_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSpec {
    pub horizon: usize,
    pub q_stage: [f64; 3],
    pub q_terminal: [f64; 3],
    pub r_stage: [f64; 3],
    pub xi_min: [f64; 3],
    pub xi_max: [f64; 3],
}

impl Default for MpcSpec {
    fn default() -> Self {
        Self {
            horizon: 10,
            q_stage: [10.0, 10.0, 1.0],
            q_terminal: [10.0, 10.0, 1.0],
            r_stage: [0.1; 3],
            xi_min: [-1.0, -1.0, -2.0],
            xi_max: [1.0, 1.0, 2.0],
        }
    }
}

impl MpcSpec {
    pub fn to_config(&self) -> MpcConfig<f64> {
        let d = |v: &[f64; 3]| Matrix3::from_diagonal(&Vector3::from(*v));
        MpcConfig {
            horizon: self.horizon,
            q_stage: d(&self.q_stage),
            q_terminal: d(&self.q_terminal),
            r_stage: d(&self.r_stage),
            xi_min: Vector3::from(self.xi_min),
            xi_max: Vector3::from(self.xi_max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidSpec {
    pub outer_kp: [f64; 3],
    pub outer_ki: [f64; 3],
    pub outer_kd: [f64; 3],
    pub inner_kp: [f64; 3],
    pub inner_ki: [f64; 3],
    pub inner_kd: [f64; 3],
    pub outer_windup: [f64; 3],
    pub inner_windup: [f64; 3],
}

impl Default for PidSpec {
    fn default() -> Self {
        let g = PidGains::<f64>::default();
        let a = |v: Vector3<f64>| [v.x, v.y, v.z];
        Self {
            outer_kp: a(g.outer_kp),
            outer_ki: a(g.outer_ki),
            outer_kd: a(g.outer_kd),
            inner_kp: a(g.inner_kp),
            inner_ki: a(g.inner_ki),
            inner_kd: a(g.inner_kd),
            outer_windup: a(g.outer_windup),
            inner_windup: a(g.inner_windup),
        }
    }
}

impl PidSpec {
    pub fn to_gains(&self) -> PidGains<f64> {
        let v = |a: &[f64; 3]| Vector3::from(*a);
        PidGains {
            outer_kp: v(&self.outer_kp),
            outer_ki: v(&self.outer_ki),
            outer_kd: v(&self.outer_kd),
            inner_kp: v(&self.inner_kp),
            inner_ki: v(&self.inner_ki),
            inner_kd: v(&self.inner_kd),
            outer_windup: v(&self.outer_windup),
            inner_windup: v(&self.inner_windup),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AptSpec {
    pub forgetting: f64,
    /// Initial RLS covariance is `p0 * I`.
    pub p0: f64,
    pub theta0: [f64; 4],
}

impl Default for AptSpec {
    fn default() -> Self {
        Self {
            forgetting: 0.98,
            p0: 100.0,
            theta0: [1.0; 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub duration: f64,
    pub seed: u64,
    pub controller: ControllerKind,
    pub robot: RobotParams<f64>,
    pub noise: NoiseSpec,
    /// Multiplies every injected plant and sensor noise draw; the filters
    /// keep using `noise` regardless. 0 gives a noiseless plant.
    pub plant_noise_scale: f64,
    pub fault_schedule: Vec<SegmentSpec>,
    /// Hypothesis vectors, entry 1 must be fault-free. Empty selects the
    /// standard 17-entry set.
    pub fault_set: Vec<[f64; 4]>,
    pub trajectory: TrajectorySpec,
    pub mpc: MpcSpec,
    pub admm: AdmmSettings,
    pub beta: f64,
    pub floor: f64,
    /// Saturate each hypothesis' control before fusion rather than after.
    pub clamp_per_model: bool,
    pub pid: PidSpec,
    pub apt: AptSpec,
    pub initial_pose: [f64; 3],
    pub initial_xi: [f64; 3],
    pub obstacles: Vec<ObstacleSpec>,
    /// Leading window excluded from the RMSE metrics (s).
    pub transient: f64,
    /// Run the posture MPC from the one-step-ahead pose prediction, since a
    /// twist set point only moves the pose two ticks later.
    pub delay_compensation: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".to_string(),
            duration: 35.0,
            seed: 0,
            controller: ControllerKind::Ftc,
            robot: RobotParams::reference(),
            noise: NoiseSpec::default(),
            plant_noise_scale: 1.0,
            fault_schedule: vec![SegmentSpec {
                t_start: 0.0,
                lambda: [1.0; 4],
            }],
            fault_set: Vec::new(),
            trajectory: TrajectorySpec::default(),
            mpc: MpcSpec::default(),
            admm: AdmmSettings::default(),
            beta: 0.01,
            floor: 1e-6,
            clamp_per_model: false,
            pid: PidSpec::default(),
            apt: AptSpec::default(),
            initial_pose: [0.3, 0.0, 0.0],
            initial_xi: [0.0; 3],
            obstacles: Vec::new(),
            transient: 2.0,
            delay_compensation: true,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config is serializable")
    }

    /// Number of control ticks in the run.
    pub fn ticks(&self) -> usize {
        (self.duration / self.robot.ts + 1e-9).floor() as usize
    }

    pub fn noise_config(&self) -> NoiseConfig<f64> {
        self.noise.to_noise()
    }

    pub fn schedule(&self) -> Result<FaultSchedule<f64>> {
        let segments = self
            .fault_schedule
            .iter()
            .map(|s| {
                Ok(FaultSegment {
                    t_start: s.t_start,
                    vector: FaultVector::new(s.lambda)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FaultSchedule::new(segments)
    }

    pub fn hypothesis_set(&self) -> Result<FaultSet<f64>> {
        if self.fault_set.is_empty() {
            return Ok(standard_fault_set());
        }
        FaultSet::from_vectors(
            self.fault_set
                .iter()
                .enumerate()
                .map(|(i, v)| (*v, format!("hypothesis {}", i + 1)))
                .collect(),
        )
    }

    pub fn initial_pose(&self) -> PoseState<f64> {
        PoseState::from_vector(&Vector3::from(self.initial_pose))
    }

    pub fn initial_xi(&self) -> BodyVelocity<f64> {
        BodyVelocity::from_vector(&Vector3::from(self.initial_xi))
    }

    pub fn apt_theta0(&self) -> Vector4<f64> {
        Vector4::from(self.apt.theta0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::config("duration must be positive"));
        }
        self.robot.validate()?;
        self.noise_config().validate()?;
        if !(self.plant_noise_scale >= 0.0 && self.plant_noise_scale.is_finite()) {
            return Err(Error::config("plant_noise_scale must be non-negative"));
        }
        self.schedule()?;
        let set = self.hypothesis_set()?;
        self.trajectory.validate()?;
        self.mpc.to_config().validate()?;
        let a = &self.admm;
        if !(a.rho > 0.0 && a.sigma > 0.0 && a.alpha > 0.0 && a.alpha < 2.0 && a.max_iter > 0) {
            return Err(Error::config(
                "ADMM settings need rho, sigma > 0, alpha in (0, 2) and max_iter > 0",
            ));
        }
        if !(a.eps_abs >= 0.0 && a.eps_rel >= 0.0) {
            return Err(Error::config("ADMM tolerances must be non-negative"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::config("beta must be positive"));
        }
        if !(self.floor >= 0.0 && self.floor * set.len() as f64 <= 1.0) {
            return Err(Error::config("posterior floor must lie in [0, 1/s)"));
        }
        self.pid.to_gains().validate()?;
        if !(self.apt.forgetting > 0.0 && self.apt.forgetting <= 1.0 && self.apt.p0 > 0.0) {
            return Err(Error::config("APT needs forgetting in (0, 1] and p0 > 0"));
        }
        if self.initial_pose.iter().chain(&self.initial_xi).any(|v| !v.is_finite()) {
            return Err(Error::config("initial state must be finite"));
        }
        for o in &self.obstacles {
            if !(o.radius > 0.0 && o.radius < o.danger_radius) {
                return Err(Error::config("obstacles need 0 < radius < danger_radius"));
            }
        }
        if !(self.transient >= 0.0) {
            return Err(Error::config("transient must be non-negative"));
        }
        if self.ticks() == 0 {
            return Err(Error::config("duration is shorter than one sampling interval"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario config is serializable");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ScenarioConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.ticks(), 350);
        assert_eq!(cfg.hypothesis_set().unwrap().len(), 17);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ScenarioConfig {
            controller: ControllerKind::Apt,
            trajectory: TrajectorySpec::Waypoints {
                points: vec![[0.0, 0.0], [1.0, 0.5]],
                capture_radius: 0.1,
                speed: 0.2,
            },
            ..Default::default()
        };
        cfg.obstacles.push(ObstacleSpec {
            center: [0.5, 0.5],
            radius: 0.1,
            danger_radius: 0.2,
        });
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.config_hash(), cfg.config_hash());
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "duration = -1.0",
            "controller = \"lqr\"",
            "[[fault_schedule]]\nt_start = 0.0\nlambda = [1.2, 1.0, 1.0, 1.0]",
            "[[fault_schedule]]\nt_start = 1.0\nlambda = [1.0, 1.0, 1.0, 1.0]",
            "[[obstacles]]\ncenter = [0.0, 0.0]\nradius = 0.3\ndanger_radius = 0.2",
            "[trajectory]\nkind = \"waypoints\"\npoints = []",
            "unknown_key = 3",
        ] {
            assert!(ScenarioConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = ScenarioConfig::default();
        let b = ScenarioConfig {
            seed: 1,
            ..Default::default()
        };
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }
}
