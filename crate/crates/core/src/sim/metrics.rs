//! Run metrics computed from a time-series log.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::fault::nearest_fault;
use crate::qp::QpStatus;

use super::config::ScenarioConfig;
use super::runner::TimeSeriesLog;

/// Posterior behaviour over one fault-schedule segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub t_start: f64,
    pub t_end: f64,
    /// Set member nearest to the segment's true fault (1-based).
    pub target: usize,
    /// Most probable hypothesis at the last tick of the segment.
    pub converged_index: Option<usize>,
    /// Time from segment start until the most probable hypothesis equals the
    /// target and stays so for the rest of the segment.
    pub convergence_time: Option<f64>,
    /// Time from segment start until the target's probability first reaches
    /// 0.95.
    pub confident_time: Option<f64>,
    /// Fraction of the segment's ticks whose most probable hypothesis is the
    /// target.
    pub hold_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub ticks: usize,
    pub position_rmse: f64,
    pub velocity_rmse: f64,
    pub segments: Vec<SegmentMetrics>,
    pub min_clearance: Option<f64>,
    pub danger_time: f64,
    /// Share of QP ticks that reached the solved status.
    pub qp_solved_fraction: Option<f64>,
    pub runtime_s: f64,
}

/// Index (1-based) of the largest entry, lowest index on ties.
pub fn argmax(pi: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in pi.iter().enumerate() {
        if best.is_none_or(|(_, b)| *p > b) {
            best = Some((i, *p));
        }
    }
    best.map(|(i, _)| i + 1)
}

pub fn compute_metrics(log: &TimeSeriesLog, config: &ScenarioConfig) -> Result<RunMetrics> {
    let recs = &log.records;
    if recs.is_empty() {
        return Err(Error::config("cannot compute metrics of an empty log"));
    }
    let ts = config.robot.ts;
    let settled = |t: f64| t >= config.transient - 1e-9;

    let (mut pos_sum, mut pos_n) = (0.0, 0usize);
    for r in recs.iter().filter(|r| settled(r.t)) {
        let (ex, ey) = (r.true_pose[0] - r.reference[0], r.true_pose[1] - r.reference[1]);
        pos_sum += ex * ex + ey * ey;
        pos_n += 1;
    }
    let (mut vel_sum, mut vel_n) = (0.0, 0usize);
    for w in recs.windows(2).filter(|w| settled(w[1].t)) {
        let (eu, ev) = (w[1].true_xi[0] - w[0].xi_des[0], w[1].true_xi[1] - w[0].xi_des[1]);
        vel_sum += eu * eu + ev * ev;
        vel_n += 1;
    }
    let rms = |s: f64, n: usize| if n == 0 { 0.0 } else { (s / n as f64).sqrt() };

    let schedule = config.schedule()?;
    let set = config.hypothesis_set()?;
    let segs = schedule.segments();
    let segments = segs
        .iter()
        .enumerate()
        .map(|(j, seg)| {
            let t_end = segs.get(j + 1).map_or(config.duration, |s| s.t_start);
            let target = nearest_fault(&seg.vector, &set);
            let inside: Vec<_> = recs
                .iter()
                .filter(|r| r.t >= seg.t_start - 1e-9 && r.t < t_end - 1e-9 && !r.pi.is_empty())
                .collect();
            let maps: Vec<_> = inside.iter().map(|r| argmax(&r.pi)).collect();
            let converged_index = maps.last().copied().flatten();
            let convergence_time = if converged_index == Some(target) {
                let first = maps.iter().rposition(|m| *m != Some(target)).map_or(0, |p| p + 1);
                Some(inside[first].t - seg.t_start)
            } else {
                None
            };
            let confident_time = inside
                .iter()
                .find(|r| r.pi[target - 1] >= 0.95)
                .map(|r| r.t - seg.t_start);
            let hold_fraction = (!inside.is_empty())
                .then(|| maps.iter().filter(|m| **m == Some(target)).count() as f64 / inside.len() as f64);
            SegmentMetrics {
                t_start: seg.t_start,
                t_end,
                target,
                converged_index,
                convergence_time,
                confident_time,
                hold_fraction,
            }
        })
        .collect();

    let min_clearance = recs
        .iter()
        .flat_map(|r| r.obstacle_distances.iter().copied())
        .reduce(f64::min);
    let danger_ticks = recs
        .iter()
        .filter(|r| {
            r.obstacle_distances
                .iter()
                .zip(&config.obstacles)
                .any(|(d, o)| d + o.radius < o.danger_radius)
        })
        .count();
    let qp_ticks: Vec<_> = recs.iter().filter_map(|r| r.qp_status).collect();
    let qp_solved_fraction = (!qp_ticks.is_empty())
        .then(|| qp_ticks.iter().filter(|s| **s == QpStatus::Solved).count() as f64 / qp_ticks.len() as f64);

    Ok(RunMetrics {
        ticks: recs.len(),
        position_rmse: rms(pos_sum, pos_n),
        velocity_rmse: rms(vel_sum, vel_n),
        segments,
        min_clearance,
        danger_time: danger_ticks as f64 * ts,
        qp_solved_fraction,
        runtime_s: 0.0,
    })
}

impl RunMetrics {
    /// Flat key/value form, with the run's identity attached.
    pub fn to_flat_json(&self, config: &ScenarioConfig) -> Value {
        let mut m = Map::new();
        let mut put = |k: String, v: Value| {
            m.insert(k, v);
        };
        put("name".into(), config.name.clone().into());
        put("controller".into(), config.controller.as_str().into());
        put("seed".into(), config.seed.into());
        put("config_hash".into(), config.config_hash().into());
        put("ticks".into(), self.ticks.into());
        put("position_rmse".into(), self.position_rmse.into());
        put("velocity_rmse".into(), self.velocity_rmse.into());
        for (i, s) in self.segments.iter().enumerate() {
            let p = format!("segment{}_", i + 1);
            put(format!("{p}t_start"), s.t_start.into());
            put(format!("{p}target"), s.target.into());
            put(format!("{p}converged_index"), s.converged_index.into());
            put(format!("{p}convergence_time"), s.convergence_time.into());
            put(format!("{p}confident_time"), s.confident_time.into());
            put(format!("{p}hold_fraction"), s.hold_fraction.into());
        }
        put("min_clearance".into(), self.min_clearance.into());
        put("danger_time".into(), self.danger_time.into());
        put("qp_solved_fraction".into(), self.qp_solved_fraction.into());
        put("runtime_s".into(), self.runtime_s.into());
        Value::Object(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::runner::TickRecord;

    fn record(t: f64, ex: f64, pi: Vec<f64>) -> TickRecord {
        TickRecord {
            t,
            true_pose: [ex, 0.0, 0.0],
            true_xi: [0.0; 3],
            est_pose: [0.0; 3],
            est_xi: [0.0; 3],
            reference: [0.0; 3],
            xi_des: [0.0; 3],
            tau: [0.0; 4],
            lambda: [1.0; 4],
            pi,
            obstacle_distances: Vec::new(),
            qp_iters: 0,
            qp_status: None,
            innov_kine: None,
            innov_dyna: None,
            nis_kine: None,
            nis_dyna: None,
        }
    }

    fn config(duration: f64) -> ScenarioConfig {
        ScenarioConfig {
            duration,
            transient: 0.0,
            fault_set: vec![[1.0; 4], [0.0, 1.0, 1.0, 1.0]],
            ..Default::default()
        }
    }

    fn log(records: Vec<TickRecord>) -> TimeSeriesLog {
        TimeSeriesLog {
            hypotheses: 2,
            obstacles: 0,
            records,
        }
    }

    #[test]
    fn hand_built_rmse() {
        let l = log(vec![
            record(0.0, 0.3, vec![]),
            record(0.1, 0.0, vec![]),
            record(0.2, 0.3, vec![]),
        ]);
        let m = compute_metrics(&l, &config(0.3)).unwrap();
        assert!((m.position_rmse - 0.06f64.sqrt()).abs() < 1e-15);
        assert!((m.position_rmse - 0.2449).abs() < 1e-4);
    }

    #[test]
    fn zero_error_gives_zero_rmse() {
        let l = log((0..5).map(|k| record(k as f64 * 0.1, 0.0, vec![])).collect());
        let m = compute_metrics(&l, &config(0.5)).unwrap();
        assert_eq!(m.position_rmse, 0.0);
        assert_eq!(m.velocity_rmse, 0.0);
    }

    #[test]
    fn one_hot_from_start_converges_at_zero() {
        let l = log((0..5).map(|k| record(k as f64 * 0.1, 0.0, vec![1.0, 0.0])).collect());
        let m = compute_metrics(&l, &config(0.5)).unwrap();
        let s = &m.segments[0];
        assert_eq!((s.target, s.converged_index), (1, Some(1)));
        assert_eq!(s.convergence_time, Some(0.0));
        assert_eq!(s.confident_time, Some(0.0));
        assert_eq!(s.hold_fraction, Some(1.0));
    }

    #[test]
    fn convergence_counts_last_switch() {
        let pis = [[0.2, 0.8], [0.9, 0.1], [0.1, 0.9], [0.6, 0.4], [0.99, 0.01]];
        let l = log(pis
            .iter()
            .enumerate()
            .map(|(k, p)| record(k as f64 * 0.1, 0.0, p.to_vec()))
            .collect());
        let s = &compute_metrics(&l, &config(0.5)).unwrap().segments[0];
        assert!((s.convergence_time.unwrap() - 0.3).abs() < 1e-12);
        assert!((s.confident_time.unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(s.hold_fraction, Some(0.6));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.5, 0.5]), Some(1));
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), Some(3));
        assert_eq!(argmax(&[]), None);
    }
}
