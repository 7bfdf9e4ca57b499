//! Reference posture generators.

use std::f64::consts::TAU;

use crate::models::PoseState;

use super::config::TrajectorySpec;

/// Figure-eight of half-widths `amp_x` and `amp_y`, traversed once every
/// `ns` ticks, with zero heading.
pub fn lemniscate_reference(k: usize, ns: usize, amp_x: f64, amp_y: f64) -> PoseState<f64> {
    let phase = TAU * k as f64 / ns.max(1) as f64;
    let (s, c) = phase.sin_cos();
    let den = 1.0 + s * s;
    PoseState::new(amp_x * c / den, amp_y * s * c / den, 0.0)
}

/// Counter-clockwise square starting at `origin`, one lap per `period`
/// seconds. Each edge begins with `corner_dwell` seconds at its start corner,
/// then moves at constant speed.
pub fn square_reference(t: f64, side: f64, period: f64, corner_dwell: f64, origin: [f64; 2]) -> PoseState<f64> {
    const CORNERS: [[f64; 2]; 5] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]];
    let edge_time = period / 4.0;
    let tau = t.rem_euclid(period);
    let edge = ((tau / edge_time).floor() as usize).min(3);
    let local = tau - edge as f64 * edge_time;
    let frac = ((local - corner_dwell) / (edge_time - corner_dwell)).clamp(0.0, 1.0);
    let (a, b) = (CORNERS[edge], CORNERS[edge + 1]);
    PoseState::new(
        origin[0] + side * (a[0] + frac * (b[0] - a[0])),
        origin[1] + side * (a[1] + frac * (b[1] - a[1])),
        0.0,
    )
}

/// Cyclic waypoint follower: holds the current target until the pose is
/// inside the capture radius, then advances.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointTracker {
    points: Vec<[f64; 2]>,
    capture_radius: f64,
    current: usize,
    visits: usize,
}

impl WaypointTracker {
    pub fn new(points: Vec<[f64; 2]>, capture_radius: f64) -> Self {
        Self {
            points,
            capture_radius,
            current: 0,
            visits: 0,
        }
    }

    pub fn current_index(&self) -> usize {
        self.current
    }

    /// Number of targets reached so far.
    pub fn visits(&self) -> usize {
        self.visits
    }

    /// Advances past every target already captured by `pose` and returns the
    /// active one.
    pub fn waypoint_reference(&mut self, pose: &PoseState<f64>) -> PoseState<f64> {
        if self.within(pose) {
            self.current = (self.current + 1) % self.points.len();
            self.visits += 1;
        }
        self.target()
    }

    pub fn target(&self) -> PoseState<f64> {
        let p = self.points[self.current];
        PoseState::new(p[0], p[1], 0.0)
    }

    fn within(&self, pose: &PoseState<f64>) -> bool {
        let p = self.points[self.current];
        (pose.x - p[0]).hypot(pose.y - p[1]) <= self.capture_radius
    }
}

/// Straight line from `from` toward `target` at `speed`, stopping on it;
/// element `i` is the pose `i` ticks ahead.
pub fn ramp_toward(
    from: &PoseState<f64>,
    target: &PoseState<f64>,
    speed: f64,
    ts: f64,
    len: usize,
) -> Vec<PoseState<f64>> {
    let (dx, dy) = (target.x - from.x, target.y - from.y);
    let dist = dx.hypot(dy);
    (0..len)
        .map(|i| {
            let s = if dist > 0.0 {
                (speed * ts * i as f64 / dist).min(1.0)
            } else {
                1.0
            };
            PoseState::new(from.x + s * dx, from.y + s * dy, target.theta)
        })
        .collect()
}

/// Reference source for a run; time-indexed kinds ignore the pose.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceGenerator {
    Lemniscate {
        amp_x: f64,
        amp_y: f64,
        ns: usize,
    },
    Square {
        side: f64,
        period: f64,
        dwell: f64,
        origin: [f64; 2],
    },
    Waypoints {
        tracker: WaypointTracker,
        speed: f64,
    },
}

impl ReferenceGenerator {
    pub fn new(spec: &TrajectorySpec) -> Self {
        match spec {
            TrajectorySpec::Lemniscate {
                amp_x,
                amp_y,
                steps_per_lap,
            } => ReferenceGenerator::Lemniscate {
                amp_x: *amp_x,
                amp_y: *amp_y,
                ns: *steps_per_lap,
            },
            TrajectorySpec::Square {
                side,
                period,
                corner_dwell,
                origin,
            } => ReferenceGenerator::Square {
                side: *side,
                period: *period,
                dwell: *corner_dwell,
                origin: *origin,
            },
            TrajectorySpec::Waypoints {
                points,
                capture_radius,
                speed,
            } => ReferenceGenerator::Waypoints {
                tracker: WaypointTracker::new(points.clone(), *capture_radius),
                speed: *speed,
            },
        }
    }

    /// Reference at tick `k`.
    pub fn at(&self, k: usize, ts: f64) -> PoseState<f64> {
        match self {
            ReferenceGenerator::Lemniscate { amp_x, amp_y, ns } => lemniscate_reference(k, *ns, *amp_x, *amp_y),
            ReferenceGenerator::Square {
                side,
                period,
                dwell,
                origin,
            } => square_reference(k as f64 * ts, *side, *period, *dwell, *origin),
            ReferenceGenerator::Waypoints { tracker, .. } => tracker.target(),
        }
    }

    /// Poses for ticks `start..start + len`. Waypoint references are a ramp
    /// from `pose` toward the active target.
    pub fn window(&mut self, start: usize, len: usize, pose: &PoseState<f64>, ts: f64) -> Vec<PoseState<f64>> {
        match self {
            ReferenceGenerator::Waypoints { tracker, speed } => {
                let target = tracker.waypoint_reference(pose);
                ramp_toward(pose, &target, *speed, ts, len)
            }
            _ => (start..start + len).map(|k| self.at(k, ts)).collect(),
        }
    }
}
