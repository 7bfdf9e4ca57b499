//! Scenario definition, reference generation, the closed-loop runner,
//! metrics and run artifacts.

pub mod config;
pub mod metrics;
pub mod output;
pub mod reference;
pub mod runner;

pub use config::{ControllerKind, ObstacleSpec, ScenarioConfig, TrajectorySpec};
pub use metrics::{compute_metrics, RunMetrics, SegmentMetrics};
pub use output::{write_run, write_timeseries};
pub use reference::{lemniscate_reference, square_reference, WaypointTracker};
pub use runner::{run_id, run_scenario, simulate, TickRecord, TimeSeriesLog};
