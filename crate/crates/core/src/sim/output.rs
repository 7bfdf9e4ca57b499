//! Run artifacts: `timeseries.csv` and `metrics.json` under
//! `<outdir>/<run-id>/`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;

use super::config::ScenarioConfig;
use super::metrics::RunMetrics;
use super::runner::{run_id, TimeSeriesLog};

const AXES: [&str; 3] = ["x", "y", "theta"];
const RATES: [&str; 3] = ["u", "v", "omega"];

/// Column names in file order.
pub fn timeseries_header(log: &TimeSeriesLog) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(AXES.iter().chain(&RATES).map(|a| a.to_string()));
    h.extend(AXES.iter().chain(&RATES).map(|a| format!("est_{a}")));
    h.extend(AXES.iter().map(|a| format!("ref_{a}")));
    h.extend(RATES.iter().map(|a| format!("xi_des_{a}")));
    h.extend((1..=4).map(|i| format!("tau{i}")));
    h.extend((1..=4).map(|i| format!("lambda{i}")));
    h.extend((1..=log.hypotheses).map(|i| format!("pi{i}")));
    h.extend((1..=log.obstacles).map(|i| format!("obstacle{i}_distance")));
    h.extend(
        [
            "qp_iters",
            "qp_status",
            "innov_kine",
            "innov_dyna",
            "nis_kine",
            "nis_dyna",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_timeseries<W: Write>(log: &TimeSeriesLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(timeseries_header(log))?;
    for r in &log.records {
        let mut row: Vec<String> = Vec::with_capacity(40 + log.hypotheses);
        row.push(num(r.t));
        for block in [
            &r.true_pose,
            &r.true_xi,
            &r.est_pose,
            &r.est_xi,
            &r.reference,
            &r.xi_des,
        ] {
            row.extend(block.iter().copied().map(num));
        }
        row.extend(r.tau.iter().chain(&r.lambda).copied().map(num));
        if r.pi.is_empty() {
            row.extend(std::iter::repeat_n(String::new(), log.hypotheses));
        } else {
            row.extend(r.pi.iter().copied().map(num));
        }
        row.extend(r.obstacle_distances.iter().copied().map(num));
        row.push(r.qp_iters.to_string());
        row.push(r.qp_status.map_or("none", |s| s.as_str()).to_string());
        row.extend(
            [r.innov_kine, r.innov_dyna, r.nis_kine, r.nis_dyna]
                .into_iter()
                .map(opt),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes both artifacts and returns the run directory.
pub fn write_run(outdir: &Path, config: &ScenarioConfig, log: &TimeSeriesLog, metrics: &RunMetrics) -> Result<PathBuf> {
    let dir = outdir.join(run_id(config));
    fs::create_dir_all(&dir)?;
    write_timeseries(log, fs::File::create(dir.join("timeseries.csv"))?)?;
    let json = serde_json::to_string_pretty(&metrics.to_flat_json(config))?;
    fs::write(dir.join("metrics.json"), json + "\n")?;
    Ok(dir)
}
