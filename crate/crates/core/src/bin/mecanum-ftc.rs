use std::fmt::Write as _;
use std::io::{ErrorKind, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use mecanum_ftc::sim::{run_scenario, write_run, ControllerKind, RunMetrics, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "mecanum-ftc",
    version,
    about = "Closed-loop fault-tolerant control simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its time series and metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long, value_parser = parse_controller)]
        controller: Option<ControllerKind>,
    },
    /// Run FTC, APT and PID on the same scenario and print a joint table.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run consecutive seeds starting at the configured one and aggregate.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: u64,
        /// Also write every run's artifacts here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_controller)]
        controller: Option<ControllerKind>,
    },
}

fn parse_controller(s: &str) -> std::result::Result<ControllerKind, String> {
    s.parse().map_err(|e: mecanum_ftc::Error| e.to_string())
}

fn load(path: &Path) -> Result<ScenarioConfig> {
    ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn execute(config: &ScenarioConfig, out: Option<&Path>) -> Result<RunMetrics> {
    let (log, metrics) = run_scenario(config).with_context(|| {
        format!(
            "running {} with {} (seed {})",
            config.name,
            config.controller.as_str(),
            config.seed
        )
    })?;
    if let Some(dir) = out {
        write_run(dir, config, &log, &metrics).context("writing run artifacts")?;
    }
    Ok(metrics)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.4}"))
}

fn segment_summary(m: &RunMetrics) -> String {
    m.segments
        .iter()
        .map(|s| {
            format!(
                "{}->{}",
                s.target,
                s.converged_index.map_or("-".to_string(), |i| i.to_string())
            )
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn table(out: &mut String, rows: &[(String, RunMetrics)]) {
    let _ = writeln!(
        out,
        "{:<10} {:>12} {:>12} {:>12} {:>10} {:>10} {:>16}",
        "run", "pos_rmse", "vel_rmse", "clearance", "danger_s", "qp_ok", "target->final"
    );
    for (label, m) in rows {
        let _ = writeln!(
            out,
            "{:<10} {:>12.5} {:>12.5} {:>12} {:>10.2} {:>10} {:>16}",
            label,
            m.position_rmse,
            m.velocity_rmse,
            fmt_opt(m.min_clearance),
            m.danger_time,
            fmt_opt(m.qp_solved_fraction),
            if m.segments.iter().any(|s| s.converged_index.is_some()) {
                segment_summary(m)
            } else {
                "-".to_string()
            }
        );
    }
}

fn stats(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, var.sqrt(), min, max)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    match dispatch(Cli::parse()) {
        Ok(text) => match std::io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() != ErrorKind::BrokenPipe => {
                eprintln!("error: writing output: {e}");
                ExitCode::FAILURE
            }
            _ => ExitCode::SUCCESS,
        },
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<String> {
    let mut text = String::new();
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            controller,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(c) = controller {
                cfg.controller = c;
            }
            let metrics = execute(&cfg, Some(&out))?;
            writeln!(text, "{}", serde_json::to_string_pretty(&metrics.to_flat_json(&cfg))?)?;
        }
        Command::Compare { config, out, seed } => {
            let mut base = load(&config)?;
            if let Some(s) = seed {
                base.seed = s;
            }
            let rows = ControllerKind::ALL
                .par_iter()
                .map(|c| {
                    let cfg = ScenarioConfig {
                        controller: *c,
                        ..base.clone()
                    };
                    execute(&cfg, Some(&out)).map(|m| (c.as_str().to_string(), m))
                })
                .collect::<Result<Vec<_>>>()?;
            table(&mut text, &rows);
            let joint: Vec<_> = rows
                .iter()
                .map(|(c, m)| {
                    m.to_flat_json(&ScenarioConfig {
                        controller: c.parse().expect("controller label"),
                        ..base.clone()
                    })
                })
                .collect();
            std::fs::create_dir_all(&out)?;
            let path = out.join(format!("{}-compare-s{}.json", base.name, base.seed));
            std::fs::write(&path, serde_json::to_string_pretty(&joint)? + "\n")?;
        }
        Command::Sweep {
            config,
            seeds,
            out,
            controller,
        } => {
            anyhow::ensure!(seeds > 0, "--seeds must be at least 1");
            let mut base = load(&config)?;
            if let Some(c) = controller {
                base.controller = c;
            }
            let rows = (0..seeds)
                .into_par_iter()
                .map(|i| {
                    let cfg = ScenarioConfig {
                        seed: base.seed + i,
                        ..base.clone()
                    };
                    execute(&cfg, out.as_deref()).map(|m| (format!("s{}", cfg.seed), m))
                })
                .collect::<Result<Vec<_>>>()?;
            table(&mut text, &rows);
            writeln!(text)?;
            let pos: Vec<_> = rows.iter().map(|(_, m)| m.position_rmse).collect();
            let vel: Vec<_> = rows.iter().map(|(_, m)| m.velocity_rmse).collect();
            for (name, v) in [("position_rmse", &pos), ("velocity_rmse", &vel)] {
                let (mean, sd, min, max) = stats(v);
                writeln!(
                    text,
                    "{name:<14} mean {mean:.5}  sd {sd:.5}  min {min:.5}  max {max:.5}"
                )?;
            }
            let converged = rows
                .iter()
                .filter(|(_, m)| {
                    !m.segments.is_empty() && m.segments.iter().all(|s| s.converged_index == Some(s.target))
                })
                .count();
            writeln!(text, "all segments identified in {converged}/{seeds} runs")?;
        }
    }
    Ok(text)
}
