//! Acceptance gate. Every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line; the process exits non-zero if any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use mecanum_ftc::estimation::GaussianBelief;
use mecanum_ftc::fault::standard_fault_set;
use mecanum_ftc::ftc::{control_matrix, drift_term, matrix_divergence, per_model_control};
use mecanum_ftc::models::{BodyVelocity, FaultVector, RobotParams};
use mecanum_ftc::qp::{solve_qp_admm, AdmmSettings, QpProblem, QpStatus, WarmStart};
use mecanum_ftc::sim::metrics::argmax;
use mecanum_ftc::sim::{
    run_scenario, simulate, write_timeseries, ControllerKind, RunMetrics, ScenarioConfig, TimeSeriesLog,
};

const SEEDS: u64 = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn scenario(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"));
    ScenarioConfig::load(path).expect("scenario file")
}

fn with(base: &ScenarioConfig, controller: ControllerKind, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        controller,
        seed,
        ..base.clone()
    }
}

fn run(config: &ScenarioConfig) -> (TimeSeriesLog, RunMetrics) {
    run_scenario(config).unwrap_or_else(|e| panic!("{} seed {}: {e}", config.name, config.seed))
}

/// Per segment: first time the expected hypothesis reaches 0.95, and the
/// share of ticks on which it is the most probable one.
fn identification(log: &TimeSeriesLog, config: &ScenarioConfig, expected: &[usize]) -> (bool, String) {
    let starts: Vec<f64> = config.fault_schedule.iter().map(|s| s.t_start).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for (j, want) in expected.iter().enumerate() {
        let t0 = starts[j];
        let t1 = starts.get(j + 1).copied().unwrap_or(config.duration);
        let inside: Vec<_> = log
            .records
            .iter()
            .filter(|r| r.t >= t0 - 1e-9 && r.t < t1 - 1e-9)
            .collect();
        let confident = inside.iter().find(|r| r.pi[want - 1] >= 0.95).map(|r| r.t - t0);
        let hold = inside.iter().filter(|r| argmax(&r.pi) == Some(*want)).count() as f64 / inside.len() as f64;
        let last = inside.last().and_then(|r| argmax(&r.pi));
        let seg_ok = confident.is_some_and(|c| c <= 2.0 + 1e-9) && hold >= 0.9;
        ok &= seg_ok;
        parts.push(format!(
            "{}:map={} conf={} hold={:.2}",
            want,
            last.map_or("-".into(), |m| m.to_string()),
            confident.map_or("-".into(), |c| format!("{c:.1}s")),
            hold
        ));
    }
    (ok, parts.join(" "))
}

fn sequence_criterion(name: &str, expected: &[usize], runtime_cap: Option<f64>) -> Outcome {
    let base = scenario(name);
    let results: Vec<_> = (0..SEEDS)
        .into_par_iter()
        .map(|i| {
            let cfg = with(&base, ControllerKind::Ftc, base.seed + i);
            let (log, m) = run(&cfg);
            let (ok, detail) = identification(&log, &cfg, expected);
            let fast = runtime_cap.is_none_or(|cap| m.runtime_s < cap);
            (cfg.seed, ok && fast, detail, m.runtime_s)
        })
        .collect();
    let passes = results.iter().filter(|r| r.1).count();
    let worst_runtime = results.iter().map(|r| r.3).fold(0.0, f64::max);
    let failing: Vec<_> = results
        .iter()
        .filter(|r| !r.1)
        .take(3)
        .map(|r| format!("[s{} {}]", r.0, r.2))
        .collect();
    Outcome {
        pass: passes as u64 == SEEDS,
        detail: format!(
            "{passes}/{SEEDS} seeds, max runtime {worst_runtime:.3}s {}",
            failing.join(" ")
        ),
    }
}

fn criterion_1() -> Outcome {
    sequence_criterion("one_fault", &[6, 7, 5], Some(5.0))
}

fn criterion_2() -> Outcome {
    sequence_criterion("two_fault", &[14, 11, 12], None)
}

fn criterion_3() -> Outcome {
    let set = standard_fault_set::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut members: Vec<usize> = Vec::new();
    while members.len() < 5 {
        let m = rng.random_range(1..=set.len());
        if !members.contains(&m) {
            members.push(m);
        }
    }
    let jobs: Vec<(usize, u64)> = members.iter().flat_map(|m| (0..SEEDS).map(move |s| (*m, s))).collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|(m, s)| {
            let cfg = ScenarioConfig {
                name: "fixed_member".into(),
                duration: 10.5,
                seed: 100 + s,
                fault_schedule: vec![mecanum_ftc::sim::config::SegmentSpec {
                    t_start: 0.0,
                    lambda: set.get(*m).unwrap().vector.as_array(),
                }],
                ..Default::default()
            };
            let log = simulate(&cfg).expect("fixed-member run");
            let hit = log.records.iter().take(101).position(|r| r.pi[m - 1] >= 0.99);
            (*m, *s, hit)
        })
        .collect();
    let passes = results.iter().filter(|r| r.2.is_some()).count();
    let failing: Vec<_> = results
        .iter()
        .filter(|r| r.2.is_none())
        .take(5)
        .map(|r| format!("member {} seed {}", r.0, r.1))
        .collect();
    Outcome {
        pass: passes == results.len(),
        detail: format!(
            "members {members:?}: {passes}/{} within 100 ticks {}",
            results.len(),
            failing.join(", ")
        ),
    }
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, max_cond: f64) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = raw.qr().q();
    let eig = DVector::from_fn(n, |i, _| {
        if i == 0 {
            1.0
        } else if i == n - 1 {
            max_cond
        } else {
            max_cond.powf(rng.random_range(0.0..1.0))
        }
    });
    let scale = 10f64.powf(rng.random_range(-2.0..2.0));
    let m = &q * DMatrix::from_diagonal(&eig) * q.transpose() * scale;
    (&m + m.transpose()) * 0.5
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_eq: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=6);
        let cond_a = 10f64.powf(rng.random_range(0.0..4.0));
        let cond_b = 10f64.powf(rng.random_range(0.0..4.0));
        let a = random_spd(&mut rng, n, cond_a);
        let b = random_spd(&mut rng, n, cond_b);
        worst = worst.max(matrix_divergence(&a, &b).unwrap());
        worst_eq = worst_eq.max(matrix_divergence(&a, &a).unwrap().abs());
    }
    Outcome {
        pass: worst <= 1e-9 && worst_eq <= 1e-9,
        detail: format!("max divergence {worst:.3e}, max |divergence(A,A)| {worst_eq:.3e}"),
    }
}

fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// Conjugate gradients driven only by cost evaluations: gradients by central
/// differences and curvature along a direction by a second difference, both
/// exact for a quadratic up to rounding.
fn cost_only_minimizer(cost: &dyn Fn(&Vector4<f64>) -> f64) -> Vector4<f64> {
    let grad = |u: &Vector4<f64>| {
        let h = 1e-3;
        Vector4::from_fn(|i, _| {
            let mut e = Vector4::zeros();
            e[i] = h;
            (cost(&(u + e)) - cost(&(u - e))) / (2.0 * h)
        })
    };
    let mut u = Vector4::zeros();
    let g_scale = grad(&u).norm();
    let stalled = |g: &Vector4<f64>| g.norm() <= 1e-13 * (1.0 + g_scale);
    for _ in 0..3 {
        let mut g = grad(&u);
        let mut d = -g;
        for _ in 0..4 {
            if stalled(&g) {
                break;
            }
            let s = 1.0 / d.norm();
            let dh = d * s;
            let curv = (cost(&(u + dh)) + cost(&(u - dh)) - 2.0 * cost(&u)) / (s * s);
            if !(curv > 0.0) {
                break;
            }
            u += d * (-g.dot(&d) / curv);
            let g_new = grad(&u);
            d = -g_new + d * (g_new.norm_squared() / g.norm_squared());
            g = g_new;
        }
    }
    u
}

fn criterion_5() -> Outcome {
    let params = RobotParams::<f64>::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_rel, mut worst_grad) = (0.0f64, 0.0f64);
    let mut failures = 0;
    for _ in 0..200 {
        let lambda = [0; 4].map(|_| rng.random_range(0.0..=1.0));
        let g = control_matrix(&FaultVector::new(lambda).unwrap(), &params);
        let beta = 10f64.powf(rng.random_range(-3.0..=0.0));
        let mean = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let des = BodyVelocity::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-2.0..2.0),
        );
        let belief = GaussianBelief::new(mean, Matrix3::identity() * 1e-3);
        let u = per_model_control(&belief, &g, &des, beta, &params).tau;

        let residual = drift_term(&BodyVelocity::from_vector(&mean), &params) - des.to_vector();
        let cost = |v: &Vector4<f64>| (residual + g * v).norm_squared() + beta * v.norm_squared();
        let oracle = cost_only_minimizer(&cost);
        let rel = (u - oracle).norm() / oracle.norm().max(1e-12);

        let fd_grad = |v: &Vector4<f64>| {
            Vector4::from_fn(|i, _| {
                let h = 1e-5 * (1.0 + v[i].abs());
                let mut e = Vector4::zeros();
                e[i] = h;
                (cost(&(v + e)) - cost(&(v - e))) / (2.0 * h)
            })
        };
        let g0 = fd_grad(&Vector4::zeros()).norm();
        let g_at = fd_grad(&u).amax();
        let ok = rel <= 1e-6 && g_at <= 1e-6 * (1.0 + g0);
        if !ok {
            failures += 1;
        }
        worst_rel = nan_max(worst_rel, rel);
        worst_grad = nan_max(worst_grad, g_at / (1.0 + g0));
    }
    Outcome {
        pass: failures == 0,
        detail: format!(
            "{failures}/200 failing, max relative gap {worst_rel:.3e}, max scaled FD gradient {worst_grad:.3e}"
        ),
    }
}

/// Tries every free/lower/upper assignment and keeps the best one that
/// satisfies the KKT conditions.
fn exhaustive_box_qp(p: &DMatrix<f64>, q: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    let n = q.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut z = DVector::zeros(n);
        let mut free = Vec::new();
        let mut c = code;
        for i in 0..n {
            match c % 3 {
                0 => free.push(i),
                1 => z[i] = lo[i],
                _ => z[i] = hi[i],
            }
            c /= 3;
        }
        if !free.is_empty() {
            let pff = DMatrix::from_fn(free.len(), free.len(), |a, b| p[(free[a], free[b])]);
            let rhs = DVector::from_fn(free.len(), |a, _| {
                -(q[free[a]]
                    + (0..n)
                        .filter(|j| !free.contains(j))
                        .map(|j| p[(free[a], j)] * z[j])
                        .sum::<f64>())
            });
            let sol = pff.cholesky().expect("SPD").solve(&rhs);
            for (a, &i) in free.iter().enumerate() {
                z[i] = sol[a];
            }
        }
        let grad = p * &z + q;
        let feasible = (0..n).all(|i| z[i] >= lo[i] - 1e-12 && z[i] <= hi[i] + 1e-12);
        let kkt = (0..n).all(|i| {
            if free.contains(&i) {
                true
            } else if z[i] == lo[i] {
                grad[i] >= -1e-9
            } else {
                grad[i] <= 1e-9
            }
        });
        if feasible && kkt {
            let obj = 0.5 * z.dot(&(p * &z)) + q.dot(&z);
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, z));
            }
        }
    }
    best.expect("a strictly convex box QP has a KKT point").1
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let settings = AdmmSettings::default();
    let mut worst = 0.0f64;
    let mut random_ok = true;
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let p = if n == 1 {
            DMatrix::from_element(1, 1, 10f64.powf(rng.random_range(-1.0..2.0)))
        } else {
            let cond = 10f64.powf(rng.random_range(0.0..3.0));
            random_spd(&mut rng, n, cond)
        };
        let q = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let lo = DVector::from_fn(n, |_, _| rng.random_range(-2.0..0.0));
        let hi = DVector::from_fn(n, |i, _| lo[i] + rng.random_range(0.1..3.0));
        let oracle = exhaustive_box_qp(&p, &q, &lo, &hi);
        let problem = QpProblem {
            p,
            q,
            lower: lo,
            upper: hi,
        };
        let sol = solve_qp_admm(&problem, &settings, &WarmStart::default()).unwrap();
        let gap = (&sol.z - &oracle).amax();
        worst = worst.max(gap);
        random_ok &= gap <= 1e-3;
    }

    let mut configs = Vec::new();
    for name in ["one_fault", "two_fault", "collision"] {
        let base = scenario(name);
        for c in [ControllerKind::Ftc, ControllerKind::Apt] {
            configs.push(with(&base, c, base.seed));
        }
    }
    let (solved, total) = configs
        .par_iter()
        .map(|cfg| {
            let log = simulate(cfg).expect("scenario run");
            let statuses: Vec<_> = log.records.iter().filter_map(|r| r.qp_status).collect();
            (
                statuses.iter().filter(|s| **s == QpStatus::Solved).count(),
                statuses.len(),
            )
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let share = solved as f64 / total as f64;
    Outcome {
        pass: random_ok && share >= 0.99,
        detail: format!(
            "random QPs max gap {worst:.3e}; scenario solves {solved}/{total} ({:.2}%)",
            share * 100.0
        ),
    }
}

fn criterion_7() -> Outcome {
    let rmse = |name: &str| -> Vec<[f64; 3]> {
        let base = scenario(name);
        (0..SEEDS)
            .into_par_iter()
            .map(|i| {
                let seed = base.seed + i;
                [ControllerKind::Ftc, ControllerKind::Apt, ControllerKind::Pid]
                    .map(|c| run(&with(&base, c, seed)).1.position_rmse)
            })
            .collect()
    };
    let mean = |v: &[[f64; 3]], j: usize| v.iter().map(|r| r[j]).sum::<f64>() / v.len() as f64;
    let one = rmse("one_fault");
    let two = rmse("two_fault");
    let one_wins = one.iter().filter(|r| r[0] < r[2]).count();
    let two_wins = two.iter().filter(|r| r[0] <= r[1] && r[1] <= r[2]).count();
    Outcome {
        pass: one_wins >= 8 && two_wins >= 8,
        detail: format!(
            "one-fault FTC<PID {one_wins}/{SEEDS} (mean FTC {:.3} PID {:.3}); two-fault FTC<=APT<=PID {two_wins}/{SEEDS} (mean FTC {:.3} APT {:.3} PID {:.3})",
            mean(&one, 0),
            mean(&one, 2),
            mean(&two, 0),
            mean(&two, 1),
            mean(&two, 2)
        ),
    }
}

fn criterion_8() -> Outcome {
    let noiseless = ScenarioConfig {
        name: "noiseless".into(),
        duration: 10.0,
        plant_noise_scale: 0.0,
        ..Default::default()
    };
    let log = simulate(&noiseless).expect("noiseless run");
    let late = log.records.iter().filter(|r| r.t >= 1.0 - 1e-9);
    let worst = late
        .flat_map(|r| [r.innov_kine, r.innov_dyna])
        .map(|v| v.expect("innovation logged"))
        .fold(0.0, f64::max);

    let matched = ScenarioConfig {
        name: "matched".into(),
        duration: 50.1,
        seed: 8,
        ..Default::default()
    };
    let log = simulate(&matched).expect("matched-noise run");
    let mean_of = |f: fn(&mecanum_ftc::sim::TickRecord) -> Option<f64>| {
        let v: Vec<f64> = log.records.iter().filter_map(f).take(500).collect();
        (v.iter().sum::<f64>() / v.len() as f64, v.len())
    };
    let (nis_kine, n_kine) = mean_of(|r| r.nis_kine);
    let (nis_dyna, n_dyna) = mean_of(|r| r.nis_dyna);
    let in_band = |m: f64| (2.4..=3.6).contains(&m);
    Outcome {
        pass: worst < 1e-6 && in_band(nis_kine) && in_band(nis_dyna) && n_kine == 500 && n_dyna == 500,
        detail: format!(
            "max innovation after 1 s {worst:.3e}; mean NIS kinematic {nis_kine:.3}, dynamic {nis_dyna:.3} over {n_kine} steps"
        ),
    }
}

fn criterion_9() -> Outcome {
    let cfg = ScenarioConfig {
        name: "nominal".into(),
        plant_noise_scale: 0.0,
        ..Default::default()
    };
    let (_, m) = run(&cfg);
    Outcome {
        pass: m.position_rmse <= 0.02,
        detail: format!("position RMSE {:.5} m", m.position_rmse),
    }
}

fn criterion_10() -> Outcome {
    let cfg = scenario("one_fault");
    let bytes = || {
        let mut buf = Vec::new();
        write_timeseries(&simulate(&cfg).expect("run"), &mut buf).expect("csv");
        buf
    };
    let (a, b) = (bytes(), bytes());
    Outcome {
        pass: a == b && !a.is_empty(),
        detail: format!("{} bytes, identical: {}", a.len(), a == b),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 one-fault identification 6->7->5", criterion_1),
        ("2 two-fault identification 14->11->12", criterion_2),
        ("3 fixed-member posterior convergence", criterion_3),
        ("4 matrix divergence property", criterion_4),
        ("5 control-law optimality", criterion_5),
        ("6 QP solver correctness", criterion_6),
        ("7 comparative RMSE ordering", criterion_7),
        ("8 estimator sanity", criterion_8),
        ("9 nominal tracking", criterion_9),
        ("10 determinism", criterion_10),
    ];
    let mut failed = 0;
    for (label, check) in criteria {
        let out = check();
        if !out.pass {
            failed += 1;
        }
        println!(
            "{} criterion {label}: {}",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
