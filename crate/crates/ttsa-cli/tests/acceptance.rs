//! Acceptance suite: one test per shipping criterion, each printing a
//! PASS line with the measured values. Desk-scale ensembles (100
//! replicates, 1e6 iterations) replicate the convergence-rate figures.

use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ttsa_core::{
    analysis, harness, noise, planner, problems, solve_rate_state, solve_rate_time, DeltaMatrix,
    ExperimentConfig, GammaMatrix, Init, IterateState, NoiseSpec, ProblemId, StepSchedule,
};

/// Slope of the bilevel slow dynamics at its equilibrium, `2 - sin(y*)`.
const SBO_SLOW_SLOPE: f64 = 2.4351308590367095;

fn desk_state_config(problem: ProblemId, delta: f64, k0: f64, slow_scale: f64) -> ExperimentConfig {
    ExperimentConfig {
        problem,
        noise: NoiseSpec::State {
            gamma: GammaMatrix::uniform(0.02),
            delta: DeltaMatrix::uniform(delta),
        },
        schedule: StepSchedule::polynomial(slow_scale, slow_scale, 2.0 / 3.0, k0).unwrap(),
        iterations: 1_000_000,
        replicates: 100,
        master_seed: 20_260_811,
        checkpoints: None,
        init: Init::default(),
    }
}

fn fitted_exponent(config: &ExperimentConfig) -> f64 {
    let summary = harness::run_ensemble(config).unwrap();
    let fit = analysis::fit_loglog(&summary, 1e5, 1e6).unwrap();
    -fit.slope
}

/// Mean Lyapunov values shrink between consecutive checkpoints past the
/// transient.
fn assert_mean_decays_past(summary: &harness::EnsembleSummary, k_from: u64) {
    let late: Vec<_> = summary
        .checkpoints
        .iter()
        .filter(|c| c.k >= k_from)
        .collect();
    for w in late.windows(2) {
        assert!(
            w[1].mean_v < w[0].mean_v,
            "mean_V rose between k = {} and k = {}",
            w[0].k,
            w[1].k
        );
    }
}

/// Criterion 1: Exact envelope maximization agrees with the closed form on the
/// 100-point uniform-delta grid to 1e-9, including (2/3, 2/3) at zero.
#[test]
fn criterion_01_rate_planner_exactness() {
    let start = std::time::Instant::now();
    let mut worst = 0.0f64;
    for i in 0..10 {
        for j in 0..10 {
            let (d1, d2) = (0.1 * i as f64, 0.1 * j as f64);
            let cf = planner::rate_state_closed_form(d1, d2);
            let sv = solve_rate_state(&DeltaMatrix {
                d11: d1,
                d12: d1,
                d21: d2,
                d22: d2,
            })
            .unwrap();
            worst = worst.max((cf.a - sv.a).abs()).max((cf.t - sv.t).abs());
        }
    }
    assert!(worst <= 1e-9, "worst grid deviation {worst}");
    let zero = solve_rate_state(&DeltaMatrix::uniform(0.0)).unwrap();
    assert!((zero.a - 2.0 / 3.0).abs() <= 1e-9 && (zero.t - 2.0 / 3.0).abs() <= 1e-9);
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 1.0, "took {dt:?}");
    println!("acceptance 01 rate-planner exactness: PASS (worst deviation {worst:.2e}, {dt:?})");
}

/// Criterion 2: The time-rate balance identities hold to 1e-12 for 1e3 random
/// feasible exponent pairs.
#[test]
fn criterion_02_time_rate_identities() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < 1000 {
        let g1: f64 = rng.gen_range(0.0..4.0);
        let g2: f64 = g1 - rng.gen_range(-1.0..0.5);
        if g2 < 0.0 {
            continue;
        }
        let Ok(rate) = solve_rate_time(g1, g2) else {
            continue;
        };
        let lhs = -1.0 + 2.0 * rate.a;
        worst = worst
            .max((lhs - (-1.0 + rate.a + rate.t - g1)).abs())
            .max((lhs - (-3.0 + 4.0 * rate.a + rate.t - g2)).abs());
        checked += 1;
    }
    assert!(worst <= 1e-12, "worst identity residual {worst}");
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 1.0, "took {dt:?}");
    println!("acceptance 02 time-rate identities: PASS (worst residual {worst:.2e}, {dt:?})");
}

/// Criterion 3: Desk-scale replica of the state-noise slopes: fitted exponents within
/// 0.15 of the planned t for delta in {0, 0.4, 0.8}.
#[test]
fn criterion_03_state_slopes_averaging() {
    let start = std::time::Instant::now();
    let mut report = Vec::new();
    for delta in [0.0, 0.4, 0.8] {
        let rate = solve_rate_state(&DeltaMatrix::uniform(delta)).unwrap();
        let cfg = desk_state_config(ProblemId::SgdPr { dim: 5 }, delta, 8.0, rate.t / 2.0);
        let summary = harness::run_ensemble(&cfg).unwrap();
        if delta == 0.0 {
            assert_mean_decays_past(&summary, 1_000);
        }
        let fit = analysis::fit_loglog(&summary, 1e5, 1e6).unwrap();
        let t_hat = -fit.slope;
        assert!(
            (t_hat - rate.t).abs() <= 0.15,
            "delta = {delta}: fitted {t_hat} vs planned {}",
            rate.t
        );
        report.push(format!("delta={delta}: t={:.4} t_hat={t_hat:.4}", rate.t));
    }
    let dt = start.elapsed();
    assert!(dt.as_secs() < 900, "took {dt:?}");
    println!(
        "acceptance 03 state-noise slopes (averaging): PASS ({}; {dt:?})",
        report.join(", ")
    );
}

/// Criterion 4: Exponential regime at quadratic noise: the ensemble mean stays under
/// twice the planned envelope and the semilog fit finds a contraction.
#[test]
fn criterion_04_exponential_regime_averaging() {
    let start = std::time::Instant::now();
    let consts = ProblemId::SgdPr { dim: 5 }.build().unwrap().consts;
    let plan = planner::exponential_plan(&consts, &GammaMatrix::uniform(0.1), 64.0, 0.01).unwrap();
    assert!(plan.feasible, "{:?}", plan.violations);
    let eps = plan.epsilon.unwrap();
    let cfg = ExperimentConfig {
        problem: ProblemId::SgdPr { dim: 5 },
        noise: NoiseSpec::Quadratic {
            gamma: GammaMatrix::uniform(0.1),
        },
        schedule: plan.schedule,
        iterations: 10_000,
        replicates: 100,
        master_seed: 20_260_812,
        checkpoints: None,
        init: Init::default(),
    };
    let summary = harness::run_ensemble(&cfg).unwrap();
    let v0 = summary.checkpoints[0].mean_v;
    for c in &summary.checkpoints {
        let envelope = 2.0 * (-eps * c.k as f64).exp() * v0;
        assert!(
            c.mean_v <= envelope,
            "k = {}: mean {} above envelope {envelope}",
            c.k,
            c.mean_v
        );
    }
    let fit = analysis::fit_semilog(&summary, 0.0, 1e4).unwrap();
    let eps_hat = -fit.slope;
    assert!(
        eps_hat > 0.0,
        "semilog slope must indicate contraction, got {}",
        fit.slope
    );
    let dt = start.elapsed();
    assert!(dt.as_secs() < 120, "took {dt:?}");
    println!(
        "acceptance 04 exponential regime (averaging): PASS (eps={eps:.3e}, eps_hat={eps_hat:.3e}, {dt:?})"
    );
}

/// Criterion 5: Desk-scale replica of the time-noise slopes: fitted exponents within
/// 0.2 of 2/3 + gamma for gamma in {0, 1, 2}; gamma in {3, 4} gated at
/// t_hat >= 2.5 only.
#[test]
fn criterion_05_time_slopes_averaging() {
    let start = std::time::Instant::now();
    let mut report = Vec::new();
    for gamma in 0..=4u32 {
        let g = gamma as f64;
        let t = 2.0 / 3.0 + g;
        let beta = t / 2.0;
        let cfg = ExperimentConfig {
            problem: ProblemId::SgdPr { dim: 5 },
            noise: NoiseSpec::Time {
                gamma11: 0.02,
                gamma22: 0.02,
                gamma1: g,
                gamma2: g,
            },
            schedule: StepSchedule::polynomial(beta, beta, 2.0 / 3.0, 32.0).unwrap(),
            iterations: 1_000_000,
            replicates: 100,
            master_seed: 20_260_813 + gamma as u64,
            checkpoints: None,
            init: Init::default(),
        };
        let t_hat = fitted_exponent(&cfg);
        if gamma <= 2 {
            assert!(
                (t_hat - t).abs() <= 0.2,
                "gamma = {gamma}: fitted {t_hat} vs {t}"
            );
        } else {
            assert!(
                t_hat >= 2.5,
                "gamma = {gamma}: fitted {t_hat} below the 2.5 gate"
            );
        }
        report.push(format!("gamma={gamma}: t_hat={t_hat:.3}"));
    }
    let dt = start.elapsed();
    assert!(dt.as_secs() < 900, "took {dt:?}");
    println!(
        "acceptance 05 time-noise slopes (averaging): PASS ({}; {dt:?})",
        report.join(", ")
    );
}

/// Criterion 6: The bilevel instance replicates criteria 3 and 4 at tolerance 0.25.
#[test]
fn criterion_06_bilevel_replication() {
    let start = std::time::Instant::now();
    let mut report = Vec::new();
    for delta in [0.0, 0.4, 0.8] {
        let rate = solve_rate_state(&DeltaMatrix::uniform(delta)).unwrap();
        let beta = rate.t / (2.0 * SBO_SLOW_SLOPE);
        let cfg = desk_state_config(ProblemId::Sbo, delta, 128.0, beta);
        let t_hat = fitted_exponent(&cfg);
        assert!(
            (t_hat - rate.t).abs() <= 0.25,
            "delta = {delta}: fitted {t_hat} vs planned {}",
            rate.t
        );
        report.push(format!("delta={delta}: t_hat={t_hat:.4}"));
    }

    let consts = ProblemId::Sbo.build().unwrap().consts;
    let plan =
        planner::exponential_plan(&consts, &GammaMatrix::uniform(0.1), 2048.0, 0.01).unwrap();
    assert!(plan.feasible, "{:?}", plan.violations);
    let eps = plan.epsilon.unwrap();
    let cfg = ExperimentConfig {
        problem: ProblemId::Sbo,
        noise: NoiseSpec::Quadratic {
            gamma: GammaMatrix::uniform(0.1),
        },
        schedule: plan.schedule,
        iterations: 10_000,
        replicates: 100,
        master_seed: 20_260_814,
        checkpoints: None,
        init: Init::default(),
    };
    let summary = harness::run_ensemble(&cfg).unwrap();
    let v0 = summary.checkpoints[0].mean_v;
    for c in &summary.checkpoints {
        assert!(
            c.mean_v <= 2.0 * (-eps * c.k as f64).exp() * v0,
            "k = {}",
            c.k
        );
    }
    let fit = analysis::fit_semilog(&summary, 0.0, 1e4).unwrap();
    assert!(-fit.slope > 0.0, "bilevel semilog slope {}", fit.slope);
    report.push(format!("quadratic eps_hat={:.3e}", -fit.slope));

    let dt = start.elapsed();
    assert!(dt.as_secs() < 900, "took {dt:?}");
    println!(
        "acceptance 06 bilevel replication: PASS ({}; {dt:?})",
        report.join(", ")
    );
}

/// Criterion 7: The one-step drift bound holds empirically: 20 random states, 1e5
/// Monte-Carlo draws each, margins above -3 standard errors; the
/// noise-free margins are nonnegative to arithmetic precision.
#[test]
fn criterion_07_drift_bound_margins() {
    let start = std::time::Instant::now();
    let problem = problems::make_sgd_pr(5).unwrap();
    let sched = StepSchedule::polynomial(32.0, 1.0, 2.0 / 3.0, 0.0).unwrap();
    let k = 10u64;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let states: Vec<IterateState> = (0..20)
        .map(|_| {
            IterateState::new(
                k,
                (0..5).map(|_| rng.gen_range(-2.0..=2.0)).collect(),
                (0..5).map(|_| rng.gen_range(-2.0..=2.0)).collect(),
            )
        })
        .collect();

    let noisy = NoiseSpec::State {
        gamma: GammaMatrix::uniform(0.02),
        delta: DeltaMatrix::uniform(0.0),
    };
    let report =
        analysis::check_drift_bound(&problem, &noisy, &sched, k, &states, 100_000, 20_260_815)
            .unwrap();
    let worst_sigma = report.worst_sigma_margin();
    assert!(
        worst_sigma >= -3.0,
        "worst margin {worst_sigma} standard errors"
    );

    let exact =
        analysis::check_drift_bound(&problem, &NoiseSpec::None, &sched, k, &states, 1, 0).unwrap();
    for m in &exact.margins {
        assert!(m.margin >= -1e-12 * m.rhs.abs().max(1.0), "{m:?}");
    }
    let dt = start.elapsed();
    assert!(dt.as_secs() < 120, "took {dt:?}");
    println!(
        "acceptance 07 drift-bound margins: PASS (worst {worst_sigma:.2} se; noise-free worst {:.2e}; {dt:?})",
        exact.worst_margin()
    );
}

/// Criterion 8: Operator correctness: derivative checks at 1e3 random points below
/// 1e-5 relative error and all four assumption inequalities pass.
#[test]
fn criterion_08_operator_correctness() {
    let start = std::time::Instant::now();
    let cases = [
        (problems::make_sgd_pr(5).unwrap(), 5.0),
        (problems::make_sbo(), 3.0),
    ];
    let mut report = Vec::new();
    for (problem, halfwidth) in cases {
        let mut rng = ChaCha8Rng::seed_from_u64(20_260_816);
        let points: Vec<(Vec<f64>, Vec<f64>)> = (0..1000)
            .map(|_| {
                (
                    (0..problem.d1)
                        .map(|_| rng.gen_range(-halfwidth..=halfwidth))
                        .collect(),
                    (0..problem.d2)
                        .map(|_| rng.gen_range(-halfwidth..=halfwidth))
                        .collect(),
                )
            })
            .collect();
        let grad = analysis::grad_check(&problem, &points, 1e-5).unwrap();
        assert!(
            grad.max_rel_error <= 1e-5,
            "{}: derivative error {:.3e}",
            problem.name,
            grad.max_rel_error
        );
        let verify = problems::verify_constants(&problem, halfwidth, 10_000, 20_260_817).unwrap();
        assert!(verify.pass(), "{}: {verify:?}", problem.name);
        report.push(format!("{}: grad {:.1e}", problem.name, grad.max_rel_error));
    }
    let dt = start.elapsed();
    assert!(dt.as_secs() < 30, "took {dt:?}");
    println!(
        "acceptance 08 operator correctness: PASS ({}; {dt:?})",
        report.join(", ")
    );
}

/// Criterion 9: Thread-count independence: the CLI produces byte-identical CSV
/// output at --threads 1 and --threads 8.
#[test]
fn criterion_09_thread_determinism() {
    let start = std::time::Instant::now();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/ci/sgd_pr_smoke.json");
    let run = |threads: &str, dir: &Path| {
        let out = Command::new(env!("CARGO_BIN_EXE_ttsa"))
            .args([
                "run",
                "--config",
                config.to_str().unwrap(),
                "--threads",
                threads,
                "--out",
                dir.to_str().unwrap(),
            ])
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let d1 = tempfile::tempdir().unwrap();
    let d8 = tempfile::tempdir().unwrap();
    run("1", d1.path());
    run("8", d8.path());
    let csv = |d: &tempfile::TempDir| -> Vec<u8> {
        std::fs::read(d.path().join("sgd_pr_smoke.summary.csv")).unwrap()
    };
    assert_eq!(
        csv(&d1),
        csv(&d8),
        "CSV must not depend on the thread count"
    );
    let dt = start.elapsed();
    assert!(dt.as_secs() < 60, "took {dt:?}");
    println!("acceptance 09 thread determinism: PASS ({dt:?})");
}

/// Criterion 10: Noise calibration: the empirical second moment sits within 2% of
/// the target at 1e6 draws for every noise kind.
#[test]
fn criterion_10_noise_calibration() {
    let start = std::time::Instant::now();
    let kinds: Vec<(&str, NoiseSpec)> = vec![
        (
            "state",
            NoiseSpec::State {
                gamma: GammaMatrix::uniform(0.02),
                delta: DeltaMatrix::uniform(0.4),
            },
        ),
        (
            "quadratic",
            NoiseSpec::Quadratic {
                gamma: GammaMatrix::uniform(0.1),
            },
        ),
        (
            "time",
            NoiseSpec::Time {
                gamma11: 0.7,
                gamma22: 0.5,
                gamma1: 0.2,
                gamma2: 0.1,
            },
        ),
    ];
    let (d, nx, ny, k, k0) = (5usize, 1.3, 0.8, 17u64, 4.0);
    let mut report = Vec::new();
    for (name, spec) in kinds {
        let (s_xi, s_psi) = noise::target_variances(&spec, nx, ny, k, k0);
        let mut rng = noise::RngStream::new(20_260_818, 0);
        let mut xi = vec![0.0; d];
        let mut psi = vec![0.0; d];
        let n = 1_000_000u32;
        let (mut sq_xi, mut sq_psi) = (0.0, 0.0);
        for _ in 0..n {
            noise::sample(&spec, nx, ny, k, k0, &mut rng, &mut xi, &mut psi);
            sq_xi += xi.iter().map(|v| v * v).sum::<f64>();
            sq_psi += psi.iter().map(|v| v * v).sum::<f64>();
        }
        let (e_xi, e_psi) = (sq_xi / n as f64, sq_psi / n as f64);
        assert!(
            (e_xi / s_xi - 1.0).abs() <= 0.02,
            "{name}: xi moment {e_xi} vs {s_xi}"
        );
        assert!(
            (e_psi / s_psi - 1.0).abs() <= 0.02,
            "{name}: psi moment {e_psi} vs {s_psi}"
        );
        report.push(format!("{name}: {:+.3}%", 100.0 * (e_xi / s_xi - 1.0)));
    }
    // the trivial kind yields exact zeros
    let mut rng = noise::RngStream::new(1, 0);
    let mut xi = vec![1.0; d];
    let mut psi = vec![1.0; d];
    noise::sample(&NoiseSpec::None, nx, ny, k, k0, &mut rng, &mut xi, &mut psi);
    assert!(xi.iter().chain(&psi).all(|&v| v == 0.0));
    let dt = start.elapsed();
    assert!(dt.as_secs() < 30, "took {dt:?}");
    println!(
        "acceptance 10 noise calibration: PASS ({}; {dt:?})",
        report.join(", ")
    );
}

/// Bundled desk configs parse, validate, and name the same protocol the
/// suite exercises.
#[test]
fn bundled_configs_are_valid() {
    let dir: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for scale in ["desk", "paper", "ci"] {
        for entry in std::fs::read_dir(dir.join(scale)).unwrap() {
            let path = entry.unwrap().path();
            let text = std::fs::read_to_string(&path).unwrap();
            let cfg: ExperimentConfig =
                serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate()
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 45, "expected the full bundled set, found {n}");
    println!("bundled configs: {n} valid");
}
