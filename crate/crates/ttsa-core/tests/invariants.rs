//! Cross-module invariants: noise-free convergence of both benchmark
//! problems and property tests over randomized planner inputs.

use proptest::prelude::*;
use ttsa_core::{
    fit_loglog, grad_check, m_envelope, make_sbo, make_sgd_pr, run_ensemble, solve_rate_state,
    solve_rate_time, DeltaMatrix, ExperimentConfig, GammaMatrix, Init, NoiseSpec, ProblemId,
    ProblemSpec, StepSchedule,
};

/// Smallest shift keeping the fast step monotone-stable from the start:
/// `alpha_0 * L <= 1/2`.
fn stability_k0(alpha: f64, fast_lipschitz: f64, a: f64) -> f64 {
    (2.0 * alpha * fast_lipschitz).powf(1.0 / a).ceil().max(1.0)
}

fn noise_free_config(problem: ProblemId, sched: StepSchedule, iterations: u64) -> ExperimentConfig {
    ExperimentConfig {
        problem,
        noise: NoiseSpec::None,
        schedule: sched,
        iterations,
        replicates: 1,
        master_seed: 0,
        checkpoints: Some(vec![0, iterations]),
        init: Init::default(),
    }
}

/// Feasible-exponent schedules with the slow scale at the guarantee's
/// minimal value contract the Lyapunov value by 1e4 within 1e5 iterations.
#[test]
fn noise_free_runs_contract_both_problems() {
    let cases: [(ProblemId, f64, f64); 2] = [
        // (problem, fast Lipschitz bound, slow scale (2/mu_g)(2a + t))
        (ProblemId::SgdPr { dim: 5 }, 3.0, 4.0),
        (ProblemId::Sbo, 30.0, 4.0),
    ];
    for (id, l_fast, beta) in cases {
        let problem = id.build().unwrap();
        let delta = DeltaMatrix::uniform(0.0);
        let rate = solve_rate_state(&delta).unwrap();
        for scale in [1.0, 2.0] {
            let b = beta * scale;
            let k0 = stability_k0(b, l_fast, rate.a);
            let sched = StepSchedule::polynomial(b, b, rate.a, k0).unwrap();
            let cfg = noise_free_config(id, sched, 100_000);
            let summary = run_ensemble(&cfg).unwrap();
            let v0 = summary.checkpoints[0].mean_v;
            let v_end = summary.checkpoints.last().unwrap().mean_v;
            assert!(
                v_end < 1e-4 * v0,
                "{}: V(1e5) = {v_end} not below 1e-4 V0 = {}",
                problem.name,
                1e-4 * v0
            );
        }
    }
}

/// Desk-scale slope sanity at reduced size: the bundled protocol (slow
/// scale `t / (2 g'(y*))`) recovers the planned exponent well inside the
/// acceptance tolerance even at 2e4 iterations.
#[test]
fn desk_protocol_recovers_planned_exponent_small_scale() {
    let delta = DeltaMatrix::uniform(0.4);
    let rate = solve_rate_state(&delta).unwrap();
    let beta = rate.t / 2.0;
    let cfg = ExperimentConfig {
        problem: ProblemId::SgdPr { dim: 5 },
        noise: NoiseSpec::State {
            gamma: GammaMatrix::uniform(0.02),
            delta,
        },
        schedule: StepSchedule::polynomial(beta, beta, rate.a, 8.0).unwrap(),
        iterations: 20_000,
        replicates: 16,
        master_seed: 99,
        checkpoints: None,
        init: Init::default(),
    };
    let summary = run_ensemble(&cfg).unwrap();
    let fit = fit_loglog(&summary, 2_000.0, 20_000.0).unwrap();
    let t_hat = -fit.slope;
    assert!(
        (t_hat - rate.t).abs() <= 0.1,
        "t_hat = {t_hat} vs planned t = {}",
        rate.t
    );
}

/// Halving the step roughly quarters the centered-difference error on
/// smooth points.
#[test]
fn gradcheck_error_quadratic_in_step() {
    fn worst(p: &ProblemSpec, pts: &[(Vec<f64>, Vec<f64>)], h: f64) -> f64 {
        grad_check(p, pts, h).unwrap().max_rel_error
    }
    let p = make_sgd_pr(3).unwrap();
    let pts = vec![
        (vec![0.9, -0.4, 0.2], vec![0.0; 3]),
        (vec![2.0, 1.0, -1.5], vec![0.0; 3]),
    ];
    let (c, f) = (worst(&p, &pts, 4e-4), worst(&p, &pts, 2e-4));
    let ratio = c / f;
    assert!((2.5..6.0).contains(&ratio), "expected ~4, got {ratio}");

    let p = make_sbo();
    let pts = vec![(vec![0.4], vec![0.3]), (vec![-0.8], vec![0.6])];
    let (c, f) = (worst(&p, &pts, 4e-4), worst(&p, &pts, 2e-4));
    let ratio = c / f;
    assert!((2.5..6.0).contains(&ratio), "expected ~4, got {ratio}");
}

#[test]
fn sbo_verifies_constants_and_derivatives_off_kinks() {
    // the three corner lines of the coupling map are y in {-1, 0, 1}
    let p = make_sbo();
    let pts: Vec<(Vec<f64>, Vec<f64>)> = (0..200)
        .map(|i| {
            let x = -3.0 + 6.0 * (i as f64 / 199.0);
            let y = -2.9 + 5.8 * (((i * 7) % 200) as f64 / 199.0);
            let y = if (y.abs() - 1.0).abs() < 1e-3 || y.abs() < 1e-3 {
                y + 0.01
            } else {
                y
            };
            (vec![x], vec![y])
        })
        .collect();
    let r = grad_check(&p, &pts, 1e-5).unwrap();
    assert!(r.max_rel_error <= 1e-5, "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1024))]

    /// The exact maximizer dominates a dense grid and sits strictly inside
    /// (1/2, 1).
    #[test]
    fn envelope_maximizer_dominates_grid(
        d11 in 0.0..0.999f64,
        d12 in 0.0..0.999f64,
        d21 in 0.0..0.999f64,
        d22 in 0.0..0.999f64,
    ) {
        let delta = DeltaMatrix { d11, d12, d21, d22 };
        let exact = solve_rate_state(&delta).unwrap();
        prop_assert!(exact.a > 0.5 && exact.a < 1.0);
        prop_assert!((m_envelope(exact.a, &delta).unwrap() - exact.t).abs() < 1e-12);
        for i in 1..=10_000u32 {
            let x = 0.5 + 0.5 * i as f64 / 10_000.0;
            prop_assert!(m_envelope(x, &delta).unwrap() <= exact.t + 1e-9);
        }
    }

    /// Rate identities under time-decaying noise hold for every feasible
    /// exponent pair.
    #[test]
    fn time_rate_identities(g1 in 0.0..4.0f64, gap in -1.0..0.4999f64) {
        let g2 = g1 - gap;
        prop_assume!(g2 >= 0.0);
        let rate = solve_rate_time(g1, g2).unwrap();
        let lhs = -1.0 + 2.0 * rate.a;
        prop_assert!((lhs - (-1.0 + rate.a + rate.t - g1)).abs() <= 1e-12);
        prop_assert!((lhs - (-3.0 + 4.0 * rate.a + rate.t - g2)).abs() <= 1e-12);
        prop_assert!(rate.a > 0.5 && rate.a <= 1.0);
    }

    /// Fast/slow step ratio never shrinks when the fast exponent is the
    /// smaller one.
    #[test]
    fn step_ratio_monotone(
        alpha in 0.01..50.0f64,
        beta in 0.01..50.0f64,
        a in 0.501..0.999f64,
        k0 in 0.0..1000.0f64,
    ) {
        let s = StepSchedule::polynomial(alpha, beta, a, k0).unwrap();
        let mut prev = 0.0f64;
        let mut k = 0u64;
        while k < 1_000_000 {
            let (ak, bk) = s.step_sizes(k);
            let r = ak / bk;
            prop_assert!(r >= prev - 1e-12 * prev.abs());
            prev = r;
            k = (k + 1) * 7 / 2;
        }
    }

    /// Noise second moments match their law under psi masking too.
    #[test]
    fn masked_noise_never_exceeds_raw(
        g in 0.0..1.0f64,
        d in 0.0..0.99f64,
        nx in 0.0..10.0f64,
        ny in 0.0..10.0f64,
    ) {
        let spec = NoiseSpec::State {
            gamma: GammaMatrix::uniform(g),
            delta: DeltaMatrix::uniform(d),
        };
        let raw = ttsa_core::target_variances(&spec, nx, ny, 3, 1.0);
        let masked = ttsa_core::target_variances(&spec.without_psi(), nx, ny, 3, 1.0);
        prop_assert_eq!(masked.0, raw.0);
        prop_assert_eq!(masked.1, 0.0);
        prop_assert!(raw.1 >= 0.0);
    }
}

/// Reproducibility: the ensemble summary is a pure function of the config,
/// independent of executor shape.
#[test]
fn ensemble_pure_function_of_config() {
    let cfg = ExperimentConfig {
        problem: ProblemId::Sbo,
        noise: NoiseSpec::Quadratic {
            gamma: GammaMatrix::uniform(0.1),
        },
        schedule: StepSchedule::constant(0.02, 0.005).unwrap(),
        iterations: 5_000,
        replicates: 24,
        master_seed: 31415,
        checkpoints: None,
        init: Init::default(),
    };
    let runs: Vec<_> = [1usize, 2, 8]
        .iter()
        .map(|&threads| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_ensemble(&cfg).unwrap())
        })
        .collect();
    assert_eq!(runs[0].checkpoints, runs[1].checkpoints);
    assert_eq!(runs[0].checkpoints, runs[2].checkpoints);
    assert_eq!(runs[0].config, runs[1].config);
}
