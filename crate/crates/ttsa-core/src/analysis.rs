//! Rate estimation from ensemble summaries and empirical verification of
//! the per-iteration drift bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::EnsembleSummary;
use crate::noise::{self, NoiseSpec, RngStream};
use crate::planner::drift_constant;
use crate::problems::{ProblemSpec, Var};
use crate::sa::{lyapunov, residuals, step, IterateState};
use crate::schedule::StepSchedule;

/// Least-squares fit of a decay law over a checkpoint window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub residual_mse: f64,
    pub window: [f64; 2],
    pub n_points: usize,
}

fn ols(xs: &[f64], ys: &[f64], window: [f64; 2]) -> Result<FitResult> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "{n} usable checkpoint(s) in window [{}, {}]; need at least 2",
            window[0], window[1]
        )));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "all abscissae in the window coincide".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let e = y - (intercept + slope * x);
        ss_res += e * e;
        ss_tot += (y - my) * (y - my);
    }
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        log::warn!("degenerate fit: responses are constant over the window; R^2 reported as 0");
        0.0
    };
    Ok(FitResult {
        slope,
        intercept,
        r_squared,
        residual_mse: ss_res / nf,
        window,
        n_points: n,
    })
}

fn window_points<F: Fn(u64) -> Option<f64>>(
    summary: &EnsembleSummary,
    k_min: f64,
    k_max: f64,
    abscissa: F,
) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut skipped = 0usize;
    for c in &summary.checkpoints {
        let kf = c.k as f64;
        if kf < k_min || kf > k_max {
            continue;
        }
        let Some(x) = abscissa(c.k) else {
            skipped += 1;
            continue;
        };
        if c.mean_v.is_nan() || c.mean_v <= 0.0 {
            skipped += 1;
            continue;
        }
        xs.push(x);
        ys.push(c.mean_v.ln());
    }
    if skipped > 0 {
        log::warn!("{skipped} checkpoint(s) excluded from the fit (nonpositive mean or k = 0)");
    }
    (xs, ys)
}

/// OLS of `log mean_V` on `log k`; the decay exponent estimate is
/// `-slope`.
pub fn fit_loglog(summary: &EnsembleSummary, k_min: f64, k_max: f64) -> Result<FitResult> {
    let (xs, ys) = window_points(summary, k_min, k_max, |k| {
        if k == 0 {
            None
        } else {
            Some((k as f64).ln())
        }
    });
    ols(&xs, &ys, [k_min, k_max])
}

/// OLS of `log mean_V` on `k`; the per-iteration contraction estimate is
/// `-slope`.
pub fn fit_semilog(summary: &EnsembleSummary, k_min: f64, k_max: f64) -> Result<FitResult> {
    let (xs, ys) = window_points(summary, k_min, k_max, |k| Some(k as f64));
    ols(&xs, &ys, [k_min, k_max])
}

/// Margin of the drift bound at one probed state.
#[derive(Debug, Clone, Serialize)]
pub struct BoundMargin {
    pub v_k: f64,
    pub rhs: f64,
    pub lhs_mean: f64,
    pub lhs_stderr: f64,
    /// `rhs - lhs_mean`.
    pub margin: f64,
    /// Margin in Monte-Carlo standard errors (infinite when exact).
    pub margin_sigmas: f64,
}

/// Report of [`check_drift_bound`].
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub k: u64,
    pub mc_samples: u64,
    pub margins: Vec<BoundMargin>,
}

impl BoundReport {
    pub fn worst_sigma_margin(&self) -> f64 {
        self.margins
            .iter()
            .map(|m| m.margin_sigmas)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn worst_margin(&self) -> f64 {
        self.margins
            .iter()
            .map(|m| m.margin)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Monte-Carlo check of the one-step drift bound at the given states,
/// using the exact target variances:
///
/// ```text
/// E[V_{k+1}] <= (1 - mu_g beta_k/2) V_k + C(alpha_0, beta_0) alpha_k^2 V_k
///               + c 2 alpha_k beta_k E|xi|^2
///               + (c (2/mu_f L_f^2 beta_k^3/alpha_k^2
///                     + 2/mu_f L_f^2 L_lambda^2 beta_k^3
///                     + 2 L_lambda^2 beta_k^3/alpha_k) + beta_k^2) E|psi|^2
/// ```
pub fn check_drift_bound(
    problem: &ProblemSpec,
    noise_spec: &NoiseSpec,
    sched: &StepSchedule,
    k: u64,
    states: &[IterateState],
    mc_samples: u64,
    seed: u64,
) -> Result<BoundReport> {
    noise_spec.validate()?;
    let consts = &problem.consts;
    let c = consts.c_coupling();

    // Ratio precondition at this iteration.
    let (alpha_k, beta_k) = sched.step_sizes(k);
    let (alpha_0, beta_0) = sched.step_sizes(0);
    let (ll, lg) = (consts.l_lambda, consts.l_g);
    let head = (4.0 / consts.mu_f)
        * (2.0 * ll * lg + (2.0 / consts.mu_g) * ll * ll * lg * lg * (ll + 1.0) * (ll + 1.0));
    let ratio_min = head
        .max(2.0 * c)
        .max(consts.mu_g / consts.mu_f)
        .max(alpha_0 / beta_0);
    if alpha_k / beta_k < ratio_min - 1e-12 {
        return Err(Error::Precondition(format!(
            "alpha_k/beta_k = {} below the drift-bound ratio requirement {ratio_min}",
            alpha_k / beta_k
        )));
    }

    let c_init = drift_constant(consts, alpha_0, beta_0);
    let effective = if problem.slow_noise {
        *noise_spec
    } else {
        noise_spec.without_psi()
    };
    let lf = consts.l_f;
    let psi_coeff = c
        * ((2.0 / consts.mu_f) * lf * lf * beta_k.powi(3) / (alpha_k * alpha_k)
            + (2.0 / consts.mu_f) * lf * lf * ll * ll * beta_k.powi(3)
            + 2.0 * ll * ll * beta_k.powi(3) / alpha_k)
        + beta_k * beta_k;

    // States are independent units with their own substreams (keyed by
    // index), so the parallel map is deterministic and order-preserving.
    let margins: Vec<BoundMargin> = states
        .par_iter()
        .enumerate()
        .map(|(idx, state)| -> Result<BoundMargin> {
            if state.k != k {
                return Err(Error::Precondition(format!(
                    "state {idx} is at iteration {}, expected {k}",
                    state.k
                )));
            }
            let res = residuals(state, problem)?;
            let v_k = lyapunov(&res, sched, k, consts).v;
            let (s_xi, s_psi) =
                noise::target_variances(&effective, res.x_norm(), res.y_norm(), k, sched.k0);
            let rhs = (1.0 - 0.5 * consts.mu_g * beta_k) * v_k
                + c_init * alpha_k * alpha_k * v_k
                + c * 2.0 * alpha_k * beta_k * s_xi
                + psi_coeff * s_psi;

            let deterministic = s_xi == 0.0 && s_psi == 0.0;
            let draws = if deterministic { 1 } else { mc_samples.max(1) };
            let mut rng = RngStream::new(seed, idx as u64);
            let mut xi = vec![0.0; problem.d1];
            let mut psi = vec![0.0; problem.d2];
            // Welford accumulation in a fixed draw order.
            let mut mean = 0.0;
            let mut m2 = 0.0;
            for i in 0..draws {
                noise::sample(
                    &effective,
                    res.x_norm(),
                    res.y_norm(),
                    k,
                    sched.k0,
                    &mut rng,
                    &mut xi,
                    &mut psi,
                );
                let next = step(state, problem, &xi, &psi, sched)?;
                let v_next = lyapunov(&residuals(&next, problem)?, sched, k + 1, consts).v;
                let delta = v_next - mean;
                mean += delta / (i + 1) as f64;
                m2 += delta * (v_next - mean);
            }
            let stderr = if draws >= 2 {
                (m2 / (draws as f64 - 1.0) / draws as f64).sqrt()
            } else {
                0.0
            };
            let margin = rhs - mean;
            let margin_sigmas = if stderr > 0.0 {
                margin / stderr
            } else if margin == 0.0 {
                0.0
            } else {
                margin.signum() * f64::INFINITY
            };
            Ok(BoundMargin {
                v_k,
                rhs,
                lhs_mean: mean,
                lhs_stderr: stderr,
                margin,
                margin_sigmas,
            })
        })
        .collect::<Result<_>>()?;

    Ok(BoundReport {
        k,
        mc_samples,
        margins,
    })
}

/// Per-check worst relative error of the analytic derivatives.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub per_check: Vec<(String, f64)>,
}

/// Central-difference comparison of every analytic derivative the problem
/// declares against its defining scalar, at the given points. Relative
/// error is `|analytic - fd| / max(1, |analytic|)`.
pub fn grad_check(
    problem: &ProblemSpec,
    points: &[(Vec<f64>, Vec<f64>)],
    h: f64,
) -> Result<GradCheckReport> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Domain(
            "finite-difference step must be positive".into(),
        ));
    }
    if problem.checks.is_empty() {
        return Err(Error::Config(format!(
            "problem {} declares no derivative checks",
            problem.name
        )));
    }
    let mut per_check = Vec::with_capacity(problem.checks.len());
    let mut overall = 0.0f64;
    for check in problem.checks.iter() {
        let dim = match check.wrt {
            Var::X => problem.d1,
            Var::Y => problem.d2,
        };
        let mut analytic = vec![0.0; dim];
        let mut worst = 0.0f64;
        for (x, y) in points {
            (check.gradient)(x, y, &mut analytic);
            let mut xp = x.clone();
            let mut yp = y.clone();
            for j in 0..dim {
                let (fp, fm) = match check.wrt {
                    Var::X => {
                        let orig = xp[j];
                        xp[j] = orig + h;
                        let fp = (check.scalar)(&xp, y);
                        xp[j] = orig - h;
                        let fm = (check.scalar)(&xp, y);
                        xp[j] = orig;
                        (fp, fm)
                    }
                    Var::Y => {
                        let orig = yp[j];
                        yp[j] = orig + h;
                        let fp = (check.scalar)(x, &yp);
                        yp[j] = orig - h;
                        let fm = (check.scalar)(x, &yp);
                        yp[j] = orig;
                        (fp, fm)
                    }
                };
                let fd = (fp - fm) / (2.0 * h);
                let rel = (analytic[j] - fd).abs() / analytic[j].abs().max(1.0);
                worst = worst.max(rel);
            }
        }
        overall = overall.max(worst);
        per_check.push((check.name.to_string(), worst));
    }
    Ok(GradCheckReport {
        max_rel_error: overall,
        per_check,
    })
}
