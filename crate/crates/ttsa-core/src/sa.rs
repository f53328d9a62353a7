//! The coupled fast/slow iteration, its residual variables, and the
//! Lyapunov functional `V_k = c (beta_k/alpha_k) |x̂|^2 + |ŷ|^2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::AssumptionConstants;
use crate::problems::ProblemSpec;
use crate::schedule::StepSchedule;

/// Norm threshold beyond which a trajectory counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Iterate pair at iteration `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateState {
    pub k: u64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl IterateState {
    pub fn new(k: u64, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { k, x, y }
    }

    /// Both iterates finite and inside the divergence guard.
    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }
}

/// Residuals `x̂ = x - lambda(y)`, `ŷ = y - y*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub x_hat: Vec<f64>,
    pub y_hat: Vec<f64>,
}

impl Residuals {
    pub fn x_norm(&self) -> f64 {
        norm(&self.x_hat)
    }

    pub fn y_norm(&self) -> f64 {
        norm(&self.y_hat)
    }
}

/// Lyapunov value with the coupling constant it was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovValue {
    pub v: f64,
    pub c: f64,
}

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|w| w * w).sum::<f64>().sqrt()
}

/// One update of the coupled recursion:
/// `x' = x - alpha_k (f(x,y) + xi)`, `y' = y - beta_k (g(x,y) + psi)`.
pub fn step(
    state: &IterateState,
    problem: &ProblemSpec,
    xi: &[f64],
    psi: &[f64],
    sched: &StepSchedule,
) -> Result<IterateState> {
    debug_assert_eq!(state.x.len(), problem.d1);
    debug_assert_eq!(state.y.len(), problem.d2);
    debug_assert_eq!(xi.len(), problem.d1);
    debug_assert_eq!(psi.len(), problem.d2);
    let (alpha_k, beta_k) = sched.step_sizes(state.k);
    let mut drift_x = vec![0.0; problem.d1];
    let mut drift_y = vec![0.0; problem.d2];
    problem.f(&state.x, &state.y, &mut drift_x);
    problem.g(&state.x, &state.y, &mut drift_y);
    let mut next = IterateState {
        k: state.k + 1,
        x: state.x.clone(),
        y: state.y.clone(),
    };
    for i in 0..problem.d1 {
        next.x[i] -= alpha_k * (drift_x[i] + xi[i]);
    }
    for i in 0..problem.d2 {
        next.y[i] -= beta_k * (drift_y[i] + psi[i]);
    }
    if !next.is_finite() {
        return Err(Error::Diverged { iteration: next.k });
    }
    Ok(next)
}

/// Residual variables of a state under a problem's equilibrium data.
pub fn residuals(state: &IterateState, problem: &ProblemSpec) -> Result<Residuals> {
    let mut x_hat = vec![0.0; problem.d1];
    problem.lambda(&state.y, &mut x_hat)?;
    for (h, x) in x_hat.iter_mut().zip(&state.x) {
        *h = x - *h;
    }
    let y_star = problem.y_star()?;
    let y_hat = state.y.iter().zip(y_star).map(|(y, s)| y - s).collect();
    Ok(Residuals { x_hat, y_hat })
}

/// `V = c (beta_k/alpha_k) |x̂|^2 + |ŷ|^2` with `c = 4 L_g^2 / (mu_f mu_g)`.
/// Constant-step schedules use the fixed ratio `beta/alpha`.
pub fn lyapunov(
    res: &Residuals,
    sched: &StepSchedule,
    k: u64,
    consts: &AssumptionConstants,
) -> LyapunovValue {
    let nx = res.x_norm();
    let ny = res.y_norm();
    lyapunov_from_norms(nx * nx, ny * ny, sched, k, consts)
}

/// Same as [`lyapunov`] from precomputed squared residual norms.
#[inline]
pub fn lyapunov_from_norms(
    xhat_sq: f64,
    yhat_sq: f64,
    sched: &StepSchedule,
    k: u64,
    consts: &AssumptionConstants,
) -> LyapunovValue {
    let c = consts.c_coupling();
    LyapunovValue {
        v: c * sched.ratio_beta_alpha(k) * xhat_sq + yhat_sq,
        c,
    }
}
