//! Rate planning: the piecewise-linear envelope `m(x)`, its exact maximizer,
//! and the full constant sets behind the polynomial and exponential
//! convergence-rate guarantees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{DeltaMatrix, GammaMatrix};
use crate::schedule::StepSchedule;

/// Lipschitz / monotonicity constants of a problem instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub l_lambda: f64,
    pub l_f: f64,
    pub mu_f: f64,
    pub l_g: f64,
    pub mu_g: f64,
}

impl AssumptionConstants {
    pub fn new(l_lambda: f64, l_f: f64, mu_f: f64, l_g: f64, mu_g: f64) -> Result<Self> {
        let c = Self {
            l_lambda,
            l_f,
            mu_f,
            l_g,
            mu_g,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.l_f) && positive(self.mu_f) && positive(self.l_g) && positive(self.mu_g))
        {
            return Err(Error::Domain(
                "L_f, mu_f, L_g, mu_g must be positive".into(),
            ));
        }
        if self.l_lambda < 0.0 {
            return Err(Error::Domain("L_lambda must be nonnegative".into()));
        }
        if self.mu_f > self.l_f || self.mu_g > self.l_g {
            return Err(Error::Domain(
                "monotonicity constants cannot exceed Lipschitz constants".into(),
            ));
        }
        Ok(())
    }

    /// Coupling constant `c = 4 L_g^2 / (mu_f mu_g)` of the Lyapunov function.
    #[inline]
    pub fn c_coupling(&self) -> f64 {
        4.0 * self.l_g * self.l_g / (self.mu_f * self.mu_g)
    }
}

/// Optimal fast exponent `a` and predicted decay exponent `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePair {
    pub a: f64,
    pub t: f64,
}

/// Which guarantee a [`RatePlan`] was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    State,
    Exponential,
    Time,
}

/// Every explicit constant a plan evaluates. Fields not used by the chosen
/// mode stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanConstants {
    pub c: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_alpha_beta: Option<f64>,
    /// `C(alpha_0, beta_0)` at the schedule's initial step sizes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_initial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c2_prime: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k0_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
}

/// Executable experiment plan: predicted rate, schedule, constants, and a
/// feasibility verdict listing every violated guarantee precondition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePlan {
    pub mode: PlanMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<RatePair>,
    /// Per-iteration contraction exponent (exponential mode only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub schedule: StepSchedule,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_bound: Option<f64>,
    pub constants: PlanConstants,
    pub feasible: bool,
    pub violations: Vec<String>,
}

const ENVELOPE_TIE_EPS: f64 = 1e-15;
const M_FIXED_POINT_TOL: f64 = 1e-12;
const M_FIXED_POINT_CAP: usize = 200;
const Q_FLOOR: f64 = 1e-30;

/// The lower envelope of the four rate lines at exponent `x`:
/// `((1+d11)x - d11)/Δ11 ∧ x/Δ12 ∧ (2-d21)(1-x)/Δ21 ∧ 2(1-x)/Δ22`.
pub fn m_envelope(x: f64, delta: &DeltaMatrix) -> Result<f64> {
    delta.validate_strict()?;
    Ok(envelope_lines(delta)
        .iter()
        .map(|&(s, b)| s * x + b)
        .fold(f64::INFINITY, f64::min))
}

/// The four envelope lines as (slope, intercept) pairs. First two increase
/// in `x`, last two decrease.
fn envelope_lines(delta: &DeltaMatrix) -> [(f64, f64); 4] {
    let (w11, w12, w21, w22) = (
        1.0 - delta.d11,
        1.0 - delta.d12,
        1.0 - delta.d21,
        1.0 - delta.d22,
    );
    [
        ((1.0 + delta.d11) / w11, -delta.d11 / w11),
        (1.0 / w12, 0.0),
        (-(2.0 - delta.d21) / w21, (2.0 - delta.d21) / w21),
        (-2.0 / w22, 2.0 / w22),
    ]
}

/// Maximizes `m(x)` over `(1/2, 1]` exactly.
///
/// The envelope is the minimum of two increasing and two decreasing lines,
/// so its maximum sits where the binding increasing line crosses the binding
/// decreasing line. All four increasing/decreasing intersections are
/// examined; ties within 1e-15 resolve to the smallest `a`.
pub fn solve_rate_state(delta: &DeltaMatrix) -> Result<RatePair> {
    delta.validate_strict()?;
    let lines = envelope_lines(delta);
    let mut candidates: Vec<f64> = Vec::with_capacity(4);
    for inc in &lines[..2] {
        for dec in &lines[2..] {
            let x = (inc.1 - dec.1) / (dec.0 - inc.0);
            if x > 0.5 && x <= 1.0 + ENVELOPE_TIE_EPS {
                candidates.push(x.min(1.0));
            }
        }
    }
    candidates.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let mut best: Option<RatePair> = None;
    for x in candidates {
        let v = m_envelope(x, delta)?;
        match best {
            Some(ref b) if v <= b.t + ENVELOPE_TIE_EPS => {}
            _ => best = Some(RatePair { a: x, t: v }),
        }
    }
    best.ok_or_else(|| Error::Domain("envelope has no interior maximizer".into()))
}

/// Closed-form optimum for `d11 = d12`, `d21 = d22`:
/// `a = (Δ11+Δ22)/(Δ11+2Δ22)`, `t = (1+Δ22)/(Δ11+2Δ22)`.
pub fn rate_state_closed_form(delta11: f64, delta22: f64) -> RatePair {
    let w11 = 1.0 - delta11;
    let w22 = 1.0 - delta22;
    RatePair {
        a: (w11 + w22) / (w11 + 2.0 * w22),
        t: (1.0 + w22) / (w11 + 2.0 * w22),
    }
}

/// Rate pair under time-decaying noise: `a = (2-γ1+γ2)/3`,
/// `t = (2+2γ1+γ2)/3`, requiring `γ1 - γ2 ∈ [-1, 1/2)`.
pub fn solve_rate_time(gamma1: f64, gamma2: f64) -> Result<RatePair> {
    if gamma1 < 0.0 || gamma2 < 0.0 {
        return Err(Error::Infeasible {
            constraint: format!("gamma1, gamma2 must be nonnegative (got {gamma1}, {gamma2})"),
        });
    }
    let gap = gamma1 - gamma2;
    if !(-1.0..0.5).contains(&gap) {
        return Err(Error::Infeasible {
            constraint: format!("gamma1 - gamma2 = {gap} outside [-1, 1/2)"),
        });
    }
    let a = (2.0 - gamma1 + gamma2) / 3.0;
    let t = (2.0 + 2.0 * gamma1 + gamma2) / 3.0;
    if !(a > 0.5 && a <= 1.0 + 1e-12) {
        return Err(Error::Infeasible {
            constraint: format!("fast exponent a = {a} outside (1/2, 1]"),
        });
    }
    // Balance identities the rate derivation hinges on.
    let lhs = -1.0 + 2.0 * a;
    let i1 = -1.0 + a + t - gamma1;
    let i2 = -3.0 + 4.0 * a + t - gamma2;
    assert!(
        (lhs - i1).abs() <= 1e-12 && (lhs - i2).abs() <= 1e-12,
        "time-rate balance identities violated: {lhs} vs {i1}, {i2}"
    );
    Ok(RatePair { a: a.min(1.0), t })
}

/// The seven-term drift constant `C(alpha_0, beta_0)`.
pub fn drift_constant(consts: &AssumptionConstants, alpha0: f64, beta0: f64) -> f64 {
    let c = consts.c_coupling();
    let (ll, lf, lg) = (consts.l_lambda, consts.l_f, consts.l_g);
    let r = beta0 / alpha0;
    lf * lf
        + 4.0 * ll * ll * lg * lg * r * r
        + 2.0 * lf * ll * lg * r
        + (2.0 / consts.mu_g) * lf * lf * ll * ll * lg * lg * (ll + 1.0) * (ll + 1.0) * beta0
        + (1.0 / c) * lg * lg * (ll + 2.0) * r
        + c * 4.0 * ll * ll * lg * lg * (ll + 1.0) * (ll + 1.0) * r * r * r
        + lg * lg * (2.0 * ll * ll + ll + 3.0) * r * r
}

/// Smallest admissible ratio `alpha/beta` (equivalently `omega`).
pub fn omega_lower_bound(consts: &AssumptionConstants) -> f64 {
    let (ll, lg) = (consts.l_lambda, consts.l_g);
    let head = (4.0 / consts.mu_f)
        * (2.0 * ll * lg + (2.0 / consts.mu_g) * ll * ll * lg * lg * (ll + 1.0) * (ll + 1.0));
    head.max(2.0 * consts.c_coupling())
        .max(consts.mu_g / consts.mu_f)
        .max(1.0)
}

/// Smallest admissible slow scale `beta = (2/mu_g)(2a + t)`.
pub fn beta_lower_bound(consts: &AssumptionConstants, rate: &RatePair) -> f64 {
    (2.0 / consts.mu_g) * (2.0 * rate.a + rate.t)
}

/// Smallest admissible shift `k0`, the maximum of the five listed bounds.
pub fn k0_lower_bound(alpha: f64, beta: f64, rate: &RatePair, c_alpha_beta: f64) -> Result<f64> {
    let (a, t) = (rate.a, rate.t);
    if a < 0.5 + 1e-9 {
        return Err(Error::Domain(format!(
            "exponent a = {a} too close to 1/2 for k0 bound"
        )));
    }
    let inv = 1.0 / (2.0 * a - 1.0);
    let b1 = alpha.powf(1.0 / a);
    let b2 = (alpha * alpha / beta).powf(inv);
    let b3 = 1.0 / (2f64.powf(1.0 / t) - 1.0);
    let b4 = 1.0 / (2f64.powf(1.0 / (2.0 * a)) - 1.0);
    let b5 = (6.0 * c_alpha_beta * alpha * alpha).powf(inv);
    Ok(b1.max(b2).max(b3).max(b4).max(b5))
}

/// The weight multiplying slow-noise variance in the drift recursion:
/// `c (2/mu_f L_f^2 + 2/mu_f L_f^2 L_lambda^2 + 2 L_lambda^2) + 1`.
fn psi_weight(consts: &AssumptionConstants) -> f64 {
    let (lf, ll) = (consts.l_f, consts.l_lambda);
    consts.c_coupling()
        * ((2.0 / consts.mu_f) * lf * lf + (2.0 / consts.mu_f) * lf * lf * ll * ll + 2.0 * ll * ll)
        + 1.0
}

fn c2_state(
    consts: &AssumptionConstants,
    gamma: &GammaMatrix,
    delta: &DeltaMatrix,
    alpha: f64,
    beta: f64,
    m: f64,
) -> f64 {
    let c = consts.c_coupling();
    let fast_arg = (1.0 / c) * (alpha / beta) * 2.0 * m;
    let slow_arg = 2.0 * m;
    let w = psi_weight(consts);
    let tail = beta * beta * beta / (alpha * alpha);
    c * 2.0 * alpha * beta * gamma.g11 * fast_arg.powf(delta.d11)
        + c * 2.0 * alpha * beta * gamma.g12 * slow_arg.powf(delta.d12)
        + tail * w * gamma.g21 * fast_arg.powf(delta.d21)
        + tail * w * gamma.g22 * slow_arg.powf(delta.d22)
}

fn solve_m_fixed_point<F: Fn(f64) -> f64>(floor: f64, c2_over_a: F) -> Result<f64> {
    let mut m = floor.max(1.0);
    for _ in 0..M_FIXED_POINT_CAP {
        let next = floor.max(c2_over_a(m));
        if (next - m).abs() <= M_FIXED_POINT_TOL * m.abs().max(1.0) {
            return Ok(next);
        }
        m = next;
    }
    let last = m;
    let current = floor.max(c2_over_a(m));
    Err(Error::FixedPointDiverged {
        iterations: M_FIXED_POINT_CAP,
        last,
        current,
    })
}

fn ratio_violations(
    consts: &AssumptionConstants,
    rate: &RatePair,
    alpha: f64,
    beta: f64,
) -> (f64, f64, Vec<String>) {
    let beta_min = beta_lower_bound(consts, rate);
    let omega_min = omega_lower_bound(consts);
    let mut violations = Vec::new();
    if beta < beta_min - 1e-12 {
        violations.push(format!("beta = {beta} below (2/mu_g)(2a+t) = {beta_min}"));
    }
    if alpha / beta < omega_min - 1e-12 {
        violations.push(format!(
            "alpha/beta = {} below ratio lower bound {omega_min}",
            alpha / beta
        ));
    }
    (beta_min, omega_min, violations)
}

/// Full plan under state-dependent noise: optimal `(a, t)`, strict `k0`,
/// and the envelope constant `M` via fixed-point iteration on
/// `M = max(3 k0^t V0, (3/a) C2(M))`.
pub fn state_noise_plan(
    consts: &AssumptionConstants,
    gamma: &GammaMatrix,
    delta: &DeltaMatrix,
    alpha: f64,
    beta: f64,
    v0: f64,
) -> Result<RatePlan> {
    consts.validate()?;
    gamma.validate()?;
    if v0 < 0.0 {
        return Err(Error::Domain("V0 must be nonnegative".into()));
    }
    let rate = solve_rate_state(delta)?;
    let c_ab = drift_constant(consts, alpha, beta);
    let k0 = k0_lower_bound(alpha, beta, &rate, c_ab)?;
    let schedule = StepSchedule::polynomial(alpha, beta, rate.a, k0)?;
    let floor = 3.0 * k0.powf(rate.t) * v0;
    let m = solve_m_fixed_point(floor, |m| {
        (3.0 / rate.a) * c2_state(consts, gamma, delta, alpha, beta, m)
    })?;
    let (beta_min, omega_min, violations) = ratio_violations(consts, &rate, alpha, beta);
    Ok(RatePlan {
        mode: PlanMode::State,
        rate: Some(rate),
        epsilon: None,
        schedule,
        m_bound: Some(m),
        constants: PlanConstants {
            c: consts.c_coupling(),
            c_alpha_beta: Some(c_ab),
            c_initial: Some(drift_constant(
                consts,
                schedule.alpha_k(0),
                schedule.beta_k(0),
            )),
            c1: Some(c_ab * alpha * alpha * 2.0 * m),
            c2: Some(c2_state(consts, gamma, delta, alpha, beta, m)),
            k0_min: Some(k0),
            beta_min: Some(beta_min),
            omega_min: Some(omega_min),
            v0: Some(v0),
            ..Default::default()
        },
        feasible: violations.is_empty(),
        violations,
    })
}

/// Constant-step plan for the quadratic (`delta = 1`) regime. Picks the
/// `beta` in `(0, beta_cap]` minimizing the contraction factor
/// `q(beta) = 1 + D1 beta + D2 beta^2 + D3 beta^3` and reports
/// `epsilon = -ln q`.
pub fn exponential_plan(
    consts: &AssumptionConstants,
    gamma: &GammaMatrix,
    omega: f64,
    beta_cap: f64,
) -> Result<RatePlan> {
    consts.validate()?;
    gamma.validate()?;
    if omega.is_nan() || beta_cap.is_nan() || omega <= 0.0 || beta_cap <= 0.0 {
        return Err(Error::Domain("omega and beta_cap must be positive".into()));
    }
    let c = consts.c_coupling();
    let (lf, ll, lg) = (consts.l_f, consts.l_lambda, consts.l_g);
    let lp1 = (ll + 1.0) * (ll + 1.0);

    let b2 = (2.0 / consts.mu_g) * lf * lf * ll * ll * lg * lg * lp1;
    let b1 = lf * lf
        + 4.0 * ll * ll * lg * lg
        + 2.0 * lf * ll * lg
        + (1.0 / c) * lg * lg * (ll + 2.0)
        + c * 4.0 * ll * ll * lg * lg * lp1
        + lg * lg * (2.0 * ll * ll + ll + 3.0);

    // Common factor Gamma_21 (1/c) omega + Gamma_22 from the psi variance.
    let psi_var = gamma.g21 * (1.0 / c) * omega + gamma.g22;
    let d1 = -0.5 * consts.mu_g + c * (2.0 / consts.mu_f) * lf * lf / (omega * omega) * psi_var;
    let d2 = b1 * omega * omega
        + c * 2.0 * omega * (gamma.g11 * (1.0 / c) * omega + gamma.g12)
        + (c * 2.0 * ll * ll / omega + 1.0) * psi_var;
    let d3 = b2 * omega * omega + c * (2.0 / consts.mu_f) * lf * lf * ll * ll * psi_var;

    let omega_min = omega_lower_bound(consts);
    let mut violations = Vec::new();
    if omega < omega_min - 1e-12 {
        violations.push(format!(
            "omega = {omega} below ratio lower bound {omega_min}"
        ));
    }
    if d1 > -0.25 * consts.mu_g {
        violations.push(format!(
            "omega too small: D1(omega) = {d1} exceeds -mu_g/4 = {}",
            -0.25 * consts.mu_g
        ));
    }

    let mut constants = PlanConstants {
        c,
        b1: Some(b1),
        b2: Some(b2),
        d1: Some(d1),
        d2: Some(d2),
        d3: Some(d3),
        omega: Some(omega),
        omega_min: Some(omega_min),
        ..Default::default()
    };

    if !violations.is_empty() {
        return Ok(RatePlan {
            mode: PlanMode::Exponential,
            rate: None,
            epsilon: None,
            schedule: StepSchedule::constant(omega * beta_cap, beta_cap)?,
            m_bound: None,
            constants,
            feasible: false,
            violations,
        });
    }

    // q decreases from q(0) = 1 (q'(0) = D1 < 0), so the minimizer over
    // (0, beta_cap] is the positive root of the quadratic q' clipped to the
    // cap. D2 > 0 always (B1 >= L_f^2); D3 >= 0.
    let beta_crit = if d3.abs() < f64::MIN_POSITIVE {
        -d1 / (2.0 * d2)
    } else {
        (-d2 + (d2 * d2 - 3.0 * d3 * d1).sqrt()) / (3.0 * d3)
    };
    let beta_star = beta_crit.min(beta_cap);
    let q = 1.0 + d1 * beta_star + d2 * beta_star * beta_star + d3 * beta_star.powi(3);
    let q = q.max(Q_FLOOR);
    if q >= 1.0 {
        violations.push(format!(
            "no contraction: q(beta) >= 1 for all beta in (0, {beta_cap}]"
        ));
        return Ok(RatePlan {
            mode: PlanMode::Exponential,
            rate: None,
            epsilon: None,
            schedule: StepSchedule::constant(omega * beta_star, beta_star)?,
            m_bound: None,
            constants,
            feasible: false,
            violations,
        });
    }
    constants.q_star = Some(q);
    Ok(RatePlan {
        mode: PlanMode::Exponential,
        rate: None,
        epsilon: Some(-q.ln()),
        schedule: StepSchedule::constant(omega * beta_star, beta_star)?,
        m_bound: None,
        constants,
        feasible: true,
        violations,
    })
}

/// Full plan under time-decaying noise. Like [`state_noise_plan`] but with the
/// closed constant `C2' = c 2 alpha beta Γ'11 + (beta^3/alpha^2) W Γ'22`
/// (no fixed point needed).
#[allow(clippy::too_many_arguments)]
pub fn time_noise_plan(
    consts: &AssumptionConstants,
    gamma11: f64,
    gamma22: f64,
    gamma1: f64,
    gamma2: f64,
    alpha: f64,
    beta: f64,
    v0: f64,
) -> Result<RatePlan> {
    consts.validate()?;
    if gamma11 < 0.0 || gamma22 < 0.0 {
        return Err(Error::Domain("noise scales must be nonnegative".into()));
    }
    if v0 < 0.0 {
        return Err(Error::Domain("V0 must be nonnegative".into()));
    }
    let rate = solve_rate_time(gamma1, gamma2)?;
    let c_ab = drift_constant(consts, alpha, beta);
    let k0 = k0_lower_bound(alpha, beta, &rate, c_ab)?;
    let schedule = StepSchedule::polynomial(alpha, beta, rate.a, k0)?;
    let c = consts.c_coupling();
    let c2_prime = c * 2.0 * alpha * beta * gamma11
        + beta * beta * beta / (alpha * alpha) * psi_weight(consts) * gamma22;
    let m = (3.0 * k0.powf(rate.t) * v0).max((3.0 / rate.a) * c2_prime);
    let (beta_min, omega_min, violations) = ratio_violations(consts, &rate, alpha, beta);
    Ok(RatePlan {
        mode: PlanMode::Time,
        rate: Some(rate),
        epsilon: None,
        schedule,
        m_bound: Some(m),
        constants: PlanConstants {
            c,
            c_alpha_beta: Some(c_ab),
            c_initial: Some(drift_constant(
                consts,
                schedule.alpha_k(0),
                schedule.beta_k(0),
            )),
            c1: Some(c_ab * alpha * alpha * 2.0 * m),
            c2_prime: Some(c2_prime),
            k0_min: Some(k0),
            beta_min: Some(beta_min),
            omega_min: Some(omega_min),
            v0: Some(v0),
            ..Default::default()
        },
        feasible: violations.is_empty(),
        violations,
    })
}
