//! Step-size schedules of the form `alpha_k = alpha / (k + 1 + k0)^a`,
//! `beta_k = beta / (k + 1 + k0)^b`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomially decaying step-size pair. `a = b = 0` gives constant steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    /// Scale of the fast step.
    pub alpha: f64,
    /// Scale of the slow step.
    pub beta: f64,
    /// Fast decay exponent.
    pub a: f64,
    /// Slow decay exponent.
    pub b: f64,
    /// Iteration shift.
    pub k0: f64,
}

impl StepSchedule {
    /// General schedule. Exponents must be nonnegative so both step sizes
    /// are nonincreasing in `k`.
    pub fn general(alpha: f64, beta: f64, a: f64, b: f64, k0: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::InvalidSchedule(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::InvalidSchedule(format!(
                "beta must be positive, got {beta}"
            )));
        }
        if a.is_nan() || b.is_nan() || a < 0.0 || b < 0.0 {
            return Err(Error::InvalidSchedule(format!(
                "exponents must be nonnegative, got a={a}, b={b}"
            )));
        }
        if k0.is_nan() || k0 < 0.0 {
            return Err(Error::InvalidSchedule(format!(
                "k0 must be nonnegative, got {k0}"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            a,
            b,
            k0,
        })
    }

    /// Guarantee-mode schedule: `b = 1` and fast exponent `a` in `(1/2, 1]`.
    pub fn polynomial(alpha: f64, beta: f64, a: f64, k0: f64) -> Result<Self> {
        if !(a > 0.5 && a <= 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "fast exponent a must lie in (1/2, 1], got {a}"
            )));
        }
        Self::general(alpha, beta, a, 1.0, k0)
    }

    /// Constant steps `alpha_k = alpha`, `beta_k = beta` (exponential mode).
    pub fn constant(alpha: f64, beta: f64) -> Result<Self> {
        Self::general(alpha, beta, 0.0, 0.0, 0.0)
    }

    /// Re-validates a deserialized schedule.
    pub fn validate(&self) -> Result<()> {
        Self::general(self.alpha, self.beta, self.a, self.b, self.k0).map(|_| ())
    }

    #[inline]
    pub fn alpha_k(&self, k: u64) -> f64 {
        self.alpha / (k as f64 + 1.0 + self.k0).powf(self.a)
    }

    #[inline]
    pub fn beta_k(&self, k: u64) -> f64 {
        self.beta / (k as f64 + 1.0 + self.k0).powf(self.b)
    }

    /// Both step sizes at iteration `k`.
    #[inline]
    pub fn step_sizes(&self, k: u64) -> (f64, f64) {
        (self.alpha_k(k), self.beta_k(k))
    }

    /// The Lyapunov weight ratio `beta_k / alpha_k`. For constant steps this
    /// is `beta / alpha` independent of `k`.
    #[inline]
    pub fn ratio_beta_alpha(&self, k: u64) -> f64 {
        (self.beta / self.alpha) * (k as f64 + 1.0 + self.k0).powf(self.a - self.b)
    }

    /// True when the schedule uses constant steps.
    pub fn is_constant(&self) -> bool {
        self.a == 0.0 && self.b == 0.0
    }
}

/// Computes `(alpha_k, beta_k)` for a validated schedule.
pub fn step_sizes(k: u64, sched: &StepSchedule) -> (f64, f64) {
    sched.step_sizes(k)
}
