//! Benchmark problem instances: the gradient-averaging pair and the scalar
//! bilevel pair, with analytic operators, the fast-equilibrium map, cached
//! fixed points, and empirical checks of the assumed constants.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::AssumptionConstants;

/// Vector-valued operator `(x, y) -> out` writing into a caller buffer.
pub type Operator = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Fast-equilibrium map `y -> lambda(y)` writing into a caller buffer.
pub type LambdaMap = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Scalar field used as the reference in derivative checks.
pub type ScalarFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Which argument a [`DerivativeCheck`] differentiates with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
}

/// A claimed analytic derivative paired with the scalar it differentiates.
pub struct DerivativeCheck {
    pub name: &'static str,
    pub wrt: Var,
    pub scalar: ScalarFn,
    pub gradient: Operator,
}

/// A problem instance: operators, dimensions, equilibrium data, constants.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: &'static str,
    pub d1: usize,
    pub d2: usize,
    f: Operator,
    g: Operator,
    lambda: Option<LambdaMap>,
    pub x_star: Vec<f64>,
    pub y_star: Option<Vec<f64>>,
    pub consts: AssumptionConstants,
    /// Whether the slow update carries a noise term.
    pub slow_noise: bool,
    pub checks: Arc<Vec<DerivativeCheck>>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("d1", &self.d1)
            .field("d2", &self.d2)
            .field("x_star", &self.x_star)
            .field("y_star", &self.y_star)
            .field("consts", &self.consts)
            .field("slow_noise", &self.slow_noise)
            .finish()
    }
}

impl ProblemSpec {
    /// Assembles a user-defined instance from raw operators. Instances
    /// without a `lambda` map or cached slow fixed point support stepping
    /// but not residual or Lyapunov evaluation.
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        name: &'static str,
        d1: usize,
        d2: usize,
        f: Operator,
        g: Operator,
        lambda: Option<LambdaMap>,
        x_star: Vec<f64>,
        y_star: Option<Vec<f64>>,
        consts: AssumptionConstants,
        slow_noise: bool,
    ) -> Self {
        Self {
            name,
            d1,
            d2,
            f,
            g,
            lambda,
            x_star,
            y_star,
            consts,
            slow_noise,
            checks: Arc::new(Vec::new()),
        }
    }

    /// Replaces the derivative-check list (for custom instances).
    pub fn with_checks(mut self, checks: Vec<DerivativeCheck>) -> Self {
        self.checks = Arc::new(checks);
        self
    }

    #[inline]
    pub fn f(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.f)(x, y, out);
    }

    #[inline]
    pub fn g(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.g)(x, y, out);
    }

    /// Evaluates `lambda(y)` into `out`; configuration error when the
    /// instance carries no analytic map.
    #[inline]
    pub fn lambda(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.lambda {
            Some(l) => {
                l(y, out);
                Ok(())
            }
            None => Err(Error::Config(format!(
                "problem {} has no analytic lambda map",
                self.name
            ))),
        }
    }

    pub fn y_star(&self) -> Result<&[f64]> {
        self.y_star.as_deref().ok_or_else(|| {
            Error::Config(format!(
                "problem {} has no cached slow fixed point",
                self.name
            ))
        })
    }
}

/// Identifier used in experiment configs; builds the instance on demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemId {
    SgdPr { dim: usize },
    Sbo,
}

impl ProblemId {
    pub fn build(&self) -> Result<ProblemSpec> {
        match *self {
            ProblemId::SgdPr { dim } => make_sgd_pr(dim),
            ProblemId::Sbo => Ok(make_sbo()),
        }
    }
}

const BISECT_TOL: f64 = 1e-12;

/// Bisection on a bracketing interval; the bracket must change sign.
fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let (flo, fhi) = (f(lo), f(hi));
    assert!(
        flo * fhi <= 0.0,
        "bisection bracket does not change sign: f({lo})={flo}, f({hi})={fhi}"
    );
    // orient so f is nonpositive at lo
    if flo > 0.0 {
        std::mem::swap(&mut lo, &mut hi);
    }
    while (hi - lo).abs() > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Gradient averaging in `dim` dimensions: fast update is the gradient of
/// the coordinatewise objective `x_i^2 + sin x_i`, slow update averages the
/// fast iterate. The fast equilibrium is the constant `x*` with
/// `2 x* + cos x* = 0`, and the slow update carries no noise.
pub fn make_sgd_pr(dim: usize) -> Result<ProblemSpec> {
    if dim == 0 {
        return Err(Error::Config("dimension must be at least 1".into()));
    }
    let root = bisect(|x| 2.0 * x + x.cos(), -1.0, 0.0, BISECT_TOL);
    let x_star = vec![root; dim];
    let y_star = vec![root; dim];

    let f: Operator = Arc::new(|x, _y, out| {
        for (o, &v) in out.iter_mut().zip(x) {
            *o = 2.0 * v + v.cos();
        }
    });
    let g: Operator = Arc::new(|x, y, out| {
        for i in 0..out.len() {
            out[i] = y[i] - x[i];
        }
    });
    let lam = x_star.clone();
    let lambda: LambdaMap = Arc::new(move |_y, out| out.copy_from_slice(&lam));

    let objective: ScalarFn = Arc::new(|x, _y| x.iter().map(|&v| v * v + v.sin()).sum());
    let checks = vec![DerivativeCheck {
        name: "fast update vs objective gradient",
        wrt: Var::X,
        scalar: objective,
        gradient: f.clone(),
    }];

    Ok(ProblemSpec {
        name: "sgd-pr",
        d1: dim,
        d2: dim,
        f,
        g,
        lambda: Some(lambda),
        x_star,
        y_star: Some(y_star),
        consts: AssumptionConstants::new(0.0, 3.0, 1.0, 2.0, 1.0)?,
        slow_noise: false,
        checks: Arc::new(checks),
    })
}

/// Piecewise coupling map: `sign(z) z^2 / 2` inside the unit interval,
/// `sign(z)(|z| - 1/2)` outside. Returns `(value, derivative)`; both are
/// continuous at `|z| = 1`.
pub fn htilde2(z: f64) -> (f64, f64) {
    if z.abs() <= 1.0 {
        (0.5 * z.abs() * z, z.abs())
    } else {
        (z.signum() * (z.abs() - 0.5), 1.0)
    }
}

#[inline]
fn sbo_inner(x: f64, y: f64) -> (f64, f64, f64) {
    let (hv, hd) = htilde2(y);
    (x + hv, hv, hd)
}

/// Scalar bilevel instance built from
/// `F(x,y) = 10 (x + h(y))^2 + 10 sin(x + h(y))` and
/// `G(x,y) = (x + h(y))^2 + sin y + y^2`, with the slow update assembled
/// from the analytic partials and the inverse fast Hessian.
pub fn make_sbo() -> ProblemSpec {
    let u_star = bisect(|u| 20.0 * u + 10.0 * u.cos(), -1.0, 0.0, BISECT_TOL);

    let f: Operator = Arc::new(|x, y, out| {
        let (u, _, _) = sbo_inner(x[0], y[0]);
        out[0] = 20.0 * u + 10.0 * u.cos();
    });
    let g: Operator = Arc::new(|x, y, out| {
        let (u, _, hd) = sbo_inner(x[0], y[0]);
        let grad_y_outer = 2.0 * u * hd + y[0].cos() + 2.0 * y[0];
        let grad_x_outer = 2.0 * u;
        let hess_xx = 20.0 - 10.0 * u.sin();
        // 20 - 10 sin u >= 10 everywhere; the inverse below is safe.
        assert!(hess_xx > 0.0, "fast Hessian lost positivity: {hess_xx}");
        let hess_yx = hess_xx * hd;
        out[0] = grad_y_outer - hess_yx / hess_xx * grad_x_outer;
    });
    let lambda: LambdaMap = Arc::new(move |y, out| {
        out[0] = u_star - htilde2(y[0]).0;
    });

    // Slow equilibrium: root of g(lambda(y), y) on the slow dynamics.
    let g_slow = {
        let g = g.clone();
        let lambda = lambda.clone();
        move |y: f64| {
            let mut lam = [0.0];
            lambda(&[y], &mut lam);
            let mut out = [0.0];
            g(&lam, &[y], &mut out);
            out[0]
        }
    };
    let y_star = bisect(g_slow, -1.0, 0.0, BISECT_TOL);
    let mut x_star = [0.0];
    lambda(&[y_star], &mut x_star);

    let outer: ScalarFn = Arc::new(|x, y| {
        let (u, _, _) = sbo_inner(x[0], y[0]);
        10.0 * u * u + 10.0 * u.sin()
    });
    let inner: ScalarFn = Arc::new(|x, y| {
        let (u, _, _) = sbo_inner(x[0], y[0]);
        u * u + y[0].sin() + y[0] * y[0]
    });
    let fast_grad: ScalarFn = Arc::new(|x, y| {
        let (u, _, _) = sbo_inner(x[0], y[0]);
        20.0 * u + 10.0 * u.cos()
    });
    let checks = vec![
        DerivativeCheck {
            name: "fast update vs outer gradient in x",
            wrt: Var::X,
            scalar: outer.clone(),
            gradient: f.clone(),
        },
        DerivativeCheck {
            name: "inner gradient in y",
            wrt: Var::Y,
            scalar: inner.clone(),
            gradient: Arc::new(|x, y, out| {
                let (u, _, hd) = sbo_inner(x[0], y[0]);
                out[0] = 2.0 * u * hd + y[0].cos() + 2.0 * y[0];
            }),
        },
        DerivativeCheck {
            name: "inner gradient in x",
            wrt: Var::X,
            scalar: inner,
            gradient: Arc::new(|x: &[f64], y: &[f64], out: &mut [f64]| {
                let (u, _, _) = sbo_inner(x[0], y[0]);
                out[0] = 2.0 * u;
            }),
        },
        DerivativeCheck {
            name: "outer Hessian in x",
            wrt: Var::X,
            scalar: fast_grad.clone(),
            gradient: Arc::new(|x, y, out| {
                let (u, _, _) = sbo_inner(x[0], y[0]);
                out[0] = 20.0 - 10.0 * u.sin();
            }),
        },
        DerivativeCheck {
            name: "outer mixed Hessian",
            wrt: Var::Y,
            scalar: fast_grad,
            gradient: Arc::new(|x, y, out| {
                let (u, _, hd) = sbo_inner(x[0], y[0]);
                out[0] = (20.0 - 10.0 * u.sin()) * hd;
            }),
        },
    ];

    ProblemSpec {
        name: "sbo",
        d1: 1,
        d2: 1,
        f,
        g,
        lambda: Some(lambda),
        x_star: x_star.to_vec(),
        y_star: Some(vec![y_star]),
        consts: AssumptionConstants::new(3.0, 60.0, 10.0, 3.0, 1.0)
            .expect("bilevel constants are valid"),
        slow_noise: true,
        checks: Arc::new(checks),
    }
}

/// One empirical constraint check with its worst observed ratio.
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintCheck {
    pub name: String,
    /// Worst `observed / assumed`; at most 1 when the constant holds.
    pub worst_ratio: f64,
    pub witness: String,
    pub pass: bool,
}

/// Report of [`verify_constants`].
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub problem: String,
    pub box_halfwidth: f64,
    pub samples: usize,
    pub checks: Vec<ConstraintCheck>,
}

impl VerifyReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

const VERIFY_SLACK: f64 = 1e-9;

/// Samples `n` random pairs in `[-w, w]` boxes and measures the worst
/// ratios of the four assumption inequalities: both Lipschitz bounds, the
/// fast strong monotonicity, and the one-point slow monotonicity.
pub fn verify_constants(
    spec: &ProblemSpec,
    box_halfwidth: f64,
    n: usize,
    seed: u64,
) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = box_halfwidth;
    let (d1, d2) = (spec.d1, spec.d2);
    let k = &spec.consts;
    let y_star = spec.y_star()?.to_vec();

    let uniform = |dim: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-w..=w)).collect()
    };

    let mut worst = [
        ("Lipschitz bound on fast operator", 0.0f64, String::new()),
        ("fast strong monotonicity", f64::INFINITY, String::new()),
        ("Lipschitz bound on slow operator", 0.0, String::new()),
        ("one-point slow monotonicity", f64::INFINITY, String::new()),
    ];

    let mut f1 = vec![0.0; d1];
    let mut f2 = vec![0.0; d1];
    let mut g1 = vec![0.0; d2];
    let mut g2 = vec![0.0; d2];
    let mut lam = vec![0.0; d1];

    for _ in 0..n {
        let x1 = uniform(d1, &mut rng);
        let x2 = uniform(d1, &mut rng);
        let y1 = uniform(d2, &mut rng);
        let y2 = uniform(d2, &mut rng);

        let dx = norm_diff(&x1, &x2);
        let dy = norm_diff(&y1, &y2);

        // |f(x1,y1) - f(x2,y2)| <= L_f (|dx| + |dy|)
        spec.f(&x1, &y1, &mut f1);
        spec.f(&x2, &y2, &mut f2);
        if dx + dy > 1e-12 {
            let ratio = norm_diff(&f1, &f2) / (k.l_f * (dx + dy));
            if ratio > worst[0].1 {
                worst[0] = (
                    worst[0].0,
                    ratio,
                    format!("x1={x1:?} y1={y1:?} x2={x2:?} y2={y2:?}"),
                );
            }
        }

        // <x1-x2, f(x1,y) - f(x2,y)> >= mu_f |x1-x2|^2 at shared y
        spec.f(&x1, &y1, &mut f1);
        spec.f(&x2, &y1, &mut f2);
        if dx > 1e-12 {
            let inner: f64 = (0..d1).map(|i| (x1[i] - x2[i]) * (f1[i] - f2[i])).sum();
            let ratio = inner / (k.mu_f * dx * dx);
            if ratio < worst[1].1 {
                worst[1] = (worst[1].0, ratio, format!("x1={x1:?} x2={x2:?} y={y1:?}"));
            }
        }

        // |g(x1,y1) - g(x2,y2)| <= L_g (|dx| + |dy|)
        spec.g(&x1, &y1, &mut g1);
        spec.g(&x2, &y2, &mut g2);
        if dx + dy > 1e-12 {
            let ratio = norm_diff(&g1, &g2) / (k.l_g * (dx + dy));
            if ratio > worst[2].1 {
                worst[2] = (
                    worst[2].0,
                    ratio,
                    format!("x1={x1:?} y1={y1:?} x2={x2:?} y2={y2:?}"),
                );
            }
        }

        // <y - y*, g(lambda(y), y)> >= mu_g |y - y*|^2
        spec.lambda(&y1, &mut lam)?;
        spec.g(&lam, &y1, &mut g1);
        let dys = norm_diff(&y1, &y_star);
        if dys > 1e-12 {
            let inner: f64 = (0..d2).map(|i| (y1[i] - y_star[i]) * g1[i]).sum();
            let ratio = inner / (k.mu_g * dys * dys);
            if ratio < worst[3].1 {
                worst[3] = (worst[3].0, ratio, format!("y={y1:?}"));
            }
        }
    }

    let checks = worst
        .into_iter()
        .enumerate()
        .map(|(i, (name, ratio, witness))| {
            let pass = if i % 2 == 0 {
                ratio <= 1.0 + VERIFY_SLACK
            } else {
                ratio >= 1.0 - VERIFY_SLACK
            };
            ConstraintCheck {
                name: name.to_string(),
                worst_ratio: ratio,
                witness,
                pass,
            }
        })
        .collect();

    Ok(VerifyReport {
        problem: spec.name.to_string(),
        box_halfwidth,
        samples: n,
        checks,
    })
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}
