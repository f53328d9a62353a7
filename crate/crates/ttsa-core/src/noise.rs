//! Noise generators for the three variance regimes: state-dependent powers
//! of the residual norms, the quadratic (`delta = 1`) regime, and
//! time-decaying variances. Samples are isotropic Gaussians calibrated so
//! the conditional second moment meets the assumed bound with equality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance scale matrix `Γ_ij >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaMatrix {
    pub g11: f64,
    pub g12: f64,
    pub g21: f64,
    pub g22: f64,
}

impl GammaMatrix {
    pub fn uniform(g: f64) -> Self {
        Self {
            g11: g,
            g12: g,
            g21: g,
            g22: g,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("g11", self.g11),
            ("g12", self.g12),
            ("g21", self.g21),
            ("g22", self.g22),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidNoise(format!(
                    "Gamma {name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Residual-power matrix `δ_ij`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaMatrix {
    pub d11: f64,
    pub d12: f64,
    pub d21: f64,
    pub d22: f64,
}

impl DeltaMatrix {
    pub fn uniform(d: f64) -> Self {
        Self {
            d11: d,
            d12: d,
            d21: d,
            d22: d,
        }
    }

    pub fn entries(&self) -> [f64; 4] {
        [self.d11, self.d12, self.d21, self.d22]
    }

    /// All entries in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d11", self.d11),
            ("d12", self.d12),
            ("d21", self.d21),
            ("d22", self.d22),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidNoise(format!(
                    "delta {name} must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }

    /// All entries strictly below 1 (polynomial-rate regime).
    pub fn validate_strict(&self) -> Result<()> {
        self.validate()?;
        for (name, v) in [
            ("d11", self.d11),
            ("d12", self.d12),
            ("d21", self.d21),
            ("d22", self.d22),
        ] {
            if v >= 1.0 {
                return Err(Error::Domain(format!(
                    "delta {name} = 1 is the quadratic regime; use the exponential mode"
                )));
            }
        }
        Ok(())
    }
}

/// Which variance law drives the martingale-difference noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// No noise at all.
    None,
    /// `E|xi|^2 = Γ11 |x̂|^(2 d11) + Γ12 |ŷ|^(2 d12)` and the `psi` analogue,
    /// with all `δ_ij ∈ [0, 1)`.
    State {
        gamma: GammaMatrix,
        delta: DeltaMatrix,
    },
    /// The same with `δ_ij ≡ 1`.
    Quadratic { gamma: GammaMatrix },
    /// `E|xi|^2 = Γ'11 (k+1+k0)^(-γ1)`, `E|psi|^2 = Γ'22 (k+1+k0)^(-γ2)`.
    Time {
        gamma11: f64,
        gamma22: f64,
        gamma1: f64,
        gamma2: f64,
    },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseSpec::None => Ok(()),
            NoiseSpec::State { gamma, delta } => {
                gamma.validate()?;
                delta.validate()?;
                for (name, v) in [
                    ("d11", delta.d11),
                    ("d12", delta.d12),
                    ("d21", delta.d21),
                    ("d22", delta.d22),
                ] {
                    if v >= 1.0 {
                        return Err(Error::InvalidNoise(format!(
                            "state kind requires delta {name} < 1; use kind \"quadratic\" for delta = 1"
                        )));
                    }
                }
                Ok(())
            }
            NoiseSpec::Quadratic { gamma } => gamma.validate(),
            NoiseSpec::Time {
                gamma11,
                gamma22,
                gamma1,
                gamma2,
            } => {
                for (name, v) in [
                    ("gamma11", *gamma11),
                    ("gamma22", *gamma22),
                    ("gamma1", *gamma1),
                    ("gamma2", *gamma2),
                ] {
                    if !v.is_finite() || v < 0.0 {
                        return Err(Error::InvalidNoise(format!(
                            "{name} must be nonnegative, got {v}"
                        )));
                    }
                }
                let gap = gamma1 - gamma2;
                if !(-1.0..0.5).contains(&gap) {
                    return Err(Error::InvalidNoise(format!(
                        "gamma1 - gamma2 = {gap} outside [-1, 1/2)"
                    )));
                }
                Ok(())
            }
        }
    }

    /// The same law with the slow-update noise removed. Used for problems
    /// whose slow recursion carries no noise term.
    pub fn without_psi(&self) -> NoiseSpec {
        match *self {
            NoiseSpec::None => NoiseSpec::None,
            NoiseSpec::State { gamma, delta } => NoiseSpec::State {
                gamma: GammaMatrix {
                    g21: 0.0,
                    g22: 0.0,
                    ..gamma
                },
                delta,
            },
            NoiseSpec::Quadratic { gamma } => NoiseSpec::Quadratic {
                gamma: GammaMatrix {
                    g21: 0.0,
                    g22: 0.0,
                    ..gamma
                },
            },
            NoiseSpec::Time {
                gamma11,
                gamma1,
                gamma2,
                ..
            } => NoiseSpec::Time {
                gamma11,
                gamma22: 0.0,
                gamma1,
                gamma2,
            },
        }
    }
}

/// Target second moments `(E|xi|^2, E|psi|^2)` at residual norms
/// `(|x̂|, |ŷ|)` and iteration `k`.
pub fn target_variances(
    spec: &NoiseSpec,
    xhat_norm: f64,
    yhat_norm: f64,
    k: u64,
    k0: f64,
) -> (f64, f64) {
    match *spec {
        NoiseSpec::None => (0.0, 0.0),
        NoiseSpec::State { gamma, delta } => (
            gamma.g11 * pow2delta(xhat_norm, delta.d11)
                + gamma.g12 * pow2delta(yhat_norm, delta.d12),
            gamma.g21 * pow2delta(xhat_norm, delta.d21)
                + gamma.g22 * pow2delta(yhat_norm, delta.d22),
        ),
        NoiseSpec::Quadratic { gamma } => (
            gamma.g11 * xhat_norm * xhat_norm + gamma.g12 * yhat_norm * yhat_norm,
            gamma.g21 * xhat_norm * xhat_norm + gamma.g22 * yhat_norm * yhat_norm,
        ),
        NoiseSpec::Time {
            gamma11,
            gamma22,
            gamma1,
            gamma2,
        } => {
            let base = k as f64 + 1.0 + k0;
            (gamma11 * base.powf(-gamma1), gamma22 * base.powf(-gamma2))
        }
    }
}

/// `|r|^(2 delta)` with the conventions `delta = 0 -> 1` and `delta = 1 ->
/// |r|^2` hit without calling `powf`.
#[inline]
fn pow2delta(norm: f64, delta: f64) -> f64 {
    if delta == 0.0 {
        1.0
    } else if delta == 1.0 {
        norm * norm
    } else {
        (norm * norm).powf(delta)
    }
}

/// Deterministic per-replicate random stream pair.
///
/// The cipher key is derived from the master seed alone; replicate `r` owns
/// the two counter streams `2r` (fast-noise draws) and `2r + 1` (slow-noise
/// draws), so substreams of distinct replicates and of the two noise
/// channels never overlap by construction.
#[derive(Debug, Clone)]
pub struct RngStream {
    pub master_seed: u64,
    pub replicate_id: u64,
    xi: ChaCha8Rng,
    psi: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, replicate_id: u64) -> Self {
        assert!(
            replicate_id < u64::MAX / 2,
            "replicate id too large for stream split"
        );
        let key = expand_seed(master_seed);
        let mut xi = ChaCha8Rng::from_seed(key);
        xi.set_stream(2 * replicate_id);
        let mut psi = ChaCha8Rng::from_seed(key);
        psi.set_stream(2 * replicate_id + 1);
        Self {
            master_seed,
            replicate_id,
            xi,
            psi,
        }
    }

    /// Standard normal draw from the fast-noise substream.
    #[inline]
    pub fn draw_xi(&mut self) -> f64 {
        self.xi.sample(StandardNormal)
    }

    /// Standard normal draw from the slow-noise substream.
    #[inline]
    pub fn draw_psi(&mut self) -> f64 {
        self.psi.sample(StandardNormal)
    }

    /// Raw word from the fast substream (used by stream-disjointness tests).
    pub fn next_raw_xi(&mut self) -> u64 {
        self.xi.gen()
    }
}

/// SplitMix64 expansion of the master seed into a 256-bit cipher key.
fn expand_seed(master_seed: u64) -> [u8; 32] {
    let mut state = master_seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    key
}

/// Draws `(xi, psi)` into the provided buffers: zero-mean isotropic
/// Gaussians with `E|xi|^2 = s_xi`, `E|psi|^2 = s_psi` (per-coordinate
/// variance `s/d`). A channel with zero target variance is zeroed without
/// consuming draws from its substream.
#[allow(clippy::too_many_arguments)]
pub fn sample(
    spec: &NoiseSpec,
    xhat_norm: f64,
    yhat_norm: f64,
    k: u64,
    k0: f64,
    rng: &mut RngStream,
    xi: &mut [f64],
    psi: &mut [f64],
) -> (f64, f64) {
    let (s_xi, s_psi) = target_variances(spec, xhat_norm, yhat_norm, k, k0);
    fill_gaussian(xi, s_xi, |r| r.draw_xi(), rng);
    fill_gaussian(psi, s_psi, |r| r.draw_psi(), rng);
    (s_xi, s_psi)
}

#[inline]
fn fill_gaussian<F: Fn(&mut RngStream) -> f64>(
    buf: &mut [f64],
    target: f64,
    draw: F,
    rng: &mut RngStream,
) {
    if target <= 0.0 || buf.is_empty() {
        buf.fill(0.0);
        return;
    }
    let scale = (target / buf.len() as f64).sqrt();
    for v in buf.iter_mut() {
        *v = scale * draw(rng);
    }
}
