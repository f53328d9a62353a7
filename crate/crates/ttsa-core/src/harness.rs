//! Seeded Monte-Carlo ensembles: independent replicate trajectories,
//! Lyapunov values at log-spaced checkpoints, and a deterministic reduction
//! whose output is bit-identical for any parallelism degree.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::noise::{self, NoiseSpec, RngStream};
use crate::problems::{ProblemId, ProblemSpec};
use crate::sa::{lyapunov_from_norms, IterateState, DIVERGENCE_LIMIT};
use crate::schedule::StepSchedule;

pub const SCHEMA_VERSION: u32 = 1;

/// Initial value broadcast to a full vector or given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitValue {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl InitValue {
    pub fn materialize(&self, dim: usize) -> Result<Vec<f64>> {
        match self {
            InitValue::Scalar(v) => Ok(vec![*v; dim]),
            InitValue::Vector(v) if v.len() == dim => Ok(v.clone()),
            InitValue::Vector(v) => Err(Error::Config(format!(
                "initial vector has dimension {}, problem expects {dim}",
                v.len()
            ))),
        }
    }
}

/// Initial iterate pair; defaults to all-ones as in the rate experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Init {
    pub x0: InitValue,
    pub y0: InitValue,
}

impl Default for Init {
    fn default() -> Self {
        Self {
            x0: InitValue::Scalar(1.0),
            y0: InitValue::Scalar(1.0),
        }
    }
}

/// Full description of one ensemble run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemId,
    pub noise: NoiseSpec,
    pub schedule: StepSchedule,
    pub iterations: u64,
    pub replicates: u64,
    pub master_seed: u64,
    /// Explicit checkpoint iterations; `None` uses 20 per decade.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<u64>>,
    #[serde(default)]
    pub init: Init,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.schedule.validate()?;
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if let Some(cps) = &self.checkpoints {
            if cps.is_empty() {
                return Err(Error::Config("checkpoint list must not be empty".into()));
            }
            if !cps.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Config(
                    "checkpoints must be strictly increasing".into(),
                ));
            }
            if *cps.last().unwrap() > self.iterations {
                return Err(Error::Config(format!(
                    "last checkpoint {} exceeds iterations {}",
                    cps.last().unwrap(),
                    self.iterations
                )));
            }
        }
        Ok(())
    }

    pub fn resolved_checkpoints(&self) -> Vec<u64> {
        match &self.checkpoints {
            Some(c) => c.clone(),
            None if self.iterations == 0 => vec![0],
            None => default_checkpoints(self.iterations, 20),
        }
    }
}

/// Log-spaced checkpoint indices, `per_decade` points per decade,
/// deduplicated, always containing 0 and `iterations`.
pub fn default_checkpoints(iterations: u64, per_decade: u32) -> Vec<u64> {
    assert!(iterations >= 1 && per_decade >= 1);
    let mut out = vec![0u64];
    let mut j = 0u32;
    loop {
        let v = 10f64.powf(j as f64 / per_decade as f64).trunc() as u64;
        if v > iterations {
            break;
        }
        if *out.last().unwrap() != v {
            out.push(v);
        }
        j += 1;
    }
    if *out.last().unwrap() != iterations {
        out.push(iterations);
    }
    out
}

/// Per-checkpoint record of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointSample {
    pub k: u64,
    pub v: f64,
    pub xhat_sq: f64,
    pub yhat_sq: f64,
}

/// One replicate's trajectory summary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub replicate_id: u64,
    pub samples: Vec<CheckpointSample>,
    /// Iteration at which the divergence guard fired, if any.
    pub diverged_at: Option<u64>,
}

struct TrajectoryRunner<'a> {
    problem: &'a ProblemSpec,
    noise: NoiseSpec,
    sched: StepSchedule,
    state: IterateState,
    rng: RngStream,
    lam: Vec<f64>,
    drift_x: Vec<f64>,
    drift_y: Vec<f64>,
    xi: Vec<f64>,
    psi: Vec<f64>,
}

impl<'a> TrajectoryRunner<'a> {
    fn new(problem: &'a ProblemSpec, config: &ExperimentConfig, replicate_id: u64) -> Result<Self> {
        let x0 = config.init.x0.materialize(problem.d1)?;
        let y0 = config.init.y0.materialize(problem.d2)?;
        let noise = if problem.slow_noise {
            config.noise
        } else {
            config.noise.without_psi()
        };
        Ok(Self {
            problem,
            noise,
            sched: config.schedule,
            state: IterateState::new(0, x0, y0),
            rng: RngStream::new(config.master_seed, replicate_id),
            lam: vec![0.0; problem.d1],
            drift_x: vec![0.0; problem.d1],
            drift_y: vec![0.0; problem.d2],
            xi: vec![0.0; problem.d1],
            psi: vec![0.0; problem.d2],
        })
    }

    /// Squared residual norms at the current iterate.
    fn residual_norms_sq(&mut self) -> Result<(f64, f64)> {
        self.problem.lambda(&self.state.y, &mut self.lam)?;
        let xs = self
            .state
            .x
            .iter()
            .zip(&self.lam)
            .map(|(x, l)| (x - l) * (x - l))
            .sum();
        let y_star = self.problem.y_star()?;
        let ys = self
            .state
            .y
            .iter()
            .zip(y_star)
            .map(|(y, s)| (y - s) * (y - s))
            .sum();
        Ok((xs, ys))
    }

    /// Advances one iteration. `Err(Diverged)` when the guard fires.
    fn advance(&mut self, xhat_sq: f64, yhat_sq: f64) -> Result<()> {
        let k = self.state.k;
        let (alpha_k, beta_k) = self.sched.step_sizes(k);
        noise::sample(
            &self.noise,
            xhat_sq.sqrt(),
            yhat_sq.sqrt(),
            k,
            self.sched.k0,
            &mut self.rng,
            &mut self.xi,
            &mut self.psi,
        );
        self.problem
            .f(&self.state.x, &self.state.y, &mut self.drift_x);
        self.problem
            .g(&self.state.x, &self.state.y, &mut self.drift_y);
        let mut x_sq = 0.0;
        for i in 0..self.problem.d1 {
            self.state.x[i] -= alpha_k * (self.drift_x[i] + self.xi[i]);
            x_sq += self.state.x[i] * self.state.x[i];
        }
        let mut y_sq = 0.0;
        for i in 0..self.problem.d2 {
            self.state.y[i] -= beta_k * (self.drift_y[i] + self.psi[i]);
            y_sq += self.state.y[i] * self.state.y[i];
        }
        self.state.k = k + 1;
        if !(x_sq.is_finite() && y_sq.is_finite())
            || x_sq > DIVERGENCE_LIMIT * DIVERGENCE_LIMIT
            || y_sq > DIVERGENCE_LIMIT * DIVERGENCE_LIMIT
        {
            return Err(Error::Diverged {
                iteration: self.state.k,
            });
        }
        Ok(())
    }
}

/// Runs one replicate, recording the Lyapunov value at each checkpoint.
/// Divergence yields a partial record with the flag set.
pub fn run_trajectory(
    problem: &ProblemSpec,
    config: &ExperimentConfig,
    replicate_id: u64,
) -> Result<TrajectoryRecord> {
    let checkpoints = config.resolved_checkpoints();
    let mut runner = TrajectoryRunner::new(problem, config, replicate_id)?;
    let mut samples = Vec::with_capacity(checkpoints.len());
    let mut next_cp = 0usize;
    let mut diverged_at = None;

    'outer: while next_cp < checkpoints.len() {
        let target = checkpoints[next_cp];
        while runner.state.k < target {
            let (xs, ys) = runner.residual_norms_sq()?;
            match runner.advance(xs, ys) {
                Ok(()) => {}
                Err(Error::Diverged { iteration }) => {
                    diverged_at = Some(iteration);
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
        }
        let (xs, ys) = runner.residual_norms_sq()?;
        let lv = lyapunov_from_norms(xs, ys, &config.schedule, target, &problem.consts);
        samples.push(CheckpointSample {
            k: target,
            v: lv.v,
            xhat_sq: xs,
            yhat_sq: ys,
        });
        next_cp += 1;
    }

    Ok(TrajectoryRecord {
        replicate_id,
        samples,
        diverged_at,
    })
}

/// Aggregate statistics at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStat {
    pub k: u64,
    #[serde(rename = "mean_V")]
    pub mean_v: f64,
    #[serde(rename = "stderr_V")]
    pub stderr_v: f64,
    pub n_alive: u64,
}

/// Checkpointed ensemble means with the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub schema_version: u32,
    #[serde(default = "default_version")]
    pub version: String,
    pub config: ExperimentConfig,
    pub checkpoints: Vec<CheckpointStat>,
    pub wall_time_s: f64,
}

fn default_version() -> String {
    String::new()
}

fn version_string() -> String {
    format!("ttsa {}", env!("CARGO_PKG_VERSION"))
}

impl EnsembleSummary {
    /// Number of replicates the divergence guard removed.
    pub fn diverged(&self) -> u64 {
        self.config.replicates - self.checkpoints.last().map_or(0, |c| c.n_alive)
    }
}

/// Pairwise tree summation over a fixed-order slice.
fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
        }
    }
}

/// Runs all replicates (in parallel under the ambient rayon pool) and
/// reduces in replicate order with pairwise summation, so the summary is a
/// pure function of the configuration.
pub fn run_ensemble(config: &ExperimentConfig) -> Result<EnsembleSummary> {
    let problem = config.problem.build()?;
    run_ensemble_with(&problem, config)
}

/// [`run_ensemble`] against an explicit (possibly custom) problem instance;
/// `config.problem` is recorded as-is in the summary echo.
pub fn run_ensemble_with(
    problem: &ProblemSpec,
    config: &ExperimentConfig,
) -> Result<EnsembleSummary> {
    config.validate()?;
    let started = Instant::now();
    let checkpoints = config.resolved_checkpoints();

    let records: Vec<TrajectoryRecord> = (0..config.replicates)
        .into_par_iter()
        .map(|rep| run_trajectory(problem, config, rep))
        .collect::<Result<_>>()?;

    let diverged = records.iter().filter(|r| r.diverged_at.is_some()).count() as u64;
    if diverged == config.replicates {
        return Err(Error::AllDiverged {
            replicates: config.replicates,
        });
    }
    if diverged > 0 {
        log::warn!(
            "{diverged} of {} replicates diverged and are excluded from ensemble moments",
            config.replicates
        );
    }

    let mut stats = Vec::with_capacity(checkpoints.len());
    let mut values = Vec::with_capacity(records.len());
    let mut devs = Vec::with_capacity(records.len());
    for (i, &k) in checkpoints.iter().enumerate() {
        values.clear();
        for rec in &records {
            if let Some(s) = rec.samples.get(i) {
                debug_assert_eq!(s.k, k);
                values.push(s.v);
            }
        }
        let n = values.len() as u64;
        if n == 0 {
            stats.push(CheckpointStat {
                k,
                mean_v: f64::NAN,
                stderr_v: f64::NAN,
                n_alive: 0,
            });
            continue;
        }
        let mean = pairwise_sum(&values) / n as f64;
        let stderr = if n >= 2 {
            devs.clear();
            devs.extend(values.iter().map(|v| (v - mean) * (v - mean)));
            let var = pairwise_sum(&devs) / (n as f64 - 1.0);
            (var / n as f64).sqrt()
        } else {
            log::warn!("single alive replicate at checkpoint {k}; standard error reported as 0");
            0.0
        };
        stats.push(CheckpointStat {
            k,
            mean_v: mean,
            stderr_v: stderr,
            n_alive: n,
        });
    }

    Ok(EnsembleSummary {
        schema_version: SCHEMA_VERSION,
        version: version_string(),
        config: config.clone(),
        checkpoints: stats,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Writes the summary as JSON.
pub fn persist(summary: &EnsembleSummary, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, summary).map_err(|e| Error::Schema(e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Reads a summary back, rejecting unknown schema versions and naming any
/// missing field.
pub fn load(path: &Path) -> Result<EnsembleSummary> {
    let file = File::open(path)?;
    let value: Value =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Schema(e.to_string()))?;
    let found = value
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Schema("missing field `schema_version`".into()))?;
    if found as u32 != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: found as u32,
            expected: SCHEMA_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))
}

/// Writes the companion CSV: header `k,mean_V,stderr_V,n_alive`, floating
/// values at 17 significant digits.
pub fn write_csv(summary: &EnsembleSummary, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "k,mean_V,stderr_V,n_alive")?;
    for c in &summary.checkpoints {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{}",
            c.k, c.mean_v, c.stderr_v, c.n_alive
        )?;
    }
    Ok(())
}
