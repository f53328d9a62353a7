//! Command-line front end: plan rates, run ensembles, fit slopes, verify
//! problem assumptions. Exit codes: 0 success/feasible, 1 usage or parse
//! error, 2 domain infeasibility or failed checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};

use ttsa_core::{
    analysis, harness, planner, problems, AssumptionConstants, DeltaMatrix, Error as CoreError,
    ExperimentConfig, GammaMatrix, ProblemId, RatePlan,
};

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_DOMAIN: u8 = 2;

#[derive(Parser)]
#[command(
    name = "ttsa",
    version,
    about = "Two-time-scale stochastic approximation lab",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Evaluate a convergence-rate plan and its feasibility constants.
    Plan(PlanArgs),
    /// Run a seeded Monte-Carlo ensemble from a config file.
    Run(RunArgs),
    /// Fit a decay law to an ensemble summary.
    Fit(FitArgs),
    /// Check problem assumptions and analytic derivatives empirically.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Residual-power variances with exponents below one.
    State,
    /// Residual-power variances with exponent one (constant steps).
    Quadratic,
    /// Time-decaying variances.
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProblemArg {
    SgdPr,
    Sbo,
}

impl ProblemArg {
    fn id(self) -> ProblemId {
        match self {
            ProblemArg::SgdPr => ProblemId::SgdPr { dim: 5 },
            ProblemArg::Sbo => ProblemId::Sbo,
        }
    }
}

#[derive(Args)]
struct ConstantArgs {
    /// Pull the assumption constants from a bundled problem.
    #[arg(long, value_enum)]
    problem: Option<ProblemArg>,
    #[arg(long, requires_all = ["mu_f", "l_g", "mu_g"])]
    l_f: Option<f64>,
    #[arg(long)]
    mu_f: Option<f64>,
    #[arg(long)]
    l_g: Option<f64>,
    #[arg(long)]
    mu_g: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    l_lambda: f64,
}

impl ConstantArgs {
    fn resolve(&self) -> Result<AssumptionConstants, CliFailure> {
        if let Some(p) = self.problem {
            if self.l_f.is_some() {
                return Err(CliFailure::usage(
                    "give either --problem or explicit constants, not both",
                ));
            }
            return Ok(p.id().build()?.consts);
        }
        match (self.l_f, self.mu_f, self.l_g, self.mu_g) {
            (Some(lf), Some(muf), Some(lg), Some(mug)) => {
                Ok(AssumptionConstants::new(self.l_lambda, lf, muf, lg, mug)?)
            }
            _ => Err(CliFailure::usage(
                "constants required: --problem or all of --l-f --mu-f --l-g --mu-g",
            )),
        }
    }
}

#[derive(Args)]
struct PlanArgs {
    /// Which noise regime the plan targets.
    #[arg(long, value_enum)]
    mode: Mode,
    /// Uniform residual exponent (state mode).
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    delta11: Option<f64>,
    #[arg(long)]
    delta12: Option<f64>,
    #[arg(long)]
    delta21: Option<f64>,
    #[arg(long)]
    delta22: Option<f64>,
    /// Uniform variance scale.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    gamma11: Option<f64>,
    #[arg(long)]
    gamma12: Option<f64>,
    #[arg(long)]
    gamma21: Option<f64>,
    #[arg(long)]
    gamma22: Option<f64>,
    /// Fast decay exponent of the noise (time mode).
    #[arg(long)]
    gamma1: Option<f64>,
    /// Slow decay exponent of the noise (time mode).
    #[arg(long)]
    gamma2: Option<f64>,
    /// Fast step scale (full plans).
    #[arg(long)]
    alpha: Option<f64>,
    /// Slow step scale (full plans).
    #[arg(long)]
    beta: Option<f64>,
    /// Initial Lyapunov value (full plans).
    #[arg(long)]
    v0: Option<f64>,
    /// Step ratio alpha/beta (quadratic mode).
    #[arg(long)]
    omega: Option<f64>,
    /// Largest slow step considered (quadratic mode).
    #[arg(long, default_value_t = 0.01)]
    beta_cap: f64,
    /// Report violated constraints without failing the exit code.
    #[arg(long)]
    practical: bool,
    /// Override the shift k0 (practical mode).
    #[arg(long)]
    k0: Option<f64>,
    #[command(flatten)]
    constants: ConstantArgs,
    /// Directory for plan.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    replicates: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "TTSA_THREADS")]
    threads: Option<usize>,
    /// Output directory for the summary JSON/CSV pair.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FitKind {
    Loglog,
    Semilog,
}

#[derive(Args)]
struct FitArgs {
    /// Ensemble summary JSON.
    #[arg(long)]
    summary: PathBuf,
    #[arg(long, value_enum, default_value_t = FitKind::Loglog)]
    kind: FitKind,
    /// Window lower bound (default 1e5, matching the slope protocol).
    #[arg(long, default_value_t = 1e5)]
    k_min: f64,
    /// Window upper bound (default: last checkpoint).
    #[arg(long)]
    k_max: Option<f64>,
    /// Directory for fit.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    problem: ProblemArg,
    /// Half-width of the sampling box.
    #[arg(long, default_value_t = 0.0)]
    r#box: f64,
    /// Random pairs per assumption inequality.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Random points for the derivative check.
    #[arg(long, default_value_t = 1_000)]
    grad_points: usize,
    /// Centered-difference step.
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 20_240_811)]
    seed: u64,
    /// Print worst ratios but exit 0 regardless.
    #[arg(long)]
    report_only: bool,
}

/// A failure with the exit code it maps to.
struct CliFailure {
    message: String,
    code: u8,
}

impl CliFailure {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            message: msg.into(),
            code: EXIT_USAGE,
        }
    }
}

impl From<CoreError> for CliFailure {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::Infeasible { .. }
            | CoreError::Precondition(_)
            | CoreError::Diverged { .. }
            | CoreError::AllDiverged { .. }
            | CoreError::InsufficientData(_) => EXIT_DOMAIN,
            _ => EXIT_USAGE,
        };
        Self {
            message: e.to_string(),
            code,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::from(EXIT_OK);
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = match cli.command {
        Command::Plan(args) => cmd_plan(args),
        Command::Run(args) => cmd_run(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn uniform_or_parts(
    uniform: Option<f64>,
    parts: [Option<f64>; 4],
    default: f64,
) -> Result<(f64, f64, f64, f64), CliFailure> {
    if uniform.is_some() && parts.iter().any(Option::is_some) {
        return Err(CliFailure::usage(
            "give a uniform value or individual entries, not both",
        ));
    }
    if let Some(u) = uniform {
        return Ok((u, u, u, u));
    }
    Ok((
        parts[0].unwrap_or(default),
        parts[1].unwrap_or(default),
        parts[2].unwrap_or(default),
        parts[3].unwrap_or(default),
    ))
}

fn write_json(
    dir: &Path,
    name: &str,
    value: &impl serde::Serialize,
) -> Result<PathBuf, CliFailure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliFailure::usage(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliFailure::usage(format!("serialization failed: {e}")))?;
    std::fs::write(&path, text + "\n")
        .map_err(|e| CliFailure::usage(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn print_plan(plan: &RatePlan) {
    match (plan.rate, plan.epsilon) {
        (Some(r), _) => println!("a = {:.4}, t = {:.4}", r.a, r.t),
        (None, Some(eps)) => {
            println!("beta* = {:.6e}, epsilon = {:.6e}", plan.schedule.beta, eps)
        }
        (None, None) => println!("no rate: plan infeasible"),
    }
    println!(
        "schedule: alpha = {}, beta = {}, a = {}, b = {}, k0 = {}",
        plan.schedule.alpha, plan.schedule.beta, plan.schedule.a, plan.schedule.b, plan.schedule.k0
    );
    if let Some(m) = plan.m_bound {
        println!("M = {m:.6e}");
    }
    println!(
        "constants: {}",
        serde_json::to_string(&plan.constants).unwrap_or_else(|_| "{}".into())
    );
    if plan.feasible {
        println!("feasible: yes");
    } else {
        println!("feasible: no");
        for v in &plan.violations {
            println!("  violated: {v}");
        }
    }
}

fn cmd_plan(args: PlanArgs) -> Result<u8, CliFailure> {
    let delta_given = args.delta.is_some()
        || [args.delta11, args.delta12, args.delta21, args.delta22]
            .iter()
            .any(Option::is_some);
    let time_given = args.gamma1.is_some() || args.gamma2.is_some();

    let mut plan = match args.mode {
        Mode::State => {
            if time_given {
                return Err(CliFailure::usage("--gamma1/--gamma2 belong to --mode time"));
            }
            let (d11, d12, d21, d22) = uniform_or_parts(
                args.delta,
                [args.delta11, args.delta12, args.delta21, args.delta22],
                0.0,
            )?;
            let delta = DeltaMatrix { d11, d12, d21, d22 };
            match (args.alpha, args.beta, args.v0) {
                (Some(alpha), Some(beta), Some(v0)) => {
                    let (g11, g12, g21, g22) = uniform_or_parts(
                        args.gamma,
                        [args.gamma11, args.gamma12, args.gamma21, args.gamma22],
                        0.0,
                    )?;
                    let gamma = GammaMatrix { g11, g12, g21, g22 };
                    let consts = args.constants.resolve()?;
                    planner::state_noise_plan(&consts, &gamma, &delta, alpha, beta, v0)?
                }
                (None, None, _) => {
                    // rate-only query
                    let rate = planner::solve_rate_state(&delta)?;
                    println!("a = {:.4}, t = {:.4}", rate.a, rate.t);
                    return Ok(EXIT_OK);
                }
                _ => {
                    return Err(CliFailure::usage(
                        "full state plan needs --alpha, --beta and --v0 together",
                    ))
                }
            }
        }
        Mode::Quadratic => {
            if delta_given || time_given {
                return Err(CliFailure::usage(
                    "quadratic mode fixes delta = 1; drop --delta/--gamma1/--gamma2",
                ));
            }
            let omega = args
                .omega
                .ok_or_else(|| CliFailure::usage("quadratic mode needs --omega"))?;
            let (g11, g12, g21, g22) = uniform_or_parts(
                args.gamma,
                [args.gamma11, args.gamma12, args.gamma21, args.gamma22],
                0.0,
            )?;
            let gamma = GammaMatrix { g11, g12, g21, g22 };
            let consts = args.constants.resolve()?;
            planner::exponential_plan(&consts, &gamma, omega, args.beta_cap)?
        }
        Mode::Time => {
            if delta_given {
                return Err(CliFailure::usage("--delta belongs to --mode state"));
            }
            let g1 = args.gamma1.unwrap_or(0.0);
            let g2 = args.gamma2.unwrap_or(0.0);
            match (args.alpha, args.beta, args.v0) {
                (Some(alpha), Some(beta), Some(v0)) => planner::time_noise_plan(
                    &args.constants.resolve()?,
                    args.gamma11.or(args.gamma).unwrap_or(0.0),
                    args.gamma22.or(args.gamma).unwrap_or(0.0),
                    g1,
                    g2,
                    alpha,
                    beta,
                    v0,
                )?,
                (None, None, _) => {
                    let rate = planner::solve_rate_time(g1, g2)?;
                    println!("a = {:.4}, t = {:.4}", rate.a, rate.t);
                    return Ok(EXIT_OK);
                }
                _ => {
                    return Err(CliFailure::usage(
                        "full time plan needs --alpha, --beta and --v0 together",
                    ))
                }
            }
        }
    };

    if let Some(k0) = args.k0 {
        if !args.practical {
            return Err(CliFailure::usage("--k0 overrides require --practical"));
        }
        if let Some(k0_min) = plan.constants.k0_min {
            if k0 < k0_min {
                plan.violations
                    .push(format!("k0 = {k0} below the guarantee bound {k0_min}"));
                plan.feasible = false;
            }
        }
        plan.schedule.k0 = k0;
    }

    print_plan(&plan);
    if let Some(dir) = &args.out {
        let path = write_json(dir, "plan.json", &plan)?;
        println!("wrote {}", path.display());
    }
    if plan.feasible || args.practical {
        Ok(EXIT_OK)
    } else {
        Ok(EXIT_DOMAIN)
    }
}

fn cmd_run(args: RunArgs) -> Result<u8, CliFailure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliFailure::usage(format!("cannot read {}: {e}", args.config.display())))?;
    let mut config: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| CliFailure::usage(format!("config parse error: {e}")))?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(iters) = args.iterations {
        config.iterations = iters;
        if let Some(cps) = &mut config.checkpoints {
            cps.retain(|&k| k <= iters);
        }
    }
    if let Some(reps) = args.replicates {
        config.replicates = reps;
    }
    config.validate()?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(threads) = args.threads {
        pool = pool.num_threads(threads);
    }
    let pool = pool
        .build()
        .map_err(|e| CliFailure::usage(format!("cannot build thread pool: {e}")))?;
    let summary = pool.install(|| harness::run_ensemble(&config))?;

    let stem = args
        .config
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("run")
        .to_string();
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliFailure::usage(format!("cannot create {}: {e}", args.out.display())))?;
    let json_path = args.out.join(format!("{stem}.summary.json"));
    let csv_path = args.out.join(format!("{stem}.summary.csv"));
    harness::persist(&summary, &json_path)?;
    harness::write_csv(&summary, &csv_path)?;

    let last = summary.checkpoints.last().expect("at least one checkpoint");
    println!(
        "final mean_V = {:.6e} at k = {} | wall {:.2}s | diverged {} of {} | wrote {} and {}",
        last.mean_v,
        last.k,
        summary.wall_time_s,
        summary.diverged(),
        config.replicates,
        json_path.display(),
        csv_path.display(),
    );
    Ok(EXIT_OK)
}

fn cmd_fit(args: FitArgs) -> Result<u8, CliFailure> {
    let summary = harness::load(&args.summary)?;
    let k_max = args
        .k_max
        .unwrap_or_else(|| summary.checkpoints.last().map_or(0.0, |c| c.k as f64));
    let fit = match args.kind {
        FitKind::Loglog => analysis::fit_loglog(&summary, args.k_min, k_max)?,
        FitKind::Semilog => analysis::fit_semilog(&summary, args.k_min, k_max)?,
    };
    let text = serde_json::to_string_pretty(&fit)
        .map_err(|e| CliFailure::usage(format!("serialization failed: {e}")))?;
    println!("{text}");
    match args.kind {
        FitKind::Loglog => println!("decay exponent estimate: {:.4}", -fit.slope),
        FitKind::Semilog => println!("contraction estimate: {:.6e}", -fit.slope),
    }
    if let Some(dir) = &args.out {
        let path = write_json(dir, "fit.json", &fit)?;
        println!("wrote {}", path.display());
    }
    Ok(EXIT_OK)
}

fn cmd_verify(args: VerifyArgs) -> Result<u8, CliFailure> {
    let id = args.problem.id();
    let problem = id.build()?;
    let default_box = match args.problem {
        ProblemArg::SgdPr => 5.0,
        ProblemArg::Sbo => 3.0,
    };
    let halfwidth = if args.r#box > 0.0 {
        args.r#box
    } else {
        default_box
    };

    let report = problems::verify_constants(&problem, halfwidth, args.samples, args.seed)?;
    println!(
        "assumption checks on {} (box {halfwidth}, {} pairs):",
        report.problem, args.samples
    );
    let mut failed = false;
    for c in &report.checks {
        println!(
            "  {}: worst ratio {:.6} [{}]{}",
            c.name,
            c.worst_ratio,
            if c.pass { "ok" } else { "VIOLATED" },
            if c.pass {
                String::new()
            } else {
                format!(" witness {}", c.witness)
            },
        );
        failed |= !c.pass;
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed ^ 0x5eed);
    let points: Vec<(Vec<f64>, Vec<f64>)> = (0..args.grad_points)
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
    let grad = analysis::grad_check(&problem, &points, args.h)?;
    println!(
        "derivative check at {} points, h = {:e}: max relative error {:.3e}",
        args.grad_points, args.h, grad.max_rel_error
    );
    for (name, err) in &grad.per_check {
        println!("  {name}: {err:.3e}");
    }
    let grad_ok = grad.max_rel_error <= 1e-5;
    failed |= !grad_ok;

    if failed && !args.report_only {
        eprintln!("verification failed");
        return Ok(EXIT_DOMAIN);
    }
    Ok(EXIT_OK)
}
