//! Laboratory for coupled fast/slow stochastic approximation: the coupled
//! iteration and its Lyapunov function, calibrated state- and time-dependent
//! noise generators, exact rate planning from the drift constants, seeded
//! Monte-Carlo ensembles, and slope-fitting analysis.

pub mod analysis;
pub mod error;
pub mod harness;
pub mod noise;
pub mod planner;
pub mod problems;
pub mod sa;
pub mod schedule;

pub use analysis::{check_drift_bound, fit_loglog, fit_semilog, grad_check, FitResult};
pub use error::{Error, Result};
pub use harness::{
    default_checkpoints, load, persist, run_ensemble, run_trajectory, write_csv, EnsembleSummary,
    ExperimentConfig, Init, InitValue,
};
pub use noise::{sample, target_variances, DeltaMatrix, GammaMatrix, NoiseSpec, RngStream};
pub use planner::{
    drift_constant, exponential_plan, m_envelope, rate_state_closed_form, solve_rate_state,
    solve_rate_time, state_noise_plan, time_noise_plan, AssumptionConstants, PlanMode, RatePair,
    RatePlan,
};
pub use problems::{htilde2, make_sbo, make_sgd_pr, verify_constants, ProblemId, ProblemSpec};
pub use sa::{lyapunov, residuals, step, IterateState, LyapunovValue, Residuals};
pub use schedule::{step_sizes, StepSchedule};
