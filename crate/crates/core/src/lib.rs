//! Pull-based goal-oriented scheduling of a remote Markov process, an
//! eavesdropper that only sees update timing, and two timing defenses.

pub mod defenses;
pub mod eavesdropper;
pub mod error;
pub mod experiments;
pub mod markov;
pub mod policy;
pub mod rng;
pub mod sim;

pub use defenses::{
    ade_rule, ade_schedule, forecast_leakage, forecast_leakage_with, pack_pde, pack_policy,
    weighted_performance, AdeState, ForecastMode, Mode, PackedPolicy, PackingStep, PdeConfig,
};
pub use eavesdropper::{
    map_state, min_leakage, normalised_leakage, EveEstimator, Observation, SmoothedBelief,
    TimingTrace,
};
pub use error::{Error, Result};
pub use experiments::{
    non_dominated, pareto_sweep, sweep, ParetoRow, ParetoTable, SweepGrid, SweepRow, ADE_BAND,
};
pub use markov::{
    build_model, g_factor, propagate_belief, shannon_entropy, steady_state, BeliefVector,
    ControlPlan, MarkovModel, Scenario, TransitionMatrix, ZetaTable,
};
pub use policy::{
    evaluate_policy, evaluate_values, extract_sigma, optimize_control, policy_entropy,
    reference_distribution, single_state_deviation, solve_goc, solve_periodic, JointPolicy,
    PeriodicSolution, PlannerConfig, PolicyValue, SchedulingFunction, DEFAULT_GAMMA,
};
pub use sim::{
    run_batch, run_episode, run_strategy, run_strategy_batch, write_records_csv, BatchMetrics,
    pde_policy, DefenseParams, Episode, EpisodeConfig, EpisodeMetrics, PolicyKind, SolvedPolicies, StepRecord,
    Strategy,
};
