//! Shared fixtures for the benches in `benches/`.

use gocleak_core::{extract_sigma, solve_goc, EpisodeConfig, EveEstimator, JointPolicy, MarkovModel, PlannerConfig, Scenario};

/// Reference setting: 30 states, θ=32, β=1, T_max=10.
pub fn reference(scenario: Scenario) -> EpisodeConfig {
    EpisodeConfig { scenario, ..EpisodeConfig::default() }
}

pub fn solved(scenario: Scenario) -> (MarkovModel, PlannerConfig, JointPolicy) {
    let cfg = reference(scenario);
    let model = cfg.model().expect("reference model");
    let planner = cfg.planner().expect("reference planner");
    let policy = solve_goc(&model, &planner).expect("reference policy");
    (model, planner, policy)
}

/// Estimator that has seen `updates` intervals cycling through the
/// schedule's distinct values.
pub fn observed_estimator(scenario: Scenario, updates: usize) -> EveEstimator {
    let (model, _, policy) = solved(scenario);
    let mut est = EveEstimator::for_policy(&model, &policy).expect("estimator");
    let mut intervals = extract_sigma(&policy).intervals().to_vec();
    intervals.sort_unstable();
    intervals.dedup();
    for k in 0..updates {
        est.observe(intervals[k % intervals.len()]).expect("interval is in the schedule");
    }
    est
}
