//! Timing defenses: the alternating defense (ADE), which falls back to a
//! periodic schedule while Eve's forecast leakage is high, and the packing
//! defense (PDE), which lowers the entropy of the schedule offline.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eavesdropper::{EveEstimator, Observation};
use crate::error::{Error, Result};
use crate::markov::MarkovModel;
use crate::policy::search::{best_cycle, evaluate_cycles, Cycle, Horizon};
use crate::policy::{
    optimize_control, policy_entropy, reference_distribution, single_state_deviation, JointPolicy,
    PlannerConfig, SchedulingFunction,
};
use crate::sim::StepRecord;

/// Entropy differences below this are treated as ties.
const ENTROPY_EPS: f64 = 1e-12;

/// ADE's flag: which schedule drives the next interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Goc,
    Periodic,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Goc => "goc",
            Mode::Periodic => "periodic",
        })
    }
}

/// When the forecast leakage of a planned interval is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMode {
    /// At the instant the planned update would arrive.
    #[default]
    Instant,
    /// Maximum over every step of the planned interval.
    IntervalMax,
}

impl FromStr for ForecastMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "instant" => Ok(ForecastMode::Instant),
            "interval_max" => Ok(ForecastMode::IntervalMax),
            other => Err(Error::Config(format!("unknown forecast mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdeState {
    pub mode: Mode,
    pub l_low: f64,
    pub l_high: f64,
    /// Period used while in periodic mode.
    pub period: usize,
    pub forecast: ForecastMode,
}

impl AdeState {
    pub fn new(l_low: f64, l_high: f64, period: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&l_low) || !(l_low < l_high && l_high <= 1.0) {
            return Err(Error::domain(format!(
                "thresholds must satisfy 0 <= l_low < l_high <= 1 (got {l_low}, {l_high})"
            )));
        }
        if period == 0 {
            return Err(Error::domain("period must be positive"));
        }
        Ok(AdeState { mode: Mode::Goc, l_low, l_high, period, forecast: ForecastMode::Instant })
    }

    pub fn with_forecast(mut self, forecast: ForecastMode) -> Self {
        self.forecast = forecast;
        self
    }

    /// Alg. 1 given the forecast leakage of the interval the current mode
    /// would consider: `σ(s)` in GOC mode, `T` in periodic mode.
    pub fn decide(&self, sigma_s: usize, forecast: f64) -> (usize, Mode) {
        match self.mode {
            Mode::Goc if forecast >= self.l_high => (self.period, Mode::Periodic),
            Mode::Goc => (sigma_s, Mode::Goc),
            Mode::Periodic if forecast < self.l_low => (sigma_s, Mode::Goc),
            Mode::Periodic => (self.period, Mode::Periodic),
        }
    }
}

/// Leakage Eve would reach if `obs` were the next observed interval.
pub fn forecast_leakage_with(
    est: &EveEstimator,
    obs: Observation,
    gap: usize,
    mode: ForecastMode,
) -> Result<f64> {
    let start = est.last_transmission();
    let end = start + obs.interval;
    let mut future = est.clone();
    future.observe_with(obs)?;
    match mode {
        ForecastMode::Instant => future.leakage(end, gap),
        ForecastMode::IntervalMax => (start + 1..=end)
            .map(|n| future.leakage(n, gap))
            .try_fold(0.0, |acc, l| l.map(|l| f64::max(acc, l))),
    }
}

/// Forecast for an interval emitted by the known schedule `σ`.
pub fn forecast_leakage(est: &EveEstimator, planned_interval: usize, gap: usize) -> Result<f64> {
    let mask = est.sigma_mask(planned_interval);
    forecast_leakage_with(
        est,
        Observation { interval: planned_interval, regime: 0, mask },
        gap,
        ForecastMode::Instant,
    )
}

fn periodic_regime(est: &EveEstimator) -> usize {
    usize::from(est.num_regimes() > 1)
}

/// What ADE would emit from every possible renewal state, given the timing
/// Eve has seen so far. Eve can compute this too, which is what lets her
/// interpret an ADE interval exactly.
pub fn ade_rule(ade: &AdeState, sigma: &SchedulingFunction, est: &EveEstimator, gap: usize) -> Result<Vec<(usize, Mode)>> {
    let n = sigma.num_states();
    match ade.mode {
        Mode::Goc => {
            let mut cache: HashMap<usize, f64> = HashMap::new();
            sigma
                .intervals()
                .iter()
                .map(|&tau| {
                    let forecast = match cache.get(&tau) {
                        Some(&f) => f,
                        None => {
                            let obs = Observation { interval: tau, regime: 0, mask: est.sigma_mask(tau) };
                            // an interval Eve already rules out can only come from a
                            // state she gives zero weight; its rule is irrelevant
                            let f = match forecast_leakage_with(est, obs, gap, ade.forecast) {
                                Err(Error::InconsistentTiming { .. }) => 1.0,
                                other => other?,
                            };
                            cache.insert(tau, f);
                            f
                        }
                    };
                    Ok(ade.decide(tau, forecast))
                })
                .collect()
        }
        Mode::Periodic => {
            let obs = Observation {
                interval: ade.period,
                regime: periodic_regime(est),
                mask: vec![true; n],
            };
            let forecast = forecast_leakage_with(est, obs, gap, ade.forecast)?;
            Ok(sigma.intervals().iter().map(|&tau| ade.decide(tau, forecast)).collect())
        }
    }
}

/// Alg. 1 for renewal state `s`; updates `ade.mode` and returns the next
/// interval and the mode that produced it.
pub fn ade_schedule(
    s: usize,
    ade: &mut AdeState,
    sigma: &SchedulingFunction,
    est: &EveEstimator,
    gap: usize,
) -> Result<(usize, Mode)> {
    let decision = ade_rule(ade, sigma, est, gap)?[s];
    ade.mode = decision.1;
    Ok(decision)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeConfig {
    pub target_entropy: f64,
    pub t_max: usize,
}

impl PdeConfig {
    pub fn new(target_entropy: f64, t_max: usize) -> Result<Self> {
        if !(target_entropy >= 0.0) || t_max == 0 {
            return Err(Error::domain("target entropy must be nonnegative and t_max positive"));
        }
        Ok(PdeConfig { target_entropy, t_max })
    }
}

/// One accepted packing step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PackingStep {
    pub state: usize,
    pub interval: usize,
    pub entropy: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackedPolicy {
    pub sigma: SchedulingFunction,
    pub policy: JointPolicy,
    pub value: f64,
    pub steps: Vec<PackingStep>,
}

/// Alg. 2: packs `sigma0` until its entropy reaches `cfg.target_entropy`.
pub fn pack_pde(
    sigma0: &SchedulingFunction,
    cfg: &PdeConfig,
    model: &MarkovModel,
    planner: &PlannerConfig,
) -> Result<SchedulingFunction> {
    Ok(pack_policy(sigma0, None, cfg, model, planner)?.sigma)
}

/// Packing with the control map re-derived along the way. `warm` seeds
/// Bob's control for `sigma0` (typically the GOC policy itself).
///
/// Each candidate deviation re-optimises the deviating state's cycle against
/// the current values and is then evaluated exactly; after a step is
/// accepted, control for the whole schedule is re-optimised.
pub fn pack_policy(
    sigma0: &SchedulingFunction,
    warm: Option<&JointPolicy>,
    cfg: &PdeConfig,
    model: &MarkovModel,
    planner: &PlannerConfig,
) -> Result<PackedPolicy> {
    if sigma0.t_max() != cfg.t_max || planner.t_max != cfg.t_max {
        return Err(Error::domain("packing horizon differs from the schedule's t_max"));
    }
    let n = model.num_states();
    let mu = reference_distribution(model, planner.t_max)?;
    let summary = |values: &[f64]| -> f64 {
        mu.probs().iter().zip(values).map(|(m, j)| m * (j - planner.beta)).sum()
    };
    let mut sigma = sigma0.clone();
    let mut policy = optimize_control(model, &sigma, warm, planner)?;
    let mut cycles = policy.cycles(&sigma);
    let mut values = evaluate_cycles(model, &cycles, planner.gamma, planner.beta)?;
    let mut entropy = policy_entropy(&sigma);
    let mut steps = Vec::new();

    while entropy > cfg.target_entropy {
        let cont: Vec<f64> = values.iter().map(|v| v - planner.beta).collect();
        let candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|s| (1..=cfg.t_max).map(move |tau| (s, tau)))
            .filter(|&(s, tau)| tau != sigma.interval(s))
            .filter(|&(s, tau)| {
                let dev = single_state_deviation(&sigma, s, tau).expect("valid deviation");
                policy_entropy(&dev) < entropy - ENTROPY_EPS
            })
            .collect();
        let scored: Vec<Result<(f64, Cycle)>> = candidates
            .par_iter()
            .map(|&(s, tau)| {
                let found = best_cycle(model, s, &cont, planner.gamma, Horizon::Fixed(tau), None);
                let mut trial = cycles.clone();
                trial[s] = found.cycle.clone();
                let v = evaluate_cycles(model, &trial, planner.gamma, planner.beta)?;
                Ok((summary(&v), found.cycle))
            })
            .collect();
        let mut best: Option<(usize, f64, Cycle)> = None;
        for (i, r) in scored.into_iter().enumerate() {
            let (value, cycle) = r?;
            if best.as_ref().map_or(true, |b| value > b.1) {
                best = Some((i, value, cycle));
            }
        }
        let Some((i, _, _)) = best else { break };
        let (s_star, tau) = candidates[i];
        sigma = single_state_deviation(&sigma, s_star, tau)?;
        policy = optimize_control(model, &sigma, Some(&policy), planner)?;
        cycles = policy.cycles(&sigma);
        values = evaluate_cycles(model, &cycles, planner.gamma, planner.beta)?;
        entropy = policy_entropy(&sigma);
        steps.push(PackingStep { state: s_star, interval: tau, entropy, value: summary(&values) });
    }
    let value = summary(&values);
    Ok(PackedPolicy { sigma, policy, value, steps })
}

/// `Σ_n R(n) − ε L_E(n; D)` over an episode; the leakage column already
/// carries the episode's opacity gap.
pub fn weighted_performance(records: &[StepRecord], epsilon: f64) -> f64 {
    records.iter().map(|r| r.r_task + r.r_comm - epsilon * r.leakage).sum()
}
