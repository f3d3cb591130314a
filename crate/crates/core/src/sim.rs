//! Episode simulation: Alice's process, Bob's scheduler and controller, and
//! Eve's estimator, stepped together.
//!
//! Conventions:
//! - Bob bootstraps with an update at step 0; its cost is charged.
//! - At an update step Eve first absorbs the interval that just ended, then
//!   Bob picks the next interval (for ADE, using Eve's state as he can
//!   reproduce it).
//! - `leakage(n)` is `L_E(n; D)` after Eve's update at step `n`.
//! - `eve_hit(n)` uses Eve's belief at step `n + D`; the last `D` steps are
//!   scored at the final step instead and flagged `eve_truncated`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::defenses::{ade_rule, pack_policy, weighted_performance, AdeState, ForecastMode, Mode, PdeConfig};
use crate::eavesdropper::{map_state, normalised_leakage, EveEstimator, Observation};
use crate::error::{Error, Result};
use crate::markov::{build_model, steady_state, ControlPlan, MarkovModel, Scenario};
use crate::policy::{
    evaluate_policy, extract_sigma, policy_entropy, solve_goc, solve_periodic, JointPolicy,
    PeriodicSolution, PlannerConfig, SchedulingFunction, DEFAULT_GAMMA,
};
use crate::rng::{episode_rng, sample_categorical, sample_transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Mpi,
    Pp,
    Ade,
    Pde,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [PolicyKind::Mpi, PolicyKind::Pp, PolicyKind::Ade, PolicyKind::Pde];
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Mpi => "mpi",
            PolicyKind::Pp => "pp",
            PolicyKind::Ade => "ade",
            PolicyKind::Pde => "pde",
        })
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mpi" => Ok(PolicyKind::Mpi),
            "pp" => Ok(PolicyKind::Pp),
            "ade" => Ok(PolicyKind::Ade),
            "pde" => Ok(PolicyKind::Pde),
            other => Err(Error::Config(format!("unknown policy kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseParams {
    pub l_low: f64,
    pub l_high: f64,
    pub forecast: ForecastMode,
    /// PDE target entropy as a fraction of the GOC schedule's entropy.
    pub entropy_fraction: f64,
}

impl Default for DefenseParams {
    fn default() -> Self {
        DefenseParams { l_low: 0.4, l_high: 0.6, forecast: ForecastMode::Instant, entropy_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub scenario: Scenario,
    pub num_states: usize,
    pub theta: f64,
    pub beta: f64,
    pub gamma: f64,
    pub t_max: usize,
    pub d_gap: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub policy_kind: PolicyKind,
    pub defense: DefenseParams,
    pub epsilon: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            scenario: Scenario::Estimation,
            num_states: 30,
            theta: 32.0,
            beta: 1.0,
            gamma: DEFAULT_GAMMA,
            t_max: 10,
            d_gap: 5,
            n_steps: 200,
            seed: 0,
            policy_kind: PolicyKind::Mpi,
            defense: DefenseParams::default(),
            epsilon: 0.0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be positive".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config("epsilon must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.defense.entropy_fraction) {
            return Err(Error::Config("entropy_fraction must lie in [0, 1]".into()));
        }
        self.planner()?;
        Ok(())
    }

    pub fn model(&self) -> Result<MarkovModel> {
        build_model(self.theta, self.num_states, self.scenario)
    }

    pub fn planner(&self) -> Result<PlannerConfig> {
        PlannerConfig::new(self.gamma, self.beta, self.t_max)
    }
}

/// The two reference policies every strategy is built from.
#[derive(Debug, Clone)]
pub struct SolvedPolicies {
    pub model: MarkovModel,
    pub planner: PlannerConfig,
    pub goc: JointPolicy,
    pub periodic: PeriodicSolution,
}

/// PDE policy packed from the GOC schedule down to `fraction · H(σ_GOC)`.
pub fn pde_policy(solved: &SolvedPolicies, fraction: f64) -> Result<JointPolicy> {
    let sigma0 = extract_sigma(&solved.goc);
    let target = fraction * policy_entropy(&sigma0);
    let cfg = PdeConfig::new(target, solved.planner.t_max)?;
    Ok(pack_policy(&sigma0, Some(&solved.goc), &cfg, &solved.model, &solved.planner)?.policy)
}

impl SolvedPolicies {
    pub fn solve(model: MarkovModel, planner: PlannerConfig) -> Result<Self> {
        let goc = solve_goc(&model, &planner)?;
        let periodic = solve_periodic(&model, &planner)?;
        Ok(SolvedPolicies { model, planner, goc, periodic })
    }
}

/// Everything Bob and Eve need to run episodes under one policy kind.
#[derive(Debug, Clone)]
pub struct Strategy {
    pub kind: PolicyKind,
    pub model: MarkovModel,
    /// Schedule of regime 0 (the GOC-style regime; the fixed period for PP).
    pub sigma: SchedulingFunction,
    /// Joint policy of regime 0.
    pub policy: JointPolicy,
    /// Control plans per regime; ADE adds the periodic plan as regime 1.
    pub plans: Vec<ControlPlan>,
    pub period: usize,
    pub ade: Option<AdeState>,
    /// Value of the regime-0 policy.
    pub value: f64,
    /// Entropy of the regime-0 schedule.
    pub entropy: f64,
    template: EveEstimator,
}

impl Strategy {
    pub fn build(solved: &SolvedPolicies, kind: PolicyKind, defense: &DefenseParams) -> Result<Self> {
        let policy = match kind {
            PolicyKind::Mpi | PolicyKind::Ade => solved.goc.clone(),
            PolicyKind::Pp => solved.periodic.policy.clone(),
            PolicyKind::Pde => pde_policy(solved, defense.entropy_fraction)?,
        };
        Self::assemble(&solved.model, &solved.planner, kind, policy, &solved.periodic.policy, defense)
    }

    /// Strategy around an already solved regime-0 policy: the GOC policy for
    /// MPI and ADE, the periodic one for PP, the packed one for PDE.
    /// `periodic` supplies ADE's fallback regime and period.
    pub fn assemble(
        model: &MarkovModel,
        planner: &PlannerConfig,
        kind: PolicyKind,
        policy: JointPolicy,
        periodic: &JointPolicy,
        defense: &DefenseParams,
    ) -> Result<Self> {
        let pp_sigma = extract_sigma(periodic);
        if !pp_sigma.is_constant() {
            return Err(Error::domain("periodic policy has a state-dependent interval"));
        }
        let period = pp_sigma.interval(0);
        let (mut plans, ade) = match kind {
            PolicyKind::Ade => {
                let ade = AdeState::new(defense.l_low, defense.l_high, period)?.with_forecast(defense.forecast);
                (vec![periodic.control_plan()], Some(ade))
            }
            _ => (vec![], None),
        };
        let sigma = extract_sigma(&policy);
        plans.insert(0, policy.control_plan());
        let prior = steady_state(model, &plans[0])?;
        let template = EveEstimator::new(model.clone(), sigma.clone(), plans.clone(), prior)?;
        Ok(Strategy {
            kind,
            model: model.clone(),
            value: evaluate_policy(model, &sigma, &policy, planner)?,
            entropy: policy_entropy(&sigma),
            sigma,
            policy,
            plans,
            period,
            ade,
            template,
        })
    }

    pub fn for_config(cfg: &EpisodeConfig) -> Result<Self> {
        cfg.validate()?;
        let solved = SolvedPolicies::solve(cfg.model()?, cfg.planner()?)?;
        Self::build(&solved, cfg.policy_kind, &cfg.defense)
    }

    /// Eve's estimator before the bootstrap update has been interpreted.
    pub fn estimator(&self) -> &EveEstimator {
        &self.template
    }

    fn nominal_mode(&self) -> Mode {
        match self.kind {
            PolicyKind::Pp => Mode::Periodic,
            _ => Mode::Goc,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub n: usize,
    pub s: usize,
    pub a: usize,
    pub c: u8,
    pub r_task: f64,
    pub r_comm: f64,
    pub leakage: f64,
    pub eve_hit: bool,
    pub mode: Mode,
    pub eve_truncated: bool,
}

impl StepRecord {
    pub fn reward(&self) -> f64 {
        self.r_task + self.r_comm
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub mean_leakage: f64,
    pub mean_reward: f64,
    pub mean_task_reward: f64,
    pub eve_accuracy: f64,
    pub transmission_probability: f64,
    pub weighted_performance: f64,
}

impl EpisodeMetrics {
    pub fn from_records(records: &[StepRecord], epsilon: f64) -> Self {
        let n = records.len() as f64;
        let mean = |f: &dyn Fn(&StepRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        EpisodeMetrics {
            mean_leakage: mean(&|r| r.leakage),
            mean_reward: mean(&|r| r.reward()),
            mean_task_reward: mean(&|r| r.r_task),
            eve_accuracy: mean(&|r| f64::from(u8::from(r.eve_hit))),
            transmission_probability: mean(&|r| f64::from(r.c)),
            weighted_performance: weighted_performance(records, epsilon),
        }
    }

    fn fields(&self) -> [f64; 6] {
        [
            self.mean_leakage,
            self.mean_reward,
            self.mean_task_reward,
            self.eve_accuracy,
            self.transmission_probability,
            self.weighted_performance,
        ]
    }

    fn from_fields(f: [f64; 6]) -> Self {
        EpisodeMetrics {
            mean_leakage: f[0],
            mean_reward: f[1],
            mean_task_reward: f[2],
            eve_accuracy: f[3],
            transmission_probability: f[4],
            weighted_performance: f[5],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub records: Vec<StepRecord>,
    pub metrics: EpisodeMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub episodes: usize,
    pub mean: EpisodeMetrics,
    /// Standard error of each mean across episodes (0 for one episode).
    pub std_error: EpisodeMetrics,
    pub per_episode: Vec<EpisodeMetrics>,
}

impl BatchMetrics {
    pub fn aggregate(per_episode: Vec<EpisodeMetrics>) -> Self {
        let k = per_episode.len() as f64;
        let mut mean = [0.0; 6];
        for m in &per_episode {
            for (acc, v) in mean.iter_mut().zip(m.fields()) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= k);
        let mut se = [0.0; 6];
        if per_episode.len() > 1 {
            for m in &per_episode {
                for ((acc, v), mu) in se.iter_mut().zip(m.fields()).zip(mean) {
                    *acc += (v - mu).powi(2);
                }
            }
            se.iter_mut().for_each(|v| *v = (*v / (k - 1.0) / k).sqrt());
        }
        BatchMetrics {
            episodes: per_episode.len(),
            mean: EpisodeMetrics::from_fields(mean),
            std_error: EpisodeMetrics::from_fields(se),
            per_episode,
        }
    }
}

/// Runs one episode of `strategy` with the episode seed `seed`.
pub fn run_strategy(strategy: &Strategy, cfg: &EpisodeConfig, seed: u64, index: u64) -> Result<Episode> {
    let model = &strategy.model;
    let n_steps = cfg.n_steps;
    let gap = cfg.d_gap;
    let mut rng = episode_rng(seed, index);
    let mut est = strategy.template.clone();
    let mut ade = strategy.ade;
    let mut x = sample_categorical(&mut rng, est.prior().probs());
    let mut records: Vec<StepRecord> = Vec::with_capacity(n_steps);
    let mut states = Vec::with_capacity(n_steps);

    let mut renewal = x;
    let mut last_update = 0;
    let mut next_update = 0;
    let mut regime = 0;
    let mut mode = strategy.nominal_mode();
    let mut pending: Option<Observation> = None;

    for n in 0..n_steps {
        let mut c = 0;
        if n == next_update {
            c = 1;
            if let Some(obs) = pending.take() {
                est.observe_with(obs)?;
            }
            let (interval, obs) = match ade.as_mut() {
                Some(state) => {
                    let rule = ade_rule(state, &strategy.sigma, &est, gap)?;
                    let chosen = rule[x];
                    state.mode = chosen.1;
                    mode = chosen.1;
                    regime = usize::from(chosen.1 == Mode::Periodic);
                    let mask = rule.iter().map(|r| *r == chosen).collect();
                    (chosen.0, Observation { interval: chosen.0, regime, mask })
                }
                None => {
                    let tau = strategy.sigma.interval(x);
                    (tau, Observation { interval: tau, regime: 0, mask: est.sigma_mask(tau) })
                }
            };
            renewal = x;
            last_update = n;
            next_update = n + interval;
            pending = Some(obs);
        }
        let a = strategy.plans[regime].action(renewal, n - last_update);
        let window = est.window(n, gap)?;
        let leakage = window.iter().map(normalised_leakage).fold(0.0, f64::max);
        if n >= gap {
            records[n - gap].eve_hit = map_state(&window[gap]) == states[n - gap];
        }
        states.push(x);
        records.push(StepRecord {
            n,
            s: x,
            a,
            c,
            r_task: model.task_reward(x, a),
            r_comm: if c == 1 { -cfg.beta } else { 0.0 },
            leakage,
            eve_hit: false,
            mode,
            eve_truncated: false,
        });
        x = sample_transition(&mut rng, model.transition(a).row(x));
    }

    // score the tail with the observations available at the last step
    let last = n_steps - 1;
    let window = est.window(last, gap)?;
    for (d, belief) in window.iter().enumerate().take(gap.min(n_steps)) {
        let r = &mut records[last - d];
        r.eve_hit = map_state(belief) == states[last - d];
        r.eve_truncated = true;
    }
    let metrics = EpisodeMetrics::from_records(&records, cfg.epsilon);
    Ok(Episode { records, metrics })
}

/// Episode 0 of the batch seeded by `cfg.seed`.
pub fn run_episode(cfg: &EpisodeConfig) -> Result<Episode> {
    let strategy = Strategy::for_config(cfg)?;
    run_strategy(&strategy, cfg, cfg.seed, 0)
}

pub fn run_batch(cfg: &EpisodeConfig, n_episodes: usize) -> Result<BatchMetrics> {
    let strategy = Strategy::for_config(cfg)?;
    run_strategy_batch(&strategy, cfg, n_episodes)
}

/// Episodes `0..n_episodes` of `strategy`, run in parallel and aggregated in
/// index order.
pub fn run_strategy_batch(strategy: &Strategy, cfg: &EpisodeConfig, n_episodes: usize) -> Result<BatchMetrics> {
    if n_episodes == 0 {
        return Err(Error::Config("n_episodes must be positive".into()));
    }
    let per_episode = (0..n_episodes as u64)
        .into_par_iter()
        .map(|i| run_strategy(strategy, cfg, cfg.seed, i).map(|e| e.metrics))
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchMetrics::aggregate(per_episode))
}

pub const CSV_HEADER: [&str; 10] =
    ["n", "s", "a", "c", "r_task", "r_comm", "leakage", "eve_hit", "mode", "eve_truncated"];

/// Per-step CSV in the fixed column order of [`CSV_HEADER`].
pub fn write_records_csv<W: Write>(records: &[StepRecord], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.n.to_string(),
            r.s.to_string(),
            r.a.to_string(),
            r.c.to_string(),
            r.r_task.to_string(),
            r.r_comm.to_string(),
            r.leakage.to_string(),
            u8::from(r.eve_hit).to_string(),
            r.mode.to_string(),
            u8::from(r.eve_truncated).to_string(),
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(kind: PolicyKind) -> EpisodeConfig {
        EpisodeConfig { policy_kind: kind, n_steps: 60, seed: 11, ..EpisodeConfig::default() }
    }

    #[test]
    fn same_seed_same_records() {
        for kind in PolicyKind::ALL {
            let a = run_episode(&short(kind)).unwrap();
            let b = run_episode(&short(kind)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn reward_accounting_identity() {
        let cfg = short(PolicyKind::Ade);
        let ep = run_episode(&cfg).unwrap();
        for r in &ep.records {
            assert_eq!(r.r_comm, -cfg.beta * f64::from(r.c));
            assert!((0.0..=1.0).contains(&r.leakage));
        }
        assert_eq!(ep.records[0].c, 1);
        let tail = ep.records.iter().filter(|r| r.eve_truncated).count();
        assert_eq!(tail, cfg.d_gap);
    }

    #[test]
    fn single_episode_batch_matches_episode() {
        let cfg = short(PolicyKind::Mpi);
        let ep = run_episode(&cfg).unwrap();
        let batch = run_batch(&cfg, 1).unwrap();
        assert_eq!(batch.mean, ep.metrics);
        assert_eq!(batch.std_error, EpisodeMetrics::default());
    }

    #[test]
    fn csv_has_fixed_columns() {
        let ep = run_episode(&short(PolicyKind::Pp)).unwrap();
        let mut buf = Vec::new();
        write_records_csv(&ep.records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "n,s,a,c,r_task,r_comm,leakage,eve_hit,mode,eve_truncated");
        assert_eq!(lines.count(), 60);
    }

    #[test]
    fn policy_kind_round_trip() {
        for kind in PolicyKind::ALL {
            assert_eq!(kind.to_string().parse::<PolicyKind>().unwrap(), kind);
        }
        assert!("xyz".parse::<PolicyKind>().is_err());
    }
}
