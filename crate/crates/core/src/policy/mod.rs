//! Joint scheduling/control policies: the optimal goal-oriented policy, the
//! best periodic policy, exact evaluation and scheduling-entropy tools.

pub(crate) mod search;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{entropy_bits, steady_state, BeliefVector, ControlPlan, MarkovModel};
use search::{complete_actions, evaluate_cycles, policy_iteration, Cycle, Horizon};

/// Discount used when none is configured.
pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_VALUE_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MAX_ITERATIONS: usize = 100_000;

/// `⟨γ, β, T_max⟩` plus solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub gamma: f64,
    pub beta: f64,
    pub t_max: usize,
    pub value_tolerance: f64,
    pub max_iterations: usize,
}

impl PlannerConfig {
    pub fn new(gamma: f64, beta: f64, t_max: usize) -> Result<Self> {
        let cfg = PlannerConfig {
            gamma,
            beta,
            t_max,
            value_tolerance: DEFAULT_VALUE_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::domain(format!("discount {} must lie in [0, 1)", self.gamma)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::domain(format!("transmission cost {} must be nonnegative", self.beta)));
        }
        if self.t_max == 0 {
            return Err(Error::domain("t_max must be positive"));
        }
        if !(self.value_tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::domain("tolerance and iteration cap must be positive"));
        }
        Ok(())
    }
}

/// `σ`: inter-update interval chosen after each reported state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SchedulingFunction {
    t_max: usize,
    intervals: Vec<usize>,
}

impl SchedulingFunction {
    pub fn new(intervals: Vec<usize>, t_max: usize) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::domain("scheduling function over an empty state space"));
        }
        if let Some(bad) = intervals.iter().find(|&&t| t == 0 || t > t_max) {
            return Err(Error::domain(format!("interval {bad} outside 1..={t_max}")));
        }
        Ok(SchedulingFunction { t_max, intervals })
    }

    pub fn constant(num_states: usize, interval: usize, t_max: usize) -> Result<Self> {
        Self::new(vec![interval; num_states], t_max)
    }

    pub fn interval(&self, s: usize) -> usize {
        self.intervals[s]
    }

    pub fn intervals(&self) -> &[usize] {
        &self.intervals
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn num_states(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_constant(&self) -> bool {
        self.intervals.windows(2).all(|w| w[0] == w[1])
    }
}

/// `ψ` (update requests) and `π` (actions) over `(s, Δ)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointPolicy {
    t_max: usize,
    /// `transmit[s][Δ − 1]` for `Δ = 1..=t_max`.
    transmit: Vec<Vec<bool>>,
    /// `control[s][Δ]` for `Δ = 0..t_max`.
    control: Vec<Vec<usize>>,
}

/// On-disk layout of a policy.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    t_max: usize,
    sigma: Vec<usize>,
    psi: Vec<Vec<u8>>,
    pi: Vec<Vec<usize>>,
}

impl JointPolicy {
    pub fn new(t_max: usize, transmit: Vec<Vec<bool>>, control: Vec<Vec<usize>>) -> Result<Self> {
        if t_max == 0 || transmit.is_empty() || transmit.len() != control.len() {
            return Err(Error::domain("policy maps must cover the same nonempty state space"));
        }
        for (s, (psi, pi)) in transmit.iter().zip(&control).enumerate() {
            if psi.len() != t_max || pi.len() != t_max {
                return Err(Error::domain(format!("policy rows for state {s} must have {t_max} entries")));
            }
            if !psi[t_max - 1] {
                return Err(Error::domain(format!("state {s} does not transmit at Δ = t_max")));
            }
        }
        Ok(JointPolicy { t_max, transmit, control })
    }

    /// Requests an update exactly from `Δ = σ(s)` on.
    pub fn from_schedule(sigma: &SchedulingFunction, control: Vec<Vec<usize>>) -> Result<Self> {
        let t_max = sigma.t_max();
        let transmit = sigma
            .intervals()
            .iter()
            .map(|&tau| (1..=t_max).map(|d| d >= tau).collect())
            .collect();
        Self::new(t_max, transmit, control)
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn num_states(&self) -> usize {
        self.control.len()
    }

    /// `ψ(s, Δ)` for `Δ ≥ 1`.
    pub fn transmit(&self, s: usize, delta: usize) -> bool {
        delta >= 1 && self.transmit[s][(delta - 1).min(self.t_max - 1)]
    }

    pub fn control(&self, s: usize, delta: usize) -> usize {
        self.control[s][delta.min(self.t_max - 1)]
    }

    pub fn control_rows(&self) -> &[Vec<usize>] {
        &self.control
    }

    /// The control map as a plan renewing on this policy's own schedule.
    pub fn control_plan(&self) -> ControlPlan {
        ControlPlan::new(self.control.clone(), extract_sigma(self).intervals)
            .expect("policy invariants imply a valid plan")
    }

    pub fn to_json(&self) -> String {
        let file = PolicyFile {
            t_max: self.t_max,
            sigma: extract_sigma(self).intervals,
            psi: self
                .transmit
                .iter()
                .map(|row| row.iter().map(|&b| u8::from(b)).collect())
                .collect(),
            pi: self.control.clone(),
        };
        serde_json::to_string_pretty(&file).expect("policy serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PolicyFile =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("policy file: {e}")))?;
        if file.psi.iter().flatten().any(|&b| b > 1) {
            return Err(Error::Config("psi entries must be 0 or 1".into()));
        }
        let transmit = file
            .psi
            .iter()
            .map(|row| row.iter().map(|&b| b == 1).collect())
            .collect();
        let policy = JointPolicy::new(file.t_max, transmit, file.pi)?;
        if extract_sigma(&policy).intervals != file.sigma {
            return Err(Error::Config("sigma disagrees with psi".into()));
        }
        Ok(policy)
    }

    pub(crate) fn cycles(&self, sigma: &SchedulingFunction) -> Vec<Cycle> {
        sigma
            .intervals()
            .iter()
            .zip(&self.control)
            .map(|(&tau, row)| Cycle { interval: tau, actions: row[..tau].to_vec() })
            .collect()
    }

    pub(crate) fn from_cycles(model: &MarkovModel, cycles: &[Cycle], t_max: usize) -> Self {
        let sigma = SchedulingFunction {
            t_max,
            intervals: cycles.iter().map(|c| c.interval).collect(),
        };
        let control = cycles
            .iter()
            .enumerate()
            .map(|(s, c)| complete_actions(model, s, c, t_max))
            .collect();
        JointPolicy::from_schedule(&sigma, control).expect("cycles respect the horizon")
    }
}

/// `σ(s) = inf{Δ ≥ 1 : ψ(s, Δ) = 1}`.
pub fn extract_sigma(policy: &JointPolicy) -> SchedulingFunction {
    let intervals = policy
        .transmit
        .iter()
        .map(|row| row.iter().position(|&b| b).map_or(policy.t_max, |i| i + 1))
        .collect();
    SchedulingFunction { t_max: policy.t_max, intervals }
}

/// Entropy (bits) of the distribution of `σ` values across states.
pub fn policy_entropy(sigma: &SchedulingFunction) -> f64 {
    let n = sigma.num_states() as f64;
    let mut counts = vec![0usize; sigma.t_max() + 1];
    for &t in sigma.intervals() {
        counts[t] += 1;
    }
    let p: Vec<f64> = counts.iter().filter(|&&c| c > 0).map(|&c| c as f64 / n).collect();
    entropy_bits(&p)
}

/// `ξ_σ^{(s*, τ)}`: `sigma` with the interval of `s_star` replaced by `tau`.
pub fn single_state_deviation(
    sigma: &SchedulingFunction,
    s_star: usize,
    tau: usize,
) -> Result<SchedulingFunction> {
    if s_star >= sigma.num_states() {
        return Err(Error::domain(format!("state {s_star} out of range")));
    }
    if tau == 0 || tau > sigma.t_max() {
        return Err(Error::domain(format!("interval {tau} outside 1..={}", sigma.t_max())));
    }
    let mut out = sigma.clone();
    out.intervals[s_star] = tau;
    Ok(out)
}

/// Steady state of the uncontrolled process; the start distribution used to
/// summarise a policy's value as one number.
pub fn reference_distribution(model: &MarkovModel, t_max: usize) -> Result<BeliefVector> {
    steady_state(model, &ControlPlan::passive(model.num_states(), t_max))
}

/// Per-renewal-state values and their summary.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValue {
    /// `J(s)`: value right after state `s` was reported, excluding that update's cost.
    pub per_state: Vec<f64>,
    /// `Σ_s μ_ref(s) (J(s) − β)`: value of an episode opened by an update.
    pub expected: f64,
}

fn summarise(model: &MarkovModel, values: Vec<f64>, cfg: &PlannerConfig) -> Result<PolicyValue> {
    let mu = reference_distribution(model, cfg.t_max)?;
    let expected = mu.probs().iter().zip(&values).map(|(m, j)| m * (j - cfg.beta)).sum();
    Ok(PolicyValue { per_state: values, expected })
}

fn check_shapes(model: &MarkovModel, sigma: &SchedulingFunction, cfg: &PlannerConfig) -> Result<()> {
    cfg.validate()?;
    if sigma.num_states() != model.num_states() {
        return Err(Error::domain("schedule and model disagree on the state count"));
    }
    if sigma.t_max() != cfg.t_max {
        return Err(Error::domain("schedule horizon differs from the planner's t_max"));
    }
    Ok(())
}

/// Expected discounted reward of updating at `Δ = σ(s)` and acting per `policy`.
pub fn evaluate_policy(
    model: &MarkovModel,
    sigma: &SchedulingFunction,
    policy: &JointPolicy,
    cfg: &PlannerConfig,
) -> Result<f64> {
    Ok(evaluate_values(model, sigma, policy, cfg)?.expected)
}

pub fn evaluate_values(
    model: &MarkovModel,
    sigma: &SchedulingFunction,
    policy: &JointPolicy,
    cfg: &PlannerConfig,
) -> Result<PolicyValue> {
    check_shapes(model, sigma, cfg)?;
    if policy.num_states() != model.num_states() || policy.t_max() != cfg.t_max {
        return Err(Error::domain("policy shape differs from model/planner"));
    }
    let values = evaluate_cycles(model, &policy.cycles(sigma), cfg.gamma, cfg.beta)?;
    summarise(model, values, cfg)
}

/// Jointly optimal update schedule and control over `(s, Δ)`.
pub fn solve_goc(model: &MarkovModel, cfg: &PlannerConfig) -> Result<JointPolicy> {
    cfg.validate()?;
    let (cycles, _) = policy_iteration(
        model,
        cfg.gamma,
        cfg.beta,
        cfg.value_tolerance,
        cfg.max_iterations,
        |_| Horizon::Free(cfg.t_max),
        None,
    )?;
    Ok(JointPolicy::from_cycles(model, &cycles, cfg.t_max))
}

/// Best control for a fixed schedule, warm-started from `warm` if given.
pub fn optimize_control(
    model: &MarkovModel,
    sigma: &SchedulingFunction,
    warm: Option<&JointPolicy>,
    cfg: &PlannerConfig,
) -> Result<JointPolicy> {
    check_shapes(model, sigma, cfg)?;
    let init = warm.map(|p| p.cycles(sigma));
    let (cycles, _) = policy_iteration(
        model,
        cfg.gamma,
        cfg.beta,
        cfg.value_tolerance,
        cfg.max_iterations,
        |s| Horizon::Fixed(sigma.interval(s)),
        init,
    )?;
    Ok(JointPolicy::from_cycles(model, &cycles, cfg.t_max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSolution {
    pub period: usize,
    pub policy: JointPolicy,
    pub value: f64,
}

/// Best fixed update period, with control re-optimised for each candidate.
/// Ties go to the shorter period.
pub fn solve_periodic(model: &MarkovModel, cfg: &PlannerConfig) -> Result<PeriodicSolution> {
    cfg.validate()?;
    let mut best: Option<PeriodicSolution> = None;
    for period in 1..=cfg.t_max {
        let sigma = SchedulingFunction::constant(model.num_states(), period, cfg.t_max)?;
        let policy = optimize_control(model, &sigma, None, cfg)?;
        let value = evaluate_policy(model, &sigma, &policy, cfg)?;
        let better = best
            .as_ref()
            .map_or(true, |b| value > b.value + cfg.value_tolerance * (1.0 + b.value.abs()));
        if better {
            best = Some(PeriodicSolution { period, policy, value });
        }
    }
    Ok(best.expect("t_max >= 1"))
}
