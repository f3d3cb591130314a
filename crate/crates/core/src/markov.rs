//! Parametric ring-shaped Markov process, belief propagation and entropy.
//!
//! States are stored 0-based: index `i` is the state labelled `i + 1`.
//! Only [`g_factor`] takes a 1-based label because its closed form is written
//! in terms of labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for stochastic matrices and belief vectors.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Label (1-based) of the state the control task tries to hold the process at.
pub const CONTROL_TARGET_LABEL: usize = 14;

/// Peak task reward in the control scenario.
pub const CONTROL_REWARD_SCALE: f64 = 5.0;

const STEADY_STATE_TOL: f64 = 1e-12;
const STEADY_STATE_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Bob only estimates the state; dynamics ignore his actions.
    Estimation,
    /// Bob steers the process with actions {0, 1, 2}.
    Control,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scenario::Estimation => f.write_str("estimation"),
            Scenario::Control => f.write_str("control"),
        }
    }
}

/// Row-sparse stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    rows: Vec<Vec<(usize, f64)>>,
}

impl TransitionMatrix {
    pub fn from_dense(dense: &[Vec<f64>]) -> Result<Self> {
        let n = dense.len();
        let mut rows = Vec::with_capacity(n);
        for (s, row) in dense.iter().enumerate() {
            if row.len() != n {
                return Err(Error::domain(format!("row {s} has {} entries, expected {n}", row.len())));
            }
            let entries: Vec<(usize, f64)> = row
                .iter()
                .enumerate()
                .filter(|(_, p)| **p != 0.0)
                .map(|(j, p)| (j, *p))
                .collect();
            rows.push(entries);
        }
        let m = TransitionMatrix { rows };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        for (s, row) in self.rows.iter().enumerate() {
            let mut total = 0.0;
            for &(_, p) in row {
                if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                    return Err(Error::domain(format!("row {s} has probability {p} outside [0,1]")));
                }
                total += p;
            }
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::domain(format!("row {s} sums to {total}")));
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, s: usize) -> &[(usize, f64)] {
        &self.rows[s]
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.rows[from]
            .iter()
            .filter(|(j, _)| *j == to)
            .map(|(_, p)| *p)
            .sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.rows.len();
        let mut out = vec![vec![0.0; n]; n];
        for (s, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                out[s][j] += p;
            }
        }
        out
    }

    /// `out = belief · P`.
    pub fn push_forward(&self, belief: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (s, row) in self.rows.iter().enumerate() {
            let w = belief[s];
            if w == 0.0 {
                continue;
            }
            for &(j, p) in row {
                out[j] += w * p;
            }
        }
    }

    /// `out = P · values`, i.e. the expectation of `values` one step ahead.
    pub fn pull_back(&self, values: &[f64], out: &mut [f64]) {
        for (s, row) in self.rows.iter().enumerate() {
            out[s] = row.iter().map(|&(j, p)| p * values[j]).sum();
        }
    }
}

/// The (state-, action-indexed) Markov process Alice observes.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    scenario: Scenario,
    density_decay: f64,
    transitions: Vec<TransitionMatrix>,
    control_reward: Vec<f64>,
}

impl MarkovModel {
    /// Model from explicit per-action matrices. Estimation models must have
    /// exactly one matrix; the control reward defaults to the ring reward
    /// centred on [`CONTROL_TARGET_LABEL`].
    pub fn from_matrices(
        scenario: Scenario,
        transitions: Vec<TransitionMatrix>,
        control_reward: Option<Vec<f64>>,
    ) -> Result<Self> {
        let Some(first) = transitions.first() else {
            return Err(Error::domain("at least one transition matrix is required"));
        };
        let n = first.num_states();
        if n == 0 {
            return Err(Error::domain("empty state space"));
        }
        if transitions.iter().any(|m| m.num_states() != n) {
            return Err(Error::domain("transition matrices disagree on the state count"));
        }
        if scenario == Scenario::Estimation && transitions.len() != 1 {
            return Err(Error::domain("estimation models have action-independent dynamics"));
        }
        let control_reward = match control_reward {
            Some(r) if r.len() != n => {
                return Err(Error::domain("control reward length differs from state count"))
            }
            Some(r) => r,
            None => default_control_reward(n),
        };
        Ok(MarkovModel {
            scenario,
            density_decay: f64::NAN,
            transitions,
            control_reward,
        })
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn num_states(&self) -> usize {
        self.transitions[0].num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.transitions.len()
    }

    /// Density decay used to build the model (NaN for hand-made models).
    pub fn density_decay(&self) -> f64 {
        self.density_decay
    }

    /// Transition matrix applied when Bob takes `action`. Estimation models
    /// ignore the action (it is a state estimate, not an input).
    pub fn transition(&self, action: usize) -> &TransitionMatrix {
        if self.transitions.len() == 1 {
            &self.transitions[0]
        } else {
            &self.transitions[action]
        }
    }

    pub fn transitions(&self) -> &[TransitionMatrix] {
        &self.transitions
    }

    /// Actions Bob can choose between: state estimates in estimation,
    /// steering inputs in control.
    pub fn decision_actions(&self) -> usize {
        match self.scenario {
            Scenario::Estimation => self.num_states(),
            Scenario::Control => self.num_actions(),
        }
    }

    /// `r_B(s, a)`.
    pub fn task_reward(&self, state: usize, action: usize) -> f64 {
        match self.scenario {
            Scenario::Estimation => f64::from(u8::from(state == action)),
            Scenario::Control => self.control_reward[state],
        }
    }

    pub fn control_reward(&self) -> &[f64] {
        &self.control_reward
    }

    /// Expected task reward of `action` when the state is distributed as `belief`.
    pub fn expected_task_reward(&self, belief: &[f64], action: usize) -> f64 {
        match self.scenario {
            Scenario::Estimation => belief[action],
            Scenario::Control => dot(belief, &self.control_reward),
        }
    }
}

fn default_control_reward(n: usize) -> Vec<f64> {
    let target = CONTROL_TARGET_LABEL.min(n) as f64;
    (0..n)
        .map(|i| CONTROL_REWARD_SCALE * (-((i + 1) as f64 - target).abs()).exp())
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Probability vector over states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeliefVector(pub(crate) Vec<f64>);

impl BeliefVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("empty belief"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::domain("belief entries must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::domain(format!("belief sums to {total}")));
        }
        Ok(BeliefVector(probs))
    }

    /// Normalises nonnegative weights.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::ZeroNormalizer("belief"));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(BeliefVector(weights))
    }

    pub fn uniform(n: usize) -> Self {
        BeliefVector(vec![1.0 / n as f64; n])
    }

    pub fn delta(n: usize, state: usize) -> Self {
        let mut v = vec![0.0; n];
        v[state] = 1.0;
        BeliefVector(v)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most likely state, smallest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn l1_distance(&self, other: &BeliefVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Bob's actions between updates, indexed by the last reported state and the
/// elapsed time since it was reported, together with the renewal schedule the
/// plan runs under.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPlan {
    actions: Vec<Vec<usize>>,
    intervals: Vec<usize>,
}

impl ControlPlan {
    pub fn new(actions: Vec<Vec<usize>>, intervals: Vec<usize>) -> Result<Self> {
        let Some(t_max) = actions.first().map(Vec::len) else {
            return Err(Error::domain("control plan needs at least one state"));
        };
        if t_max == 0 || actions.iter().any(|row| row.len() != t_max) {
            return Err(Error::domain("control plan rows must share a positive horizon"));
        }
        if intervals.len() != actions.len() || intervals.iter().any(|&t| t == 0 || t > t_max) {
            return Err(Error::domain("renewal intervals must lie in 1..=t_max"));
        }
        Ok(ControlPlan { actions, intervals })
    }

    /// Always take action 0 and renew every step: the uncontrolled process.
    pub fn passive(num_states: usize, t_max: usize) -> Self {
        ControlPlan {
            actions: vec![vec![0; t_max]; num_states],
            intervals: vec![1; num_states],
        }
    }

    pub fn num_states(&self) -> usize {
        self.actions.len()
    }

    pub fn t_max(&self) -> usize {
        self.actions[0].len()
    }

    /// Action at elapsed time `delta` after `renewal` was reported. Elapsed
    /// times past the horizon reuse the last planned action.
    pub fn action(&self, renewal: usize, delta: usize) -> usize {
        let row = &self.actions[renewal];
        row[delta.min(row.len() - 1)]
    }

    pub fn actions(&self) -> &[Vec<usize>] {
        &self.actions
    }

    pub fn intervals(&self) -> &[usize] {
        &self.intervals
    }
}

/// `g(s, θ)` for a 1-based state label, clamped to `[0, 1]`.
pub fn g_factor(label: usize, theta: f64, num_states: usize) -> Result<f64> {
    if num_states < 3 {
        return Err(Error::domain("g_factor needs at least 3 states"));
    }
    if label == 0 || label > num_states {
        return Err(Error::domain(format!("state label {label} outside 1..={num_states}")));
    }
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::domain(format!("density decay {theta} must be positive")));
    }
    let x = 2.0 * (label as f64 - 2.0) / (num_states as f64 - 2.0) - 1.0;
    Ok(x.abs().powf(theta).min(1.0))
}

/// The ring process with landing states `χ⊕1`, `χ⊕3`, `χ⊖2`, where
/// `χ(s, a) = s` in estimation and `s + a` in control.
pub fn build_model(theta: f64, num_states: usize, scenario: Scenario) -> Result<MarkovModel> {
    if num_states < 5 {
        return Err(Error::domain("the ring process needs at least 5 states"));
    }
    let actions = match scenario {
        Scenario::Estimation => 1,
        Scenario::Control => 3,
    };
    let n = num_states as i64;
    let ring = |label: i64, k: i64| -> usize { (label - 1 + k).rem_euclid(n) as usize };
    let mut transitions = Vec::with_capacity(actions);
    for a in 0..actions {
        let mut dense = vec![vec![0.0; num_states]; num_states];
        for idx in 0..num_states {
            let label = idx + 1;
            let g = g_factor(label, theta, num_states)?;
            let chi = (label + a) as i64;
            let (near, far) = if label % 4 == 2 {
                ((2.0 - 2.0 * g) / 6.0, (2.0 + g) / 6.0)
            } else {
                ((1.0 + 2.0 * g) / 3.0, (1.0 - g) / 3.0)
            };
            dense[idx][ring(chi, 1)] += near;
            dense[idx][ring(chi, 3)] += far;
            dense[idx][ring(chi, -2)] += far;
        }
        transitions.push(TransitionMatrix::from_dense(&dense)?);
    }
    let mut model = MarkovModel::from_matrices(scenario, transitions, None)?;
    model.density_decay = theta;
    Ok(model)
}

/// `ζ_{steps}` starting from `start` right after `renewal` was reported.
pub fn propagate_belief(
    model: &MarkovModel,
    start: &BeliefVector,
    plan: &ControlPlan,
    renewal: usize,
    steps: usize,
) -> BeliefVector {
    let mut cur = start.probs().to_vec();
    let mut next = vec![0.0; cur.len()];
    for delta in 0..steps {
        model.transition(plan.action(renewal, delta)).push_forward(&cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
    }
    BeliefVector(cur)
}

/// Long-run fraction of time spent in each state under `plan`.
///
/// Action-independent models reduce to the stationary vector of `P`. Otherwise
/// the renewal chain `s → ζ_{σ(s),s}` is solved first and its stationary law is
/// spread over the occupied elapsed times. Both use lazy power iteration from
/// the uniform vector, so reducible inputs resolve to the limit from uniform.
pub fn steady_state(model: &MarkovModel, plan: &ControlPlan) -> Result<BeliefVector> {
    let n = model.num_states();
    if plan.num_states() != n {
        return Err(Error::domain("plan and model disagree on the state count"));
    }
    if model.num_actions() == 1 {
        let m = model.transition(0);
        return power_iterate(n, |cur, out| m.push_forward(cur, out));
    }
    let zeta = ZetaTable::new(model, plan, plan.t_max());
    let intervals = plan.intervals();
    let renewal = power_iterate(n, |cur, out| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (s, w) in cur.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            for (o, z) in out.iter_mut().zip(zeta.get(s, intervals[s])) {
                *o += w * z;
            }
        }
    })?;
    let mut occupancy = vec![0.0; n];
    for (s, w) in renewal.probs().iter().enumerate() {
        for delta in 0..intervals[s] {
            for (o, z) in occupancy.iter_mut().zip(zeta.get(s, delta)) {
                *o += w * z;
            }
        }
    }
    BeliefVector::from_weights(occupancy)
}

fn power_iterate(n: usize, step: impl Fn(&[f64], &mut [f64])) -> Result<BeliefVector> {
    let mut cur = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut change = f64::INFINITY;
    for _ in 0..STEADY_STATE_CAP {
        step(&cur, &mut next);
        // lazy chain (I + P) / 2: same fixed points, aperiodic
        change = 0.0;
        for (nx, c) in next.iter_mut().zip(&cur) {
            *nx = 0.5 * (*nx + c);
            change += (*nx - c).abs();
        }
        std::mem::swap(&mut cur, &mut next);
        if change < STEADY_STATE_TOL {
            return BeliefVector::from_weights(cur);
        }
    }
    Err(Error::NonConvergence {
        routine: "steady_state",
        iterations: STEADY_STATE_CAP,
        residual: change,
    })
}

/// Shannon entropy in bits; `0 log 0 = 0`.
pub fn shannon_entropy(belief: &BeliefVector) -> f64 {
    entropy_bits(belief.probs())
}

pub(crate) fn entropy_bits(p: &[f64]) -> f64 {
    let h: f64 = p.iter().filter(|x| **x > 0.0).map(|x| -x * x.log2()).sum();
    h.max(0.0)
}

/// `ζ_{Δ,s}` for every renewal state `s` and `Δ ∈ 0..=horizon`.
#[derive(Debug, Clone)]
pub struct ZetaTable {
    n: usize,
    horizon: usize,
    data: Vec<f64>,
}

impl ZetaTable {
    pub fn new(model: &MarkovModel, plan: &ControlPlan, horizon: usize) -> Self {
        let n = model.num_states();
        let mut data = vec![0.0; n * (horizon + 1) * n];
        let mut next = vec![0.0; n];
        for s in 0..n {
            let base = s * (horizon + 1) * n;
            data[base + s] = 1.0;
            for delta in 0..horizon {
                let (head, tail) = data.split_at_mut(base + (delta + 1) * n);
                let cur = &head[base + delta * n..];
                model.transition(plan.action(s, delta)).push_forward(cur, &mut next);
                tail[..n].copy_from_slice(&next);
            }
        }
        ZetaTable { n, horizon, data }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `ζ_{delta,s}` as a distribution over landing states.
    pub fn get(&self, s: usize, delta: usize) -> &[f64] {
        let off = (s * (self.horizon + 1) + delta) * self.n;
        &self.data[off..off + self.n]
    }
}
