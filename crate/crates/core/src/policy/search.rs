//! Renewal-cycle machinery shared by the planners and the packing defense.
//!
//! After an update reporting state `s`, Bob's information is only the elapsed
//! time, so his behaviour until the next update is an open-loop *cycle*: an
//! interval `τ` and the actions for `Δ = 0..τ`. The scheduling problem is then
//! a semi-MDP over renewal states whose macro-actions are cycles:
//!
//! ```text
//! J(s) = max_cycle  Σ_{Δ<τ} γ^Δ E_ζΔ[r_B] + γ^τ ζ_τ · (J − β)
//! ```
//!
//! `J(s)` counts the reward of the renewal step itself but not its update
//! cost, which is charged by the cycle that ends there.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::markov::{argmax, dot, MarkovModel, Scenario};

const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Cycle {
    pub interval: usize,
    /// Actions for `Δ = 0..interval`.
    pub actions: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Horizon {
    /// Any interval in `1..=t_max`.
    Free(usize),
    Fixed(usize),
}

impl Horizon {
    fn bounds(self) -> (usize, usize) {
        match self {
            Horizon::Free(t_max) => (1, t_max),
            Horizon::Fixed(t) => (t, t),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Found {
    pub cycle: Cycle,
    pub value: f64,
}

fn beats(candidate: f64, incumbent: f64) -> bool {
    candidate > incumbent + TIE_EPS * (1.0 + incumbent.abs())
}

/// Reward and discounted landing distribution of one cycle from `s`.
pub(crate) fn cycle_outcome(
    model: &MarkovModel,
    s: usize,
    cycle: &Cycle,
    gamma: f64,
) -> (f64, Vec<f64>) {
    let n = model.num_states();
    let mut belief = vec![0.0; n];
    belief[s] = 1.0;
    let mut next = vec![0.0; n];
    let mut reward = 0.0;
    let mut discount = 1.0;
    for &a in &cycle.actions {
        reward += discount * model.expected_task_reward(&belief, a);
        model.transition(a).push_forward(&belief, &mut next);
        std::mem::swap(&mut belief, &mut next);
        discount *= gamma;
    }
    belief.iter_mut().for_each(|b| *b *= discount);
    (reward, belief)
}

/// Exact discounted value `J` of running `cycles` forever.
pub(crate) fn evaluate_cycles(
    model: &MarkovModel,
    cycles: &[Cycle],
    gamma: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    let n = model.num_states();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for (s, cycle) in cycles.iter().enumerate() {
        let (reward, terminal) = cycle_outcome(model, s, cycle, gamma);
        let mass: f64 = terminal.iter().sum();
        rhs[s] = reward - beta * mass;
        for (x, m) in terminal.iter().enumerate() {
            a[(s, x)] -= m;
        }
    }
    let j = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular policy-evaluation system".into()))?;
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite policy value".into()));
    }
    Ok(j.iter().copied().collect())
}

/// Best cycle from `s` against the continuation values `cont = J − β`.
/// An incumbent is only displaced by a strictly better cycle; among equal
/// candidates the shorter interval, then the lexicographically smaller action
/// sequence, is kept.
pub(crate) fn best_cycle(
    model: &MarkovModel,
    s: usize,
    cont: &[f64],
    gamma: f64,
    horizon: Horizon,
    incumbent: Option<&Cycle>,
) -> Found {
    if model.num_actions() == 1 {
        best_single_action(model, s, cont, gamma, horizon, incumbent)
    } else {
        Dfs::new(model, cont, gamma, horizon).run(s, incumbent)
    }
}

fn value_of(model: &MarkovModel, s: usize, cycle: &Cycle, cont: &[f64], gamma: f64) -> f64 {
    let (reward, terminal) = cycle_outcome(model, s, cycle, gamma);
    reward + dot(&terminal, cont)
}

/// Greedy per-step action for a single-matrix model: the MAP estimate in
/// estimation, action 0 otherwise.
pub(crate) fn myopic_estimate(model: &MarkovModel, belief: &[f64]) -> usize {
    match model.scenario() {
        Scenario::Estimation => argmax(belief),
        Scenario::Control => 0,
    }
}

fn best_single_action(
    model: &MarkovModel,
    s: usize,
    cont: &[f64],
    gamma: f64,
    horizon: Horizon,
    incumbent: Option<&Cycle>,
) -> Found {
    let n = model.num_states();
    let (lo, hi) = horizon.bounds();
    let m = model.transition(0);
    let mut belief = vec![0.0; n];
    belief[s] = 1.0;
    let mut next = vec![0.0; n];
    let mut actions = Vec::with_capacity(hi);
    let mut reward = 0.0;
    let mut discount = 1.0;
    let mut best: Option<Found> = incumbent.map(|c| Found {
        value: value_of(model, s, c, cont, gamma),
        cycle: c.clone(),
    });
    for delta in 0..=hi {
        if delta >= lo {
            let value = reward + discount * dot(&belief, cont);
            if best.as_ref().map_or(true, |b| beats(value, b.value)) {
                best = Some(Found {
                    cycle: Cycle { interval: delta, actions: actions.clone() },
                    value,
                });
            }
        }
        if delta == hi {
            break;
        }
        let a = myopic_estimate(model, &belief);
        reward += discount * model.expected_task_reward(&belief, a);
        actions.push(a);
        m.push_forward(&belief, &mut next);
        std::mem::swap(&mut belief, &mut next);
        discount *= gamma;
    }
    best.expect("horizon has at least one admissible interval")
}

/// Depth-first search over open-loop action sequences, pruned with the bound
/// obtained by letting actions depend on the true state.
struct Dfs<'a> {
    model: &'a MarkovModel,
    cont: &'a [f64],
    gamma: f64,
    lo: usize,
    hi: usize,
    /// `upper[Δ][x]` bounds the value-to-go from true state `x` at depth `Δ`.
    upper: Vec<Vec<f64>>,
    beliefs: Vec<Vec<f64>>,
    path: Vec<usize>,
    best_value: f64,
    best: Option<Cycle>,
}

impl<'a> Dfs<'a> {
    fn new(model: &'a MarkovModel, cont: &'a [f64], gamma: f64, horizon: Horizon) -> Self {
        let n = model.num_states();
        let (lo, hi) = horizon.bounds();
        let reward = model.control_reward();
        let mut upper = vec![vec![0.0; n]; hi + 1];
        upper[hi].copy_from_slice(cont);
        let mut pulled = vec![0.0; n];
        for delta in (0..hi).rev() {
            let mut best_next = vec![f64::NEG_INFINITY; n];
            for a in 0..model.num_actions() {
                model.transition(a).pull_back(&upper[delta + 1], &mut pulled);
                for (b, p) in best_next.iter_mut().zip(&pulled) {
                    *b = b.max(*p);
                }
            }
            for x in 0..n {
                let go_on = task_reward_at(model, reward, x) + gamma * best_next[x];
                upper[delta][x] = if delta >= lo { go_on.max(cont[x]) } else { go_on };
            }
        }
        Dfs {
            model,
            cont,
            gamma,
            lo,
            hi,
            upper,
            beliefs: vec![vec![0.0; n]; hi + 1],
            path: Vec::with_capacity(hi),
            best_value: f64::NEG_INFINITY,
            best: None,
        }
    }

    fn run(mut self, s: usize, incumbent: Option<&Cycle>) -> Found {
        if let Some(c) = incumbent {
            self.best_value = value_of(self.model, s, c, self.cont, self.gamma);
            self.best = Some(c.clone());
        }
        self.beliefs[0].iter_mut().for_each(|b| *b = 0.0);
        self.beliefs[0][s] = 1.0;
        self.visit(0, 0.0, 1.0);
        Found {
            cycle: self.best.expect("search visits at least one leaf"),
            value: self.best_value,
        }
    }

    fn visit(&mut self, depth: usize, acc: f64, discount: f64) {
        if depth >= self.lo {
            let value = acc + discount * dot(&self.beliefs[depth], self.cont);
            if self.best.is_none() || beats(value, self.best_value) {
                self.best_value = value;
                self.best = Some(Cycle { interval: depth, actions: self.path.clone() });
            }
        }
        if depth == self.hi {
            return;
        }
        let acc = acc + discount * self.model.expected_task_reward(&self.beliefs[depth], 0);
        let discount = discount * self.gamma;
        for a in 0..self.model.num_actions() {
            let (head, tail) = self.beliefs.split_at_mut(depth + 1);
            self.model.transition(a).push_forward(&head[depth], &mut tail[0]);
            let bound = acc + discount * dot(&tail[0], &self.upper[depth + 1]);
            if self.best.is_some() && !beats(bound, self.best_value) {
                continue;
            }
            self.path.push(a);
            self.visit(depth + 1, acc, discount);
            self.path.pop();
        }
    }
}

fn task_reward_at(model: &MarkovModel, reward: &[f64], x: usize) -> f64 {
    match model.scenario() {
        Scenario::Estimation => 1.0,
        Scenario::Control => reward[x],
    }
}

/// Policy iteration over cycles. `horizon(s)` restricts the interval of each
/// renewal state; `init` warm-starts the search.
pub(crate) fn policy_iteration(
    model: &MarkovModel,
    gamma: f64,
    beta: f64,
    tolerance: f64,
    max_iterations: usize,
    horizon: impl Fn(usize) -> Horizon,
    init: Option<Vec<Cycle>>,
) -> Result<(Vec<Cycle>, Vec<f64>)> {
    let n = model.num_states();
    let mut cycles = match init {
        Some(c) => c,
        None => {
            let cont = vec![-beta; n];
            (0..n)
                .map(|s| best_cycle(model, s, &cont, gamma, horizon(s), None).cycle)
                .collect()
        }
    };
    for _ in 0..max_iterations {
        let values = evaluate_cycles(model, &cycles, gamma, beta)?;
        let cont: Vec<f64> = values.iter().map(|v| v - beta).collect();
        let mut changed = false;
        for s in 0..n {
            let found = best_cycle(model, s, &cont, gamma, horizon(s), Some(&cycles[s]));
            if found.value > values[s] + tolerance * (1.0 + values[s].abs()) {
                cycles[s] = found.cycle;
                changed = true;
            }
        }
        if !changed {
            return Ok((cycles, values));
        }
    }
    Err(Error::NonConvergence {
        routine: "policy iteration",
        iterations: max_iterations,
        residual: f64::NAN,
    })
}

/// Extends a cycle's actions to the full horizon. Past the interval the plan
/// keeps acting greedily on the propagated belief.
pub(crate) fn complete_actions(model: &MarkovModel, s: usize, cycle: &Cycle, t_max: usize) -> Vec<usize> {
    let n = model.num_states();
    let mut actions = cycle.actions.clone();
    let mut belief = vec![0.0; n];
    belief[s] = 1.0;
    let mut next = vec![0.0; n];
    for &a in &cycle.actions {
        model.transition(a).push_forward(&belief, &mut next);
        std::mem::swap(&mut belief, &mut next);
    }
    while actions.len() < t_max {
        let a = if model.num_actions() == 1 {
            myopic_estimate(model, &belief)
        } else {
            let mut best = (0, f64::NEG_INFINITY);
            for a in 0..model.num_actions() {
                model.transition(a).push_forward(&belief, &mut next);
                let v = model.expected_task_reward(&next, 0);
                if beats(v, best.1) {
                    best = (a, v);
                }
            }
            best.0
        };
        actions.push(a);
        model.transition(a).push_forward(&belief, &mut next);
        std::mem::swap(&mut belief, &mut next);
    }
    actions
}
