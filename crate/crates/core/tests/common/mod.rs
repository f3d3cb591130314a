//! Shared test oracles. Everything here works on dense matrices and explicit
//! enumeration so it shares no code path with the library.

#![allow(dead_code)]

use gocleak_core::{ControlPlan, EveEstimator, MarkovModel, Observation, Scenario, SchedulingFunction};
use gocleak_core::{BeliefVector, TransitionMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small hidden-timing instance with its sampled observations.
#[derive(Debug, Clone)]
pub struct Instance {
    /// `matrices[a][i][j]`.
    pub matrices: Vec<Vec<Vec<f64>>>,
    pub prior: Vec<f64>,
    pub sigma: Vec<usize>,
    pub t_max: usize,
    /// `plans[r][s][Δ]`.
    pub plans: Vec<Vec<Vec<usize>>>,
    pub observations: Vec<Observation>,
}

impl Instance {
    pub fn n(&self) -> usize {
        self.prior.len()
    }

    pub fn times(&self) -> Vec<usize> {
        let mut t = vec![0];
        for o in &self.observations {
            t.push(t.last().unwrap() + o.interval);
        }
        t
    }

    pub fn model(&self) -> MarkovModel {
        let scenario = if self.matrices.len() == 1 { Scenario::Estimation } else { Scenario::Control };
        let mats = self.matrices.iter().map(|m| TransitionMatrix::from_dense(m).unwrap()).collect();
        MarkovModel::from_matrices(scenario, mats, None).unwrap()
    }

    pub fn estimator(&self) -> EveEstimator {
        let sigma = SchedulingFunction::new(self.sigma.clone(), self.t_max).unwrap();
        let plans = self
            .plans
            .iter()
            .map(|p| ControlPlan::new(p.clone(), self.sigma.clone()).unwrap())
            .collect();
        let mut eve =
            EveEstimator::new(self.model(), sigma, plans, BeliefVector::new(self.prior.clone()).unwrap()).unwrap();
        for o in &self.observations {
            eve.observe_with(o.clone()).unwrap();
        }
        eve
    }
}

fn random_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let support = rng.random_range(1..=n.min(3));
    let mut row = vec![0.0; n];
    for _ in 0..support {
        row[rng.random_range(0..n)] += rng.random_range(0.05..1.0);
    }
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= total);
    row
}

fn sample(rng: &mut ChaCha8Rng, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|x| *x > 0.0).unwrap()
}

/// Random instance with `|S| ≤ 5`, `t_max ≤ 4` and a trajectory of at most
/// `max_time` steps. With two regimes the second one renews on a fixed period.
pub fn random_instance(seed: u64, max_time: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=5);
    let actions = if rng.random_bool(0.5) { 1 } else { rng.random_range(2..=3) };
    let t_max = rng.random_range(1..=4);
    let matrices: Vec<Vec<Vec<f64>>> = (0..actions)
        .map(|_| (0..n).map(|_| random_row(&mut rng, n)).collect())
        .collect();
    let mut prior: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    if rng.random_bool(0.3) {
        prior[rng.random_range(0..n)] = 0.0;
    }
    prior[rng.random_range(0..n)] += 0.1;
    let total: f64 = prior.iter().sum();
    prior.iter_mut().for_each(|x| *x /= total);
    let sigma: Vec<usize> = (0..n).map(|_| rng.random_range(1..=t_max)).collect();
    let regimes = if rng.random_bool(0.5) { 1 } else { 2 };
    let period = rng.random_range(1..=t_max);
    let plans: Vec<Vec<Vec<usize>>> = (0..regimes)
        .map(|_| (0..n).map(|_| (0..t_max).map(|_| rng.random_range(0..actions)).collect()).collect())
        .collect();

    let mut observations = Vec::new();
    let mut x = sample(&mut rng, &prior);
    let mut time = 0;
    loop {
        let regime = rng.random_range(0..regimes);
        let interval = if regime == 0 { sigma[x] } else { period };
        if time + interval > max_time {
            break;
        }
        let mask = (0..n)
            .map(|s| if regime == 0 { sigma[s] == interval } else { true })
            .collect();
        let renewal = x;
        for delta in 0..interval {
            let a = plans[regime][renewal][delta];
            x = sample(&mut rng, &matrices[a.min(actions - 1)][x]);
        }
        observations.push(Observation { interval, regime, mask });
        time += interval;
    }
    Instance { matrices, prior, sigma, t_max, plans, observations }
}

/// Exact posterior of the state at `time` given the updates observed by
/// `horizon`, by enumerating every state path on `0..=horizon`.
pub fn enumerate_posterior(inst: &Instance, time: usize, horizon: usize) -> Vec<f64> {
    assert!(time <= horizon);
    let n = inst.n();
    let times = inst.times();
    let seen = times.iter().filter(|&&t| t <= horizon).count() - 1;
    let mut post = vec![0.0; n];
    let mut path = Vec::with_capacity(horizon + 1);
    for x0 in 0..n {
        if inst.prior[x0] > 0.0 {
            path.clear();
            path.push(x0);
            walk(inst, &times, seen, horizon, time, inst.prior[x0], &mut path, &mut post);
        }
    }
    let total: f64 = post.iter().sum();
    assert!(total > 0.0, "observations impossible under the oracle");
    post.iter_mut().for_each(|p| *p /= total);
    post
}

#[allow(clippy::too_many_arguments)]
fn walk(
    inst: &Instance,
    times: &[usize],
    seen: usize,
    horizon: usize,
    time: usize,
    weight: f64,
    path: &mut Vec<usize>,
    post: &mut [f64],
) {
    let t = path.len() - 1;
    // the renewal at t_k must be allowed to emit interval k + 1
    if let Some(k) = times[..=seen].iter().position(|&tk| tk == t) {
        if k < seen && !inst.observations[k].mask[path[t]] {
            return;
        }
    }
    if t == horizon {
        post[path[time]] += weight;
        return;
    }
    let k = times[..=seen].iter().rposition(|&tk| tk <= t).unwrap();
    let regime = if k < seen {
        inst.observations[k].regime
    } else if seen == 0 {
        0
    } else {
        inst.observations[seen - 1].regime
    };
    let renewal = path[times[k]];
    let plan = &inst.plans[regime][renewal];
    let a = plan[(t - times[k]).min(plan.len() - 1)];
    let row = &inst.matrices[a.min(inst.matrices.len() - 1)][path[t]];
    for (next, &p) in row.iter().enumerate() {
        if p > 0.0 {
            path.push(next);
            walk(inst, times, seen, horizon, time, weight * p, path, post);
            path.pop();
        }
    }
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Largest L1 gap between the estimator and the oracle over every
/// `(time ≤ horizon ≤ last)` pair of the instance.
pub fn max_oracle_gap(inst: &Instance, extra: usize) -> f64 {
    let eve = inst.estimator();
    let last = *inst.times().last().unwrap() + extra;
    let mut worst: f64 = 0.0;
    for horizon in 0..=last {
        for time in 0..=horizon {
            let ours = eve.belief_at_time(horizon, horizon - time).unwrap();
            let exact = enumerate_posterior(inst, time, horizon);
            worst = worst.max(l1(ours.belief.probs(), &exact));
        }
    }
    worst
}
