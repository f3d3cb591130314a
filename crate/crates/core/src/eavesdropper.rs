//! Eve: an eavesdropper who sees only when updates happen.
//!
//! Eve knows the process, Bob's schedule and control plans, and the steady
//! state. Each observed interval `τ_k` tells her that the state reported at
//! the previous update was one of the states allowed to emit `τ_k` (its
//! *mask*). She runs a scaled forward-backward smoother over the renewal
//! states `x_k` and reconstructs beliefs between updates from the exact
//! two-slice posterior of the enclosing interval.

use std::borrow::Cow;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{
    argmax, dot, entropy_bits, steady_state, BeliefVector, ControlPlan, MarkovModel, ZetaTable,
};
use crate::policy::{extract_sigma, JointPolicy, SchedulingFunction};

/// Inter-update intervals `τ(1), τ(2), …`; serialises as a JSON array.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimingTrace(Vec<usize>);

impl TimingTrace {
    pub fn new(intervals: Vec<usize>, t_max: usize) -> Result<Self> {
        if let Some(bad) = intervals.iter().find(|&&t| t == 0 || t > t_max) {
            return Err(Error::domain(format!("interval {bad} outside 1..={t_max}")));
        }
        Ok(TimingTrace(intervals))
    }

    pub fn intervals(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Update instants, starting with the bootstrap update at time 0.
    pub fn transmission_times(&self) -> Vec<usize> {
        std::iter::once(0)
            .chain(self.0.iter().scan(0, |t, &tau| {
                *t += tau;
                Some(*t)
            }))
            .collect()
    }
}

/// One observed interval together with what Eve can infer about its source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub interval: usize,
    /// Index of the control regime Bob followed during the interval.
    pub regime: usize,
    /// `mask[x]`: whether a renewal in state `x` emits this interval.
    pub mask: Vec<bool>,
}

/// `φ_E(n; d)`: Eve's belief at time `n` about the state at `n − d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedBelief {
    pub belief: BeliefVector,
    pub time: usize,
    pub delay: usize,
}

#[derive(Debug)]
struct Regime {
    plan: ControlPlan,
    zeta: ZetaTable,
}

#[derive(Debug, Clone)]
pub struct EveEstimator {
    model: Arc<MarkovModel>,
    sigma: SchedulingFunction,
    regimes: Arc<Vec<Regime>>,
    prior: BeliefVector,
    observations: Vec<Observation>,
    /// Normalised `f_k`, `k = 0..=K`.
    forward: Vec<Vec<f64>>,
    times: Vec<usize>,
    log_likelihood: f64,
}

impl EveEstimator {
    /// `plans[r]` is the control plan of regime `r`; regime 0 runs under `sigma`.
    pub fn new(
        model: MarkovModel,
        sigma: SchedulingFunction,
        plans: Vec<ControlPlan>,
        prior: BeliefVector,
    ) -> Result<Self> {
        let n = model.num_states();
        if n < 2 {
            return Err(Error::domain("leakage needs at least two states"));
        }
        if sigma.num_states() != n || prior.len() != n {
            return Err(Error::domain("schedule, prior and model disagree on the state count"));
        }
        if plans.is_empty() || plans.iter().any(|p| p.num_states() != n) {
            return Err(Error::domain("at least one control plan over the model's states is required"));
        }
        let horizon = sigma.t_max();
        let regimes = plans
            .into_iter()
            .map(|plan| Regime { zeta: ZetaTable::new(&model, &plan, horizon), plan })
            .collect();
        Ok(EveEstimator {
            model: Arc::new(model),
            sigma,
            regimes: Arc::new(regimes),
            forward: vec![prior.probs().to_vec()],
            prior,
            observations: Vec::new(),
            times: vec![0],
            log_likelihood: 0.0,
        })
    }

    /// Estimator for a fixed joint policy, seeded with its steady state.
    pub fn for_policy(model: &MarkovModel, policy: &JointPolicy) -> Result<Self> {
        let plan = policy.control_plan();
        let prior = steady_state(model, &plan)?;
        Self::new(model.clone(), extract_sigma(policy), vec![plan], prior)
    }

    pub fn model(&self) -> &MarkovModel {
        &self.model
    }

    pub fn num_states(&self) -> usize {
        self.model.num_states()
    }

    pub fn sigma(&self) -> &SchedulingFunction {
        &self.sigma
    }

    pub fn prior(&self) -> &BeliefVector {
        &self.prior
    }

    pub fn num_regimes(&self) -> usize {
        self.regimes.len()
    }

    pub fn num_observations(&self) -> usize {
        self.observations.len()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn trace(&self) -> TimingTrace {
        TimingTrace(self.observations.iter().map(|o| o.interval).collect())
    }

    /// `t_0 = 0, t_1, …, t_K`.
    pub fn transmission_times(&self) -> &[usize] {
        &self.times
    }

    pub fn last_transmission(&self) -> usize {
        *self.times.last().expect("bootstrap update")
    }

    /// Log-probability of the observed timing (sum of log normalisers).
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Mask of states whose scheduled interval is `interval`.
    pub fn sigma_mask(&self, interval: usize) -> Vec<bool> {
        self.sigma.intervals().iter().map(|&t| t == interval).collect()
    }

    /// Observes an interval generated by `σ` under regime 0.
    pub fn observe(&mut self, interval: usize) -> Result<()> {
        let mask = self.sigma_mask(interval);
        self.observe_with(Observation { interval, regime: 0, mask })
    }

    pub fn observe_trace(&mut self, trace: &TimingTrace) -> Result<()> {
        trace.intervals().iter().try_for_each(|&t| self.observe(t))
    }

    /// Forward step: `f_k(x) ∝ Σ_{x'} f_{k−1}(x') mask_k(x') ζ_{τ_k, x'}(x)`.
    /// On an impossible observation the estimator is left unchanged.
    pub fn observe_with(&mut self, obs: Observation) -> Result<()> {
        let n = self.num_states();
        if obs.interval == 0 || obs.interval > self.sigma.t_max() {
            return Err(Error::domain(format!(
                "interval {} outside 1..={}",
                obs.interval,
                self.sigma.t_max()
            )));
        }
        if obs.regime >= self.regimes.len() || obs.mask.len() != n {
            return Err(Error::domain("observation regime or mask does not fit the estimator"));
        }
        let prev = self.forward.last().expect("f_0");
        let zeta = &self.regimes[obs.regime].zeta;
        let mut next = vec![0.0; n];
        for (x, (&w, &ok)) in prev.iter().zip(&obs.mask).enumerate() {
            if ok && w > 0.0 {
                for (o, z) in next.iter_mut().zip(zeta.get(x, obs.interval)) {
                    *o += w * z;
                }
            }
        }
        let total: f64 = next.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InconsistentTiming {
                index: self.observations.len() + 1,
                interval: obs.interval,
            });
        }
        next.iter_mut().for_each(|v| *v /= total);
        self.log_likelihood += total.ln();
        self.times.push(self.last_transmission() + obs.interval);
        self.forward.push(next);
        self.observations.push(obs);
        Ok(())
    }

    /// Normalised `f_k`.
    pub fn forward(&self, k: usize) -> Result<BeliefVector> {
        self.forward
            .get(k)
            .map(|f| BeliefVector(f.clone()))
            .ok_or_else(|| Error::domain(format!("no forward vector {k}")))
    }

    /// `K(n)`: index of the last update at or before `n`.
    pub fn last_index_at(&self, n: usize) -> usize {
        self.times.partition_point(|&t| t <= n) - 1
    }

    /// Normalised `b_0, …, b_{K(n)}` with a uniform boundary at `K(n)`.
    pub fn backward_pass(&self, horizon: usize) -> Result<Vec<BeliefVector>> {
        let kk = self.last_index_at(horizon);
        Ok(self.backward(kk, 0)?.into_iter().map(BeliefVector).collect())
    }

    /// `b_k` for `k = lo..=kk`, indexed from `lo`.
    fn backward(&self, kk: usize, lo: usize) -> Result<Vec<Vec<f64>>> {
        let n = self.num_states();
        let mut out = vec![vec![1.0 / n as f64; n]; kk - lo + 1];
        for k in (lo..kk).rev() {
            let obs = &self.observations[k];
            let zeta = &self.regimes[obs.regime].zeta;
            let (head, tail) = out.split_at_mut(k - lo + 1);
            let next = &tail[0];
            let cur = &mut head[k - lo];
            for (x, c) in cur.iter_mut().enumerate() {
                *c = if obs.mask[x] { dot(zeta.get(x, obs.interval), next) } else { 0.0 };
            }
            normalise(cur, "backward pass")?;
        }
        Ok(out)
    }

    /// `φ_k ∝ f_k · b_k` using the updates observed up to `horizon`.
    pub fn smoothed_at_transmission(&self, k: usize, horizon: usize) -> Result<BeliefVector> {
        let kk = self.last_index_at(horizon);
        if k > kk {
            return Err(Error::domain(format!("update {k} has not happened by time {horizon}")));
        }
        let back = self.backward(kk, k)?;
        self.belief_from(self.times[k], kk, &back, k).map(BeliefVector)
    }

    /// Belief `ell` steps after update `k`, given updates up to `horizon`.
    pub fn belief_at_offset(&self, k: usize, ell: usize, horizon: usize) -> Result<BeliefVector> {
        let kk = self.last_index_at(horizon);
        if k > kk {
            return Err(Error::domain(format!("update {k} has not happened by time {horizon}")));
        }
        let time = self.times[k] + ell;
        if k < kk && time >= self.times[k + 1] {
            return Err(Error::domain(format!("offset {ell} reaches past the next update")));
        }
        if time > horizon {
            return Err(Error::domain("offset lies in the future of the horizon"));
        }
        let back = self.backward(kk, k)?;
        self.belief_from(time, kk, &back, k).map(BeliefVector)
    }

    /// `φ_E(n; d)`.
    pub fn belief_at_time(&self, n: usize, d: usize) -> Result<SmoothedBelief> {
        if d > n {
            return Err(Error::domain(format!("delay {d} reaches before time 0")));
        }
        let kk = self.last_index_at(n);
        let lo = self.last_index_at(n - d);
        let back = self.backward(kk, lo)?;
        let belief = BeliefVector(self.belief_from(n - d, kk, &back, lo)?);
        Ok(SmoothedBelief { belief, time: n, delay: d })
    }

    /// `φ_E(n; d)` for `d = 0..=min(D, n)`, sharing one backward pass.
    pub fn window(&self, n: usize, gap: usize) -> Result<Vec<BeliefVector>> {
        let depth = gap.min(n);
        let kk = self.last_index_at(n);
        let lo = self.last_index_at(n - depth);
        let back = self.backward(kk, lo)?;
        (0..=depth)
            .map(|d| self.belief_from(n - d, kk, &back, lo).map(BeliefVector))
            .collect()
    }

    /// `L_E(n; D) = max_{d ≤ D} 1 − H(φ_E(n; d)) / log2 |S|`.
    pub fn leakage(&self, n: usize, gap: usize) -> Result<f64> {
        let window = self.window(n, gap)?;
        Ok(window.iter().map(normalised_leakage).fold(0.0, f64::max))
    }

    /// Eve's MAP guess of the state at `n`, made at time `n + D`.
    pub fn estimate(&self, n: usize, gap: usize) -> Result<usize> {
        Ok(self.belief_at_time(n + gap, gap)?.belief.argmax())
    }

    /// `η(n)`: whether Eve's delayed MAP guess hits `true_state`.
    pub fn eve_accuracy(&self, n: usize, gap: usize, true_state: usize) -> Result<bool> {
        Ok(self.estimate(n, gap)? == true_state)
    }

    /// Belief about the state at `time` with `b_k` available for
    /// `k = lo..=kk` in `back`, where `kk` is the last observed update.
    fn belief_from(&self, time: usize, kk: usize, back: &[Vec<f64>], lo: usize) -> Result<Vec<f64>> {
        let k = self.last_index_at(time).min(kk);
        debug_assert!(k >= lo);
        let ell = time - self.times[k];
        let f = &self.forward[k];
        if ell == 0 {
            let mut phi: Vec<f64> = f.iter().zip(&back[k - lo]).map(|(a, b)| a * b).collect();
            normalise(&mut phi, "smoothed belief")?;
            return Ok(phi);
        }
        if k == kk {
            // open interval: no later update constrains the path yet
            let regime = if kk == 0 { 0 } else { self.observations[kk - 1].regime };
            let mut out = vec![0.0; f.len()];
            for (x, &w) in f.iter().enumerate() {
                if w > 0.0 {
                    for (o, z) in out.iter_mut().zip(self.zeta_row(regime, x, ell).iter()) {
                        *o += w * z;
                    }
                }
            }
            normalise(&mut out, "open-interval belief")?;
            return Ok(out);
        }
        self.interior(k, ell, &back[k + 1 - lo])
    }

    /// Marginal at `t_k + ell` of the joint posterior over the path between
    /// updates `k` and `k + 1`.
    fn interior(&self, k: usize, ell: usize, next_back: &[f64]) -> Result<Vec<f64>> {
        let n = self.num_states();
        let obs = &self.observations[k];
        let regime = &self.regimes[obs.regime];
        let shared_dynamics = self.model.num_actions() == 1;
        let mut out = vec![0.0; n];
        let mut future = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        let mut shared_ready = false;
        for (s, (&f, &ok)) in self.forward[k].iter().zip(&obs.mask).enumerate() {
            if !ok || f == 0.0 {
                continue;
            }
            if !(shared_dynamics && shared_ready) {
                future.copy_from_slice(next_back);
                for delta in (ell..obs.interval).rev() {
                    let a = regime.plan.action(s, delta);
                    self.model.transition(a).pull_back(&future, &mut scratch);
                    std::mem::swap(&mut future, &mut scratch);
                }
                shared_ready = true;
            }
            for ((o, z), g) in out.iter_mut().zip(regime.zeta.get(s, ell)).zip(&future) {
                *o += f * z * g;
            }
        }
        normalise(&mut out, "between-update belief")?;
        Ok(out)
    }

    fn zeta_row(&self, regime: usize, s: usize, delta: usize) -> Cow<'_, [f64]> {
        let r = &self.regimes[regime];
        if delta <= r.zeta.horizon() {
            return Cow::Borrowed(r.zeta.get(s, delta));
        }
        let n = self.num_states();
        let mut cur = vec![0.0; n];
        cur[s] = 1.0;
        let mut next = vec![0.0; n];
        for d in 0..delta {
            self.model.transition(r.plan.action(s, d)).push_forward(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Cow::Owned(cur)
    }
}

fn normalise(v: &mut [f64], what: &'static str) -> Result<()> {
    let total: f64 = v.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::ZeroNormalizer(what));
    }
    v.iter_mut().for_each(|x| *x /= total);
    Ok(())
}

/// `1 − H(p) / log2 |S|`, clamped to `[0, 1]`.
pub fn normalised_leakage(belief: &BeliefVector) -> f64 {
    let h0 = (belief.len() as f64).log2();
    (1.0 - entropy_bits(belief.probs()) / h0).clamp(0.0, 1.0)
}

/// Leakage floor set by Eve's knowledge of the steady state.
pub fn min_leakage(model: &MarkovModel, plan: &ControlPlan) -> Result<f64> {
    if model.num_states() < 2 {
        return Err(Error::domain("leakage needs at least two states"));
    }
    Ok(normalised_leakage(&steady_state(model, plan)?))
}

/// MAP state of `belief`, ties to the smallest index.
pub fn map_state(belief: &BeliefVector) -> usize {
    argmax(belief.probs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{build_model, Scenario, TransitionMatrix};

    fn chain(dense: Vec<Vec<f64>>) -> MarkovModel {
        MarkovModel::from_matrices(
            Scenario::Estimation,
            vec![TransitionMatrix::from_dense(&dense).unwrap()],
            None,
        )
        .unwrap()
    }

    fn estimator(model: MarkovModel, sigma: Vec<usize>, t_max: usize) -> EveEstimator {
        let n = model.num_states();
        let sigma = SchedulingFunction::new(sigma, t_max).unwrap();
        let plan = ControlPlan::new(vec![vec![0; t_max]; n], sigma.intervals().to_vec()).unwrap();
        let prior = steady_state(&model, &plan).unwrap();
        EveEstimator::new(model, sigma, vec![plan], prior).unwrap()
    }

    fn identity(n: usize) -> MarkovModel {
        chain((0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect())
    }

    fn rotation(n: usize) -> MarkovModel {
        chain((0..n).map(|i| (0..n).map(|j| f64::from(u8::from(j == (i + 1) % n))).collect()).collect())
    }

    #[test]
    fn distinguishing_schedule_pins_the_state() {
        let mut eve = estimator(identity(2), vec![1, 2], 2);
        eve.observe(1).unwrap();
        assert_eq!(eve.forward(1).unwrap().probs(), &[1.0, 0.0]);
        let phi = eve.smoothed_at_transmission(0, 1).unwrap();
        assert_eq!(phi.probs(), &[1.0, 0.0]);
        assert!(eve.eve_accuracy(0, 1, 0).unwrap());
        assert_eq!(eve.leakage(1, 1).unwrap(), 1.0);
    }

    #[test]
    fn periodic_schedule_keeps_prior() {
        let m = build_model(32.0, 30, Scenario::Estimation).unwrap();
        let mut eve = estimator(m, vec![4; 30], 10);
        for _ in 0..5 {
            eve.observe(4).unwrap();
        }
        for k in 0..=5 {
            let f = eve.forward(k).unwrap();
            assert!(f.l1_distance(eve.prior()) < 1e-9);
        }
        for b in eve.backward_pass(20).unwrap() {
            assert!(b.l1_distance(&BeliefVector::uniform(30)) < 1e-9);
        }
    }

    #[test]
    fn impossible_interval_is_rejected_without_mutation() {
        let mut eve = estimator(identity(3), vec![1, 2, 2], 3);
        let before = eve.forward(0).unwrap();
        match eve.observe(3) {
            Err(Error::InconsistentTiming { index, interval }) => {
                assert_eq!((index, interval), (1, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(eve.num_observations(), 0);
        assert_eq!(eve.forward(0).unwrap(), before);
        assert!(eve.observe(0).is_err());
    }

    #[test]
    fn single_observation_smoothing_equals_forward() {
        let m = build_model(1.0, 30, Scenario::Estimation).unwrap();
        let sigma: Vec<usize> = (0..30).map(|s| 1 + s % 3).collect();
        let mut eve = estimator(m, sigma, 3);
        eve.observe(2).unwrap();
        let phi = eve.smoothed_at_transmission(1, 2).unwrap();
        assert!(phi.l1_distance(&eve.forward(1).unwrap()) < 1e-12);
    }

    #[test]
    fn offset_zero_matches_transmission_belief() {
        let m = build_model(4.0, 30, Scenario::Estimation).unwrap();
        let sigma: Vec<usize> = (0..30).map(|s| 2 + s % 3).collect();
        let mut eve = estimator(m, sigma, 4);
        for t in [2, 3, 4, 2] {
            eve.observe(t).unwrap();
        }
        for k in 0..4 {
            let a = eve.belief_at_offset(k, 0, 11).unwrap();
            let b = eve.smoothed_at_transmission(k, 11).unwrap();
            assert!(a.l1_distance(&b) < 1e-12);
        }
    }

    #[test]
    fn rotation_shifts_delta_belief() {
        let mut eve = estimator(rotation(4), vec![3, 1, 3, 3], 3);
        eve.observe(1).unwrap();
        eve.observe(3).unwrap();
        // the first update reported state 1
        for ell in 0..3 {
            let b = eve.belief_at_offset(1, ell, 4).unwrap();
            assert_eq!(b.argmax(), (2 + ell) % 4);
            assert!((b.probs()[(2 + ell) % 4] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn leakage_examples() {
        assert_eq!(normalised_leakage(&BeliefVector::uniform(30)), 0.0);
        assert_eq!(normalised_leakage(&BeliefVector::delta(30, 3)), 1.0);
        let mut p = vec![0.0; 30];
        p[0] = 0.5;
        p[1] = 0.5;
        let l = normalised_leakage(&BeliefVector::new(p).unwrap());
        assert!((l - (1.0 - 1.0 / 30f64.log2())).abs() < 1e-12);
        assert!((l - 0.79621).abs() < 1e-5);
    }

    #[test]
    fn min_leakage_examples() {
        let ring = chain(vec![
            vec![0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            vec![1.0 / 3.0, 0.0, 1.0 / 3.0, 1.0 / 3.0],
            vec![1.0 / 3.0, 1.0 / 3.0, 0.0, 1.0 / 3.0],
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0],
        ]);
        assert!(min_leakage(&ring, &ControlPlan::passive(4, 1)).unwrap() < 1e-12);
        // stationary law (0.75, 0.25)
        let skewed = chain(vec![vec![5.0 / 6.0, 1.0 / 6.0], vec![0.5, 0.5]]);
        let l = min_leakage(&skewed, &ControlPlan::passive(2, 1)).unwrap();
        let h = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        assert!((l - (1.0 - h)).abs() < 1e-9);
        assert!((l - 0.18872).abs() < 1e-5);
        let absorbing = chain(vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        assert!((min_leakage(&absorbing, &ControlPlan::passive(2, 1)).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn leakage_grows_with_gap() {
        let m = build_model(8.0, 30, Scenario::Estimation).unwrap();
        let sigma: Vec<usize> = (0..30).map(|s| 1 + (s * 7) % 5).collect();
        let mut eve = estimator(m, sigma.clone(), 5);
        for s in [0, 3, 8, 11, 20, 25] {
            eve.observe(sigma[s]).unwrap_or(());
        }
        let t = eve.last_transmission() + 2;
        let mut prev = 0.0;
        for gap in 0..=t {
            let l = eve.leakage(t, gap).unwrap();
            assert!(l + 1e-15 >= prev);
            prev = l;
        }
    }

    #[test]
    fn trace_serialises_as_array() {
        let trace = TimingTrace::new(vec![3, 1, 4], 10).unwrap();
        assert_eq!(serde_json::to_string(&trace).unwrap(), "[3,1,4]");
        assert_eq!(trace.transmission_times(), vec![0, 3, 4, 8]);
        let back: TimingTrace = serde_json::from_str("[3,1,4]").unwrap();
        assert_eq!(back, trace);
        assert!(TimingTrace::new(vec![0], 10).is_err());
        assert!(TimingTrace::new(vec![11], 10).is_err());
    }
}
