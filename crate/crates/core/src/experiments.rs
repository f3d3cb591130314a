//! Grid sweeps and leakage/reward Pareto sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::markov::Scenario;
use crate::sim::{
    run_strategy_batch, BatchMetrics, DefenseParams, EpisodeConfig, EpisodeMetrics, PolicyKind,
    SolvedPolicies, Strategy,
};

/// Gap between ADE's thresholds in Pareto sweeps.
pub const ADE_BAND: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub thetas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gaps: Vec<usize>,
    pub kinds: Vec<PolicyKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario: Scenario,
    pub theta: f64,
    pub beta: f64,
    pub d_gap: usize,
    pub kind: PolicyKind,
    pub policy_entropy: f64,
    pub period: usize,
    pub value: f64,
    pub metrics: Option<BatchMetrics>,
    /// Why the cell failed, if it did.
    pub error: Option<String>,
}

impl SweepRow {
    pub fn mean(&self) -> Option<&EpisodeMetrics> {
        self.metrics.as_ref().map(|m| &m.mean)
    }
}

/// One aggregated row per `(θ, β, D, kind)` cell, in grid order. Policies
/// are solved once per `(θ, β)`; a failing cell is recorded and skipped.
pub fn sweep(grid: &SweepGrid, base: &EpisodeConfig, n_episodes: usize) -> Vec<SweepRow> {
    let points: Vec<(f64, f64)> = grid
        .thetas
        .iter()
        .flat_map(|&t| grid.betas.iter().map(move |&b| (t, b)))
        .collect();
    points
        .par_iter()
        .flat_map_iter(|&(theta, beta)| {
            let cfg = EpisodeConfig { theta, beta, ..base.clone() };
            sweep_point(grid, &cfg, n_episodes)
        })
        .collect()
}

fn sweep_point(grid: &SweepGrid, cfg: &EpisodeConfig, n_episodes: usize) -> Vec<SweepRow> {
    let failed = |kind, d_gap, e: String| SweepRow {
        scenario: cfg.scenario,
        theta: cfg.theta,
        beta: cfg.beta,
        d_gap,
        kind,
        policy_entropy: f64::NAN,
        period: 0,
        value: f64::NAN,
        metrics: None,
        error: Some(e),
    };
    let solved = cfg
        .validate()
        .and_then(|_| SolvedPolicies::solve(cfg.model()?, cfg.planner()?));
    let mut rows = Vec::new();
    for &kind in &grid.kinds {
        let strategy = solved
            .as_ref()
            .map_err(|e| e.clone())
            .and_then(|s| Strategy::build(s, kind, &cfg.defense));
        for &d_gap in &grid.gaps {
            let run_cfg = EpisodeConfig { d_gap, policy_kind: kind, ..cfg.clone() };
            let row = strategy.as_ref().map_err(|e| e.clone()).and_then(|st| {
                let metrics = run_strategy_batch(st, &run_cfg, n_episodes)?;
                Ok(SweepRow {
                    scenario: cfg.scenario,
                    theta: cfg.theta,
                    beta: cfg.beta,
                    d_gap,
                    kind,
                    policy_entropy: st.entropy,
                    period: st.period,
                    value: st.value,
                    metrics: Some(metrics),
                    error: None,
                })
            });
            rows.push(row.unwrap_or_else(|e| failed(kind, d_gap, e.to_string())));
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub defense: PolicyKind,
    /// `l_low` for ADE, the target-entropy fraction for PDE, unset for anchors.
    pub parameter: Option<f64>,
    pub policy_entropy: f64,
    pub mean_leakage: f64,
    pub mean_reward: f64,
    pub se_leakage: f64,
    pub se_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoTable {
    /// Anchors first (MPI, PP), then ADE and PDE points in grid order.
    pub rows: Vec<ParetoRow>,
}

impl ParetoTable {
    pub fn of(&self, kind: PolicyKind) -> impl Iterator<Item = &ParetoRow> {
        self.rows.iter().filter(move |r| r.defense == kind)
    }

    /// Rows not dominated by any other row (lower leakage and higher reward
    /// are better).
    pub fn frontier(&self) -> Vec<ParetoRow> {
        non_dominated(&self.rows)
    }
}

pub fn non_dominated(rows: &[ParetoRow]) -> Vec<ParetoRow> {
    let dominates = |a: &ParetoRow, b: &ParetoRow| {
        a.mean_leakage <= b.mean_leakage
            && a.mean_reward >= b.mean_reward
            && (a.mean_leakage < b.mean_leakage || a.mean_reward > b.mean_reward)
    };
    rows.iter()
        .filter(|r| !rows.iter().any(|o| dominates(o, r)))
        .cloned()
        .collect()
}

/// Operating points of both defenses plus the MPI and PP anchors. ADE runs
/// with `l_high = l_low + 0.2`; PDE targets `fraction · H(σ_MPI)`.
pub fn pareto_sweep(
    base: &EpisodeConfig,
    ade_grid: &[f64],
    pde_grid: &[f64],
    n_episodes: usize,
) -> Result<ParetoTable> {
    base.validate()?;
    let solved = SolvedPolicies::solve(base.model()?, base.planner()?)?;
    let mut jobs: Vec<(PolicyKind, Option<f64>, DefenseParams)> = vec![
        (PolicyKind::Mpi, None, base.defense),
        (PolicyKind::Pp, None, base.defense),
    ];
    for &l_low in ade_grid {
        let defense = DefenseParams { l_low, l_high: (l_low + ADE_BAND).min(1.0), ..base.defense };
        jobs.push((PolicyKind::Ade, Some(l_low), defense));
    }
    for &fraction in pde_grid {
        let defense = DefenseParams { entropy_fraction: fraction, ..base.defense };
        jobs.push((PolicyKind::Pde, Some(fraction), defense));
    }
    let rows = jobs
        .par_iter()
        .map(|(kind, parameter, defense)| {
            let strategy = Strategy::build(&solved, *kind, defense)?;
            let cfg = EpisodeConfig { policy_kind: *kind, defense: *defense, ..base.clone() };
            let m = run_strategy_batch(&strategy, &cfg, n_episodes)?;
            Ok(ParetoRow {
                defense: *kind,
                parameter: *parameter,
                policy_entropy: strategy.entropy,
                mean_leakage: m.mean.mean_leakage,
                mean_reward: m.mean.mean_reward,
                se_leakage: m.std_error.mean_leakage,
                se_reward: m.std_error.mean_reward,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParetoTable { rows })
}
