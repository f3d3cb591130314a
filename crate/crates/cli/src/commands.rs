use std::path::{Path, PathBuf};

use gocleak_core::{
    evaluate_policy, extract_sigma, non_dominated, pack_policy, pareto_sweep, policy_entropy,
    run_strategy, run_strategy_batch, solve_goc, solve_periodic, write_records_csv, BatchMetrics,
    EpisodeConfig, JointPolicy, MarkovModel, ParetoRow, PdeConfig, PlannerConfig, PolicyKind,
    Strategy, SweepRow,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::cache::{sha256_hex, write_atomic, PolicyCache, PolicyKey};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Files written by one command, tracked for the manifest.
pub struct Output {
    root: PathBuf,
    artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

impl Output {
    pub fn new(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Output { root: root.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&self.root.join(rel), bytes)?;
        self.artifacts.push(Artifact { path: rel.to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_path: String,
    config_sha256: String,
    master_seed: u64,
    output_dir: String,
    config: &'a RunConfig,
    artifacts: Vec<Artifact>,
}

pub struct Invocation<'a> {
    pub command: &'a str,
    pub config: RunConfig,
    pub config_path: PathBuf,
    pub config_bytes: Vec<u8>,
}

impl Invocation<'_> {
    fn finish(&self, mut out: Output) -> CliResult<()> {
        out.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config_path: self.config_path.display().to_string(),
            config_sha256: sha256_hex(&self.config_bytes),
            master_seed: self.config.simulation.seed,
            output_dir: self.config.output.dir.display().to_string(),
            config: &self.config,
            artifacts: out.artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        text.push('\n');
        let rel = format!("manifest-{}.json", self.command);
        write_atomic(&out.root.join(&rel), text.as_bytes())?;
        log::info!("wrote {}", out.root.join(rel).display());
        Ok(())
    }
}

/// Solved policies of one `(θ, β)` cell.
struct Cell {
    cfg: EpisodeConfig,
    model: MarkovModel,
    planner: PlannerConfig,
    goc: JointPolicy,
    periodic: JointPolicy,
    pde: Option<JointPolicy>,
}

impl Cell {
    fn solve(cfg: EpisodeConfig, want_pde: bool, cache: &PolicyCache) -> CliResult<Self> {
        cfg.validate()?;
        let model = cfg.model()?;
        let planner = cfg.planner()?;
        let goc = cache.get_or_solve(&PolicyKey::new(&cfg, PolicyKind::Mpi), || solve_goc(&model, &planner))?;
        let periodic = cache.get_or_solve(&PolicyKey::new(&cfg, PolicyKind::Pp), || {
            Ok(solve_periodic(&model, &planner)?.policy)
        })?;
        let pde = if want_pde {
            Some(cache.get_or_solve(&PolicyKey::new(&cfg, PolicyKind::Pde), || {
                let sigma0 = extract_sigma(&goc);
                let target = cfg.defense.entropy_fraction * policy_entropy(&sigma0);
                let pde = PdeConfig::new(target, planner.t_max)?;
                Ok(pack_policy(&sigma0, Some(&goc), &pde, &model, &planner)?.policy)
            })?)
        } else {
            None
        };
        Ok(Cell { cfg, model, planner, goc, periodic, pde })
    }

    /// Stored policy per kind; ADE runs on the GOC and periodic files.
    fn policy(&self, kind: PolicyKind) -> Option<&JointPolicy> {
        match kind {
            PolicyKind::Mpi => Some(&self.goc),
            PolicyKind::Pp => Some(&self.periodic),
            PolicyKind::Pde => self.pde.as_ref(),
            PolicyKind::Ade => None,
        }
    }

    fn strategy(&self, kind: PolicyKind) -> CliResult<Strategy> {
        let policy = match kind {
            PolicyKind::Ade => self.goc.clone(),
            other => self.policy(other).expect("requested kinds are solved").clone(),
        };
        Ok(Strategy::assemble(&self.model, &self.planner, kind, policy, &self.periodic, &self.cfg.defense)?)
    }
}

fn stem(cfg: &EpisodeConfig) -> String {
    format!("{}-theta{}-beta{}", cfg.scenario.to_string().to_lowercase(), cfg.theta, cfg.beta)
}

fn solve_cells(inv: &Invocation, cache: &PolicyCache) -> CliResult<Vec<Cell>> {
    let want_pde = inv.config.simulation.policies.contains(&PolicyKind::Pde);
    inv.config
        .cells()
        .into_par_iter()
        .map(|(theta, beta)| Cell::solve(inv.config.episode(theta, beta, 0, PolicyKind::Mpi), want_pde, cache))
        .collect()
}

pub fn solve(inv: &Invocation) -> CliResult<()> {
    let cache = PolicyCache::new(inv.config.cache_dir());
    let cells = solve_cells(inv, &cache)?;
    let mut out = Output::new(&inv.config.output.dir)?;
    let mut kinds: Vec<PolicyKind> = inv
        .config
        .simulation
        .policies
        .iter()
        .flat_map(|&k| if k == PolicyKind::Ade { vec![PolicyKind::Mpi, PolicyKind::Pp] } else { vec![k] })
        .collect();
    kinds.sort_by_key(|k| PolicyKind::ALL.iter().position(|a| a == k));
    kinds.dedup();
    for cell in &cells {
        for &kind in &kinds {
            let policy = cell.policy(kind).expect("requested kinds are solved");
            let rel = format!("policies/{}-{kind}.json", stem(&cell.cfg));
            out.write(&rel, policy.to_json().as_bytes())?;
        }
    }
    inv.finish(out)
}

const AGGREGATE_HEADER: [&str; 22] = [
    "scenario", "theta", "beta", "d_gap", "kind", "policy_entropy", "period", "value", "episodes",
    "mean_leakage", "se_leakage", "mean_reward", "se_reward", "mean_task_reward", "se_task_reward",
    "eve_accuracy", "se_eve_accuracy", "transmission_probability", "se_transmission_probability",
    "weighted_performance", "se_weighted_performance", "error",
];

fn aggregate_csv(rows: &[SweepRow]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| CliError::Config(format!("csv: {e}"));
    w.write_record(AGGREGATE_HEADER).map_err(wrap)?;
    for r in rows {
        let mut rec = vec![
            r.scenario.to_string().to_lowercase(),
            r.theta.to_string(),
            r.beta.to_string(),
            r.d_gap.to_string(),
            r.kind.to_string(),
            r.policy_entropy.to_string(),
            r.period.to_string(),
            r.value.to_string(),
        ];
        match &r.metrics {
            Some(m) => {
                rec.push(m.episodes.to_string());
                let (mu, se) = (&m.mean, &m.std_error);
                for (a, b) in [
                    (mu.mean_leakage, se.mean_leakage),
                    (mu.mean_reward, se.mean_reward),
                    (mu.mean_task_reward, se.mean_task_reward),
                    (mu.eve_accuracy, se.eve_accuracy),
                    (mu.transmission_probability, se.transmission_probability),
                    (mu.weighted_performance, se.weighted_performance),
                ] {
                    rec.push(a.to_string());
                    rec.push(b.to_string());
                }
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 13)),
        }
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec).map_err(wrap)?;
    }
    w.into_inner().map_err(|e| CliError::Config(format!("csv: {e}")))
}

struct Simulated {
    row: SweepRow,
    trace: Option<(String, Vec<u8>)>,
}

fn simulate_cell(cell: &Cell, inv: &Invocation) -> CliResult<Vec<Simulated>> {
    let sim = &inv.config.simulation;
    let mut out = Vec::new();
    for &kind in &sim.policies {
        let strategy = cell.strategy(kind)?;
        for &d_gap in &sim.gaps {
            let cfg = EpisodeConfig { d_gap, policy_kind: kind, ..cell.cfg.clone() };
            let (metrics, error): (Option<BatchMetrics>, _) = match run_strategy_batch(&strategy, &cfg, sim.n_episodes) {
                Ok(m) => (Some(m), None),
                Err(e) if e.is_numerical() => {
                    log::warn!("{} D={d_gap} {kind}: {e}", stem(&cfg));
                    (None, Some(e.to_string()))
                }
                Err(e) => return Err(e.into()),
            };
            let trace = if sim.traces && metrics.is_some() {
                let episode = run_strategy(&strategy, &cfg, cfg.seed, 0)?;
                let mut buf = Vec::new();
                write_records_csv(&episode.records, &mut buf).map_err(|e| CliError::io("trace", e))?;
                Some((format!("traces/{}-d{d_gap}-{kind}.csv", stem(&cfg)), buf))
            } else {
                None
            };
            let row = SweepRow {
                scenario: cfg.scenario,
                theta: cfg.theta,
                beta: cfg.beta,
                d_gap,
                kind,
                policy_entropy: strategy.entropy,
                period: strategy.period,
                value: evaluate_policy(&cell.model, &strategy.sigma, &strategy.policy, &cell.planner)?,
                metrics,
                error,
            };
            out.push(Simulated { row, trace });
        }
    }
    Ok(out)
}

pub fn simulate(inv: &Invocation) -> CliResult<()> {
    let cache = PolicyCache::new(inv.config.cache_dir());
    let cells = solve_cells(inv, &cache)?;
    let results: Vec<Vec<Simulated>> =
        cells.par_iter().map(|cell| simulate_cell(cell, inv)).collect::<CliResult<_>>()?;
    let mut out = Output::new(&inv.config.output.dir)?;
    let mut rows = Vec::new();
    for sim in results.into_iter().flatten() {
        if let Some((rel, bytes)) = sim.trace {
            out.write(&rel, &bytes)?;
        }
        rows.push(sim.row);
    }
    let mut json = serde_json::to_string_pretty(&rows).expect("rows serialise");
    json.push('\n');
    out.write("aggregate.json", json.as_bytes())?;
    out.write("aggregate.csv", &aggregate_csv(&rows)?)?;
    inv.finish(out)
}

const PARETO_HEADER: [&str; 11] = [
    "scenario", "theta", "beta", "d_gap", "defense", "parameter", "policy_entropy", "mean_leakage",
    "se_leakage", "mean_reward", "se_reward",
];

fn pareto_csv(rows: &[(EpisodeConfig, ParetoRow)]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| CliError::Config(format!("csv: {e}"));
    w.write_record(PARETO_HEADER).map_err(wrap)?;
    for (cfg, r) in rows {
        w.write_record([
            cfg.scenario.to_string().to_lowercase(),
            cfg.theta.to_string(),
            cfg.beta.to_string(),
            cfg.d_gap.to_string(),
            r.defense.to_string(),
            r.parameter.map(|p| p.to_string()).unwrap_or_default(),
            r.policy_entropy.to_string(),
            r.mean_leakage.to_string(),
            r.se_leakage.to_string(),
            r.mean_reward.to_string(),
            r.se_reward.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.into_inner().map_err(|e| CliError::Config(format!("csv: {e}")))
}

pub fn pareto(inv: &Invocation) -> CliResult<()> {
    let c = &inv.config;
    let points: Vec<EpisodeConfig> = c
        .cells()
        .into_iter()
        .flat_map(|(t, b)| c.simulation.gaps.iter().map(move |&d| c.episode(t, b, d, PolicyKind::Mpi)))
        .collect();
    let tables = points
        .par_iter()
        .map(|cfg| {
            log::info!("pareto sweep {} D={}", stem(cfg), cfg.d_gap);
            pareto_sweep(cfg, &c.defense.ade_grid, &c.defense.pde_grid, c.simulation.n_episodes)
        })
        .collect::<gocleak_core::Result<Vec<_>>>()?;
    let mut all = Vec::new();
    let mut frontier = Vec::new();
    for (cfg, table) in points.iter().zip(tables) {
        frontier.extend(non_dominated(&table.rows).into_iter().map(|r| (cfg.clone(), r)));
        all.extend(table.rows.into_iter().map(|r| (cfg.clone(), r)));
    }
    let mut out = Output::new(&c.output.dir)?;
    out.write("pareto.csv", &pareto_csv(&all)?)?;
    out.write("frontier.csv", &pareto_csv(&frontier)?)?;
    inv.finish(out)
}
