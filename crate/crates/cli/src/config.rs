//! Run configuration: one JSON document with `model`, `planner`, `defense`,
//! `simulation` and `output` sections. Every section and key is optional;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use gocleak_core::{
    DefenseParams, EpisodeConfig, ForecastMode, PolicyKind, Scenario, DEFAULT_GAMMA,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub scenario: Scenario,
    pub num_states: usize,
    pub thetas: Vec<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { scenario: Scenario::Estimation, num_states: 30, thetas: vec![32.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    pub gamma: f64,
    pub betas: Vec<f64>,
    pub t_max: usize,
}

impl Default for PlannerSection {
    fn default() -> Self {
        PlannerSection { gamma: DEFAULT_GAMMA, betas: vec![1.0], t_max: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseSection {
    pub l_low: f64,
    pub l_high: f64,
    pub forecast: ForecastMode,
    pub entropy_fraction: f64,
    /// ADE lower thresholds for `pareto`; each runs with `l_high = l_low + 0.2`.
    pub ade_grid: Vec<f64>,
    /// PDE target entropies for `pareto`, as fractions of the GOC schedule's entropy.
    pub pde_grid: Vec<f64>,
}

impl Default for DefenseSection {
    fn default() -> Self {
        let d = DefenseParams::default();
        DefenseSection {
            l_low: d.l_low,
            l_high: d.l_high,
            forecast: d.forecast,
            entropy_fraction: d.entropy_fraction,
            ade_grid: (1..=7).map(|k| f64::from(k) / 10.0).collect(),
            pde_grid: (0..=10).map(|k| f64::from(k) / 10.0).collect(),
        }
    }
}

impl DefenseSection {
    pub fn params(&self) -> DefenseParams {
        DefenseParams {
            l_low: self.l_low,
            l_high: self.l_high,
            forecast: self.forecast,
            entropy_fraction: self.entropy_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub policies: Vec<PolicyKind>,
    pub gaps: Vec<usize>,
    pub n_steps: usize,
    pub n_episodes: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Write the per-step CSV of episode 0 for every simulated cell.
    pub traces: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            policies: PolicyKind::ALL.to_vec(),
            gaps: vec![5],
            n_steps: 200,
            n_episodes: 10,
            epsilon: 0.0,
            seed: 0,
            traces: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Policy cache; `<dir>/cache` when unset.
    pub cache_dir: Option<PathBuf>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("results"), cache_dir: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub planner: PlannerSection,
    pub defense: DefenseSection,
    pub simulation: SimulationSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> CliResult<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            CliError::Config(format!("{}:{}:{}: {e}", origin.display(), e.line(), e.column()))
        })?;
        cfg.validate()
            .map_err(|msg| CliError::Config(format!("{}: {msg}", origin.display())))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| CliError::Config(format!("{}: not UTF-8: {e}", path.display())))?;
        Ok((Self::parse(text, path)?, bytes))
    }

    fn validate(&self) -> Result<(), String> {
        let nonempty = |name: &str, len: usize| {
            if len == 0 {
                Err(format!("{name} must not be empty"))
            } else {
                Ok(())
            }
        };
        nonempty("model.thetas", self.model.thetas.len())?;
        nonempty("planner.betas", self.planner.betas.len())?;
        nonempty("simulation.gaps", self.simulation.gaps.len())?;
        nonempty("simulation.policies", self.simulation.policies.len())?;
        if self.simulation.n_episodes == 0 {
            return Err("simulation.n_episodes must be positive".into());
        }
        if let Some(t) = self.model.thetas.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(format!("model.thetas: {t} is not a positive number"));
        }
        if let Some(b) = self.planner.betas.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return Err(format!("planner.betas: {b} is not a nonnegative number"));
        }
        if let Some(f) = self.defense.pde_grid.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(format!("defense.pde_grid: {f} is outside [0, 1]"));
        }
        if let Some(l) = self.defense.ade_grid.iter().find(|l| !(0.0..1.0).contains(*l)) {
            return Err(format!("defense.ade_grid: {l} is outside [0, 1)"));
        }
        let probe = self.episode(self.model.thetas[0], self.planner.betas[0], self.simulation.gaps[0], PolicyKind::Mpi);
        probe.validate().map_err(|e| e.to_string())?;
        gocleak_core::AdeState::new(self.defense.l_low, self.defense.l_high, 1).map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn episode(&self, theta: f64, beta: f64, d_gap: usize, kind: PolicyKind) -> EpisodeConfig {
        EpisodeConfig {
            scenario: self.model.scenario,
            num_states: self.model.num_states,
            theta,
            beta,
            gamma: self.planner.gamma,
            t_max: self.planner.t_max,
            d_gap,
            n_steps: self.simulation.n_steps,
            seed: self.simulation.seed,
            policy_kind: kind,
            defense: self.defense.params(),
            epsilon: self.simulation.epsilon,
        }
    }

    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.model
            .thetas
            .iter()
            .flat_map(|&t| self.planner.betas.iter().map(move |&b| (t, b)))
            .collect()
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.output.cache_dir.clone().unwrap_or_else(|| self.output.dir.join("cache"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<RunConfig> {
        RunConfig::parse(text, Path::new("run.json"))
    }

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(parse("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let err = parse("{\n  \"model\": {\n    \"thetaz\": [1]\n  }\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("run.json:3:"), "{msg}");
        assert!(msg.contains("thetaz"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn semantic_errors_are_config_errors() {
        for bad in [
            r#"{"planner": {"betas": []}}"#,
            r#"{"planner": {"gamma": 1.5}}"#,
            r#"{"model": {"thetas": [-1]}}"#,
            r#"{"defense": {"l_low": 0.7, "l_high": 0.6}}"#,
            r#"{"simulation": {"n_steps": 0}}"#,
        ] {
            assert_eq!(parse(bad).unwrap_err().exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn cells_are_theta_major() {
        let cfg = parse(r#"{"model": {"thetas": [1, 2]}, "planner": {"betas": [0.2, 2.0]}}"#).unwrap();
        assert_eq!(cfg.cells(), vec![(1.0, 0.2), (1.0, 2.0), (2.0, 0.2), (2.0, 2.0)]);
    }
}
