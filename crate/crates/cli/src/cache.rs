use std::path::{Path, PathBuf};

use gocleak_core::{JointPolicy, PolicyKind, Scenario};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Bumped whenever the solvers change what they return for the same inputs.
const CACHE_FORMAT: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything a cached policy depends on.
#[derive(Debug, Clone, Serialize)]
pub struct PolicyKey {
    pub format: u32,
    pub scenario: Scenario,
    pub num_states: usize,
    pub theta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub t_max: usize,
    pub kind: PolicyKind,
    /// PDE only.
    pub entropy_fraction: Option<f64>,
}

impl PolicyKey {
    pub fn new(cfg: &gocleak_core::EpisodeConfig, kind: PolicyKind) -> Self {
        PolicyKey {
            format: CACHE_FORMAT,
            scenario: cfg.scenario,
            num_states: cfg.num_states,
            theta: cfg.theta,
            gamma: cfg.gamma,
            beta: cfg.beta,
            t_max: cfg.t_max,
            kind,
            entropy_fraction: (kind == PolicyKind::Pde).then_some(cfg.defense.entropy_fraction),
        }
    }

    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("key serialises"))
    }
}

/// Content-addressed store of solved policies, one JSON file per key.
#[derive(Debug, Clone)]
pub struct PolicyCache {
    dir: PathBuf,
}

impl PolicyCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        PolicyCache { dir: dir.into() }
    }

    pub fn path(&self, key: &PolicyKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.digest()))
    }

    pub fn get_or_solve(
        &self,
        key: &PolicyKey,
        solve: impl FnOnce() -> gocleak_core::Result<JointPolicy>,
    ) -> CliResult<JointPolicy> {
        let path = self.path(key);
        if let Ok(text) = std::fs::read_to_string(&path) {
            match JointPolicy::from_json(&text) {
                Ok(policy) => {
                    log::debug!("cache hit {}", path.display());
                    return Ok(policy);
                }
                Err(e) => log::warn!("ignoring unreadable cache entry {}: {e}", path.display()),
            }
        }
        log::info!("solving {} policy (theta={}, beta={})", key.kind, key.theta, key.beta);
        let policy = solve()?;
        write_atomic(&path, policy.to_json().as_bytes())?;
        Ok(policy)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}
