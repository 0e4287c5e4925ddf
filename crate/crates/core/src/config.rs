//! Run configuration of the `micro` binary: a TOML file layered over the
//! defaults, then `key=value` overrides on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::dynamics::EnsembleConfig;
use crate::envs::pendulum::ENV_ID;
use crate::envs::DatasetTier;
use crate::robust_eval::{AttackKind, SweepGrid, DEFAULT_CANDIDATES};
use crate::{Error, Result};

pub const HORIZONS: [usize; 3] = [1, 5, 10];
/// Penalty coefficients; 0 is the unpenalized ablation.
pub const BETAS: [f64; 5] = [0.0, 0.1, 0.2, 0.5, 1.0];
pub const MODEL_DATA_PROBS: [f64; 2] = [0.5, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub kinds: Vec<AttackKind>,
    /// Attack radii, in normalized observation units.
    pub epsilons: Vec<f64>,
    pub n_candidates: usize,
    pub sweep: SweepGrid,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 10,
            kinds: AttackKind::ALL.to_vec(),
            epsilons: vec![0.0, 0.05, 0.1, 0.15, 0.2],
            n_candidates: DEFAULT_CANDIDATES,
            sweep: SweepGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Environment id; every command requires it.
    pub env: Option<String>,
    pub tier: DatasetTier,
    /// Dataset file; `<out>/dataset.jsonl` when unset.
    pub dataset: Option<PathBuf>,
    pub n_transitions: usize,
    pub seed: u64,
    pub ensemble: EnsembleConfig,
    pub agent: AgentConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: None,
            tier: DatasetTier::Medium,
            dataset: None,
            n_transitions: 100_000,
            seed: 0,
            ensemble: EnsembleConfig::default(),
            agent: AgentConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn one_of<T: PartialEq + std::fmt::Debug>(name: &str, v: T, allowed: &[T]) -> Result<()> {
    if allowed.contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} = {v:?} is not one of {allowed:?}")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(env) = &self.env {
            if env != ENV_ID {
                return Err(Error::invalid(format!("unknown env `{env}` (expected {ENV_ID})")));
            }
        }
        if self.n_transitions == 0 {
            return Err(Error::invalid("n_transitions must be at least 1"));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::invalid(format!("seed {} does not fit a signed 64-bit integer", self.seed)));
        }
        one_of("agent.horizon", self.agent.horizon, &HORIZONS)?;
        one_of("agent.beta", self.agent.beta, &BETAS)?;
        one_of("agent.model_data_prob", self.agent.model_data_prob, &MODEL_DATA_PROBS)?;
        self.ensemble.validate()?;
        self.agent.validate()?;
        let eval = &self.eval;
        if eval.episodes == 0 || eval.n_candidates == 0 {
            return Err(Error::invalid("eval.episodes and eval.n_candidates must be positive"));
        }
        if eval.kinds.is_empty() || eval.epsilons.is_empty() {
            return Err(Error::invalid("eval.kinds and eval.epsilons must not be empty"));
        }
        if let Some(e) = eval.epsilons.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::invalid(format!("attack radius {e} must be finite and non-negative")));
        }
        eval.sweep.validate()
    }

    /// The environment id, or an error naming both ways to set it.
    pub fn env_id(&self) -> Result<&str> {
        self.env
            .as_deref()
            .ok_or_else(|| Error::invalid("no environment given (pass --env or set `env` in the config file)"))
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::invalid(format!("{origin}: {e}")))?;
        c.validate().map_err(|e| Error::invalid(format!("{origin}: {e}")))?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Sets a dotted key such as `agent.beta` to a TOML literal. A value that
    /// does not parse as TOML is taken as a bare string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut root = toml::Value::try_from(&*self).expect("run config serializes");
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        let (last, path) = parts.split_last().expect("split yields one part");
        for p in path {
            node = node
                .get_mut(*p)
                .filter(|v| v.is_table())
                .ok_or_else(|| Error::invalid(format!("unknown config section `{p}` in `{key}`")))?;
        }
        node.as_table_mut()
            .ok_or_else(|| Error::invalid(format!("`{key}` does not name a config value")))?
            .insert(last.to_string(), value);
        let updated: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::invalid(format!("override `{key}`: {}", e.message())))?;
        *self = updated;
        Ok(())
    }

    /// Applies `key=value` overrides in order, then validates the result.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("override `{o}` is not of the form key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }
}
