use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::TabularMdp;
use crate::{Error, Result};

/// On-disk layout of a fixture file (TOML).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFixture {
    name: String,
    gamma: f64,
    /// `transitions[s][a][s']`
    transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[s][a]`
    rewards: Vec<Vec<f64>>,
    /// Kernel of the estimated MDP; defaults to the true one.
    estimated_transitions: Option<Vec<Vec<Vec<f64>>>>,
    /// `true` marks accurate (true-MDP) entries; defaults to all false.
    accurate: Option<Vec<Vec<bool>>>,
}

/// A true MDP, an estimate of it, and the source mask of the conservative
/// operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub name: String,
    pub mdp: TabularMdp,
    pub estimated: TabularMdp,
    pub accurate: Vec<Vec<bool>>,
}

pub fn parse_fixture(text: &str, origin: &str) -> Result<Fixture> {
    let raw: RawFixture = toml::from_str(text).map_err(|e| Error::invalid(format!("{origin}: {e}")))?;
    let context = |e: Error| Error::invalid(format!("{origin}: {e}"));
    let mdp = TabularMdp::new(raw.transitions, raw.rewards.clone(), raw.gamma).map_err(context)?;
    let estimated = match raw.estimated_transitions {
        Some(p) => TabularMdp::new(p, raw.rewards, raw.gamma)
            .map_err(|e| Error::invalid(format!("{origin}: estimated MDP: {e}")))?,
        None => mdp.clone(),
    };
    if estimated.n_states != mdp.n_states || estimated.n_actions != mdp.n_actions {
        return Err(Error::invalid(format!("{origin}: estimated MDP has a different size")));
    }
    let accurate = raw.accurate.unwrap_or_else(|| vec![vec![false; mdp.n_actions]; mdp.n_states]);
    if accurate.len() != mdp.n_states || accurate.iter().any(|r| r.len() != mdp.n_actions) {
        return Err(Error::invalid(format!("{origin}: mask does not match the MDP")));
    }
    Ok(Fixture { name: raw.name, mdp, estimated, accurate })
}

pub fn load_fixture(path: impl AsRef<Path>) -> Result<Fixture> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fixture(&text, &path.display().to_string())
}

/// Paths of every `*.toml` file of `dir`, sorted by file name.
pub fn fixture_paths(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no fixtures in {}", dir.display())));
    }
    Ok(paths)
}

pub fn load_fixture_dir(dir: impl AsRef<Path>) -> Result<Vec<Fixture>> {
    fixture_paths(dir)?.iter().map(load_fixture).collect()
}
