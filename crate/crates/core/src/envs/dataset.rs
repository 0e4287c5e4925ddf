use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::behavior::{run_episode, train_behavior, BehaviorPolicy, BehaviorTraining, CemConfig};
use super::pendulum::{Pendulum, PendulumParams, ACT_DIM, ENV_ID, OBS_DIM};
use crate::data::{Dataset, DatasetHeader, Transition};
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetTier {
    /// Rollouts of the half-trained policy.
    Medium,
    /// The training replay buffer up to the half-trained checkpoint.
    MediumReplay,
    /// Half-trained and expert rollouts, half each.
    MediumExpert,
}

impl DatasetTier {
    pub const ALL: [DatasetTier; 3] = [DatasetTier::Medium, DatasetTier::MediumReplay, DatasetTier::MediumExpert];

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetTier::Medium => "medium",
            DatasetTier::MediumReplay => "medium-replay",
            DatasetTier::MediumExpert => "medium-expert",
        }
    }
}

impl fmt::Display for DatasetTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "medium" => Ok(DatasetTier::Medium),
            "medium-replay" => Ok(DatasetTier::MediumReplay),
            "medium-expert" => Ok(DatasetTier::MediumExpert),
            other => Err(Error::invalid(format!(
                "unknown dataset tier `{other}` (expected medium, medium-replay or medium-expert)"
            ))),
        }
    }
}

/// Which behavior policy produced a generated transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BehaviorLabel {
    HalfTrained,
    Expert,
    Replay,
}

/// Exploration noise of the behavior policies during data collection.
pub const BEHAVIOR_NOISE: f64 = 0.1;

/// Collects exactly `n` transitions from consecutive episodes of `policy`.
fn collect(policy: &BehaviorPolicy, n: usize, seed: u64) -> Result<Vec<Transition>> {
    let mut env = Pendulum::new(PendulumParams::default());
    let mut start = rng_from_seed(derive_seed(seed, "starts"));
    let mut noise = rng_from_seed(derive_seed(seed, "noise"));
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        run_episode(&mut env, |o| policy.act(o, &mut noise), &mut start, Some(&mut out))?;
    }
    out.truncate(n);
    Ok(out)
}

/// Generates a labeled dataset from an already trained behavior sequence.
pub fn generate_from(
    training: &BehaviorTraining,
    tier: DatasetTier,
    n_transitions: usize,
    seed: u64,
) -> Result<Vec<(Transition, BehaviorLabel)>> {
    if n_transitions == 0 {
        return Err(Error::invalid("n_transitions must be at least 1"));
    }
    let tag = |v: Vec<Transition>, l: BehaviorLabel| v.into_iter().map(move |t| (t, l));
    Ok(match tier {
        DatasetTier::Medium => {
            let half = training.half_trained(BEHAVIOR_NOISE);
            tag(collect(&half, n_transitions, derive_seed(seed, "medium"))?, BehaviorLabel::HalfTrained).collect()
        }
        DatasetTier::MediumExpert => {
            let n_half = n_transitions / 2;
            let n_expert = n_transitions - n_half;
            let half = training.half_trained(BEHAVIOR_NOISE);
            let expert = training.expert(BEHAVIOR_NOISE);
            let mut out: Vec<_> =
                tag(collect(&half, n_half, derive_seed(seed, "medium"))?, BehaviorLabel::HalfTrained).collect();
            out.extend(tag(collect(&expert, n_expert, derive_seed(seed, "expert"))?, BehaviorLabel::Expert));
            out
        }
        DatasetTier::MediumReplay => {
            let buffer: Vec<&Transition> = training.replay_until_half().collect();
            let mut rng = rng_from_seed(derive_seed(seed, "replay"));
            let picks: Vec<usize> = if buffer.len() >= n_transitions {
                let mut idx = sample_indices(&mut rng, buffer.len(), n_transitions).into_vec();
                idx.sort_unstable();
                idx
            } else {
                // Short buffer: keep all of it, top up with repeats.
                let mut idx: Vec<usize> = (0..buffer.len()).collect();
                idx.extend((buffer.len()..n_transitions).map(|_| rng.random_range(0..buffer.len())));
                idx
            };
            picks.into_iter().map(|i| (buffer[i].clone(), BehaviorLabel::Replay)).collect()
        }
    })
}

/// Builds a dataset of the requested tier from an already trained
/// behavior sequence.
pub fn dataset_from(
    training: &BehaviorTraining,
    tier: DatasetTier,
    n_transitions: usize,
    seed: u64,
) -> Result<Dataset> {
    let labeled = generate_from(training, tier, n_transitions, seed)?;
    Ok(Dataset {
        header: DatasetHeader {
            env: ENV_ID.to_string(),
            tier: tier.to_string(),
            seed,
            obs_dim: OBS_DIM,
            act_dim: ACT_DIM,
        },
        transitions: labeled.into_iter().map(|(t, _)| t).collect(),
    })
}

/// Trains the behavior policies for `seed` and generates `n_transitions`
/// offline transitions of the requested tier.
pub fn generate_dataset(tier: DatasetTier, n_transitions: usize, seed: u64) -> Result<Dataset> {
    if n_transitions == 0 {
        return Err(Error::invalid("n_transitions must be at least 1"));
    }
    let training = train_behavior(&CemConfig::default(), seed)?;
    dataset_from(&training, tier, n_transitions, seed)
}
