use rand::Rng;

use super::ensemble::GaussianEnsemble;
use crate::data::{ModelRecord, Source, Transition};
use crate::ndmath::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub horizon: usize,
    /// Start states per rollout round.
    pub batch_size: usize,
}

/// Uniformly drawn (with replacement) start observations.
pub fn sample_starts(offline: &[Transition], n: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    if offline.is_empty() {
        return Err(Error::Empty("offline store"));
    }
    Ok((0..n).map(|_| offline[rng.random_range(0..offline.len())].s.clone()).collect())
}

/// Generates model transitions from `starts`, up to `horizon` steps each.
///
/// `policy` maps a batch of states to actions. Rewards and terminations come
/// from the known `reward` and `terminal` functions; a trajectory stops after
/// a terminal step. Each record also carries the uncertainty set `X(s, a)`
/// drawn alongside its next state.
pub fn rollout(
    ensemble: &GaussianEnsemble,
    starts: &[Vec<f64>],
    horizon: usize,
    mut policy: impl FnMut(&Tensor) -> Result<Tensor>,
    reward: impl Fn(&[f64], &[f64]) -> f64,
    terminal: impl Fn(&[f64]) -> bool,
    rng: &mut impl Rng,
) -> Result<Vec<ModelRecord>> {
    if horizon < 1 {
        return Err(Error::invalid("rollout horizon must be at least 1"));
    }
    if !ensemble.is_trained() {
        return Err(Error::Untrained);
    }
    let mut out = Vec::with_capacity(starts.len() * horizon);
    let mut active: Vec<Vec<f64>> = starts.to_vec();
    for _ in 0..horizon {
        if active.is_empty() {
            break;
        }
        let states = Tensor::from_rows(&active);
        let actions = policy(&states)?;
        let preds = ensemble.elite_predictions(&states, &actions)?;
        let sets = ensemble.sample_set(&preds, rng);
        let (next, _) = ensemble.sample_mixture_from(&preds, rng);
        let mut survivors = Vec::with_capacity(active.len());
        for (i, s) in active.into_iter().enumerate() {
            let a = actions.row(i).to_vec();
            let s2 = next.row(i).to_vec();
            if !s2.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("model rollout state".into()));
            }
            let done = terminal(&s2);
            let r = reward(&s, &a);
            out.push(ModelRecord {
                transition: Transition { s, a, r, s2: s2.clone(), done, source: Source::Model },
                next_set: sets.iter().map(|x| x.row(i).to_vec()).collect(),
            });
            if !done {
                survivors.push(s2);
            }
        }
        active = survivors;
    }
    Ok(out)
}
