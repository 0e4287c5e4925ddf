//! The uncertainty-set penalty and the conservative critic target.
//!
//! `f(s,a) = Q̃(s') − min_{s̄ ∈ X(s,a)} Q̃(s̄)` where `Q̃(x) = min_k Q_k(x, a_x)`
//! with `a_x` drawn from the policy at `x`. The maximisation over next actions
//! is replaced by that single policy sample, the same surrogate the SAC target
//! uses; in [`critic_targets`] the sample drawn for the target at `s'` is
//! reused for `Q̃(s')`.
//!
//! The penalty only applies to model-generated transitions. It is not clipped
//! at zero and carries no gradient.

use serde::Serialize;

use crate::agent::{Policy, QFunction};
use crate::data::{BatchItem, Source};
use crate::dynamics::GaussianEnsemble;
use crate::ndmath::Tensor;
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    pub beta: f64,
}

impl PenaltyConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("penalty coefficient beta = {beta} must be >= 0")));
        }
        Ok(Self { beta })
    }
}

/// Elementwise minimum over the critics' values.
pub fn min_q<Q: QFunction>(critics: &[Q], obs: &Tensor, act: &Tensor) -> Result<Vec<f64>> {
    let mut out: Option<Vec<f64>> = None;
    for c in critics {
        let q = c.q(obs, act)?;
        out = Some(match out {
            None => q,
            Some(prev) => prev.into_iter().zip(q).map(|(a, b)| a.min(b)).collect(),
        });
    }
    out.ok_or(Error::Empty("critic set"))
}

/// `Q̃(x)` for each row of `states`.
pub fn q_tilde<Q: QFunction, P: Policy + ?Sized>(
    critics: &[Q],
    policy: &P,
    states: &Tensor,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let (actions, _) = policy.sample(states, rng)?;
    min_q(critics, states, &actions)
}

/// `min_{s̄ ∈ X} Q̃(s̄)` for each set, evaluated in one batch.
fn set_minima<Q: QFunction, P: Policy + ?Sized>(
    critics: &[Q],
    policy: &P,
    sets: &[&[Vec<f64>]],
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if let Some(i) = sets.iter().position(|x| x.is_empty()) {
        return Err(Error::invalid(format!("uncertainty set of item {i} is empty")));
    }
    let rows: Vec<&Vec<f64>> = sets.iter().flat_map(|x| x.iter()).collect();
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let values = q_tilde(critics, policy, &Tensor::from_rows(&rows), rng)?;
    let mut out = Vec::with_capacity(sets.len());
    let mut at = 0;
    for x in sets {
        out.push(values[at..at + x.len()].iter().copied().fold(f64::INFINITY, f64::min));
        at += x.len();
    }
    Ok(out)
}

/// `f` for each row given the next states and their uncertainty sets.
pub fn penalty_from_sets<Q: QFunction, P: Policy + ?Sized>(
    critics: &[Q],
    policy: &P,
    next_states: &Tensor,
    sets: &[&[Vec<f64>]],
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if sets.len() != next_states.rows() {
        return Err(Error::Shape {
            context: "penalty sets".into(),
            expected: vec![next_states.rows()],
            got: vec![sets.len()],
        });
    }
    let at_next = q_tilde(critics, policy, next_states, rng)?;
    let minima = set_minima(critics, policy, sets, rng)?;
    Ok(at_next.iter().zip(&minima).map(|(q, m)| q - m).collect())
}

/// `f(s, a)` with `s'` from the ensemble mixture and `X(s, a)` from its elites.
pub fn penalty_f<Q: QFunction, P: Policy + ?Sized>(
    critics: &[Q],
    policy: &P,
    ensemble: &GaussianEnsemble,
    s: &[f64],
    a: &[f64],
    rng: &mut Rng,
) -> Result<f64> {
    let next = ensemble.sample_mixture(s, a, rng)?;
    let set = ensemble.predict_set(s, a, rng)?;
    let f = penalty_from_sets(critics, policy, &Tensor::from_rows(&[next]), &[set.as_slice()], rng)?;
    Ok(f[0])
}

/// One transition's target:
/// `r + γ·[min Q' − α·log π − β·f]`, or `r` when `done`. `f` is ignored for
/// offline transitions.
#[allow(clippy::too_many_arguments)]
pub fn target_value(
    r: f64,
    done: bool,
    source: Source,
    gamma: f64,
    min_q_next: f64,
    alpha: f64,
    log_pi_next: f64,
    beta: f64,
    f: f64,
) -> f64 {
    if done {
        return r;
    }
    let penalty = match source {
        Source::Model => beta * f,
        Source::Offline => 0.0,
    };
    r + gamma * (min_q_next - alpha * log_pi_next - penalty)
}

/// Per-batch summary emitted to the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PenaltyDiagnostics {
    /// Mean and max of `f` over model transitions; `None` when no penalty was computed.
    pub mean_f: Option<f64>,
    pub max_f: Option<f64>,
    pub model_fraction: f64,
    pub mean_target: f64,
}

/// Targets for a mixed batch, using the target critics.
///
/// The penalty is evaluated only when `beta > 0` and the batch holds model
/// transitions; with `beta = 0` the computation (and its random draws) is the
/// plain soft actor-critic target.
pub fn critic_targets<Q: QFunction, P: Policy + ?Sized>(
    batch: &[BatchItem<'_>],
    target_critics: &[Q],
    policy: &P,
    alpha: f64,
    gamma: f64,
    config: &PenaltyConfig,
    rng: &mut Rng,
) -> Result<(Vec<f64>, PenaltyDiagnostics)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let s2 = Tensor::from_rows(&batch.iter().map(|b| b.transition.s2.as_slice()).collect::<Vec<_>>());
    let (a2, logp) = policy.sample(&s2, rng)?;
    let q_next = min_q(target_critics, &s2, &a2)?;

    let model_idx: Vec<usize> = (0..batch.len()).filter(|&i| batch[i].source() == Source::Model).collect();
    let mut f = vec![0.0; batch.len()];
    let mut computed = false;
    if config.beta > 0.0 && !model_idx.is_empty() {
        let sets = model_idx
            .iter()
            .map(|&i| {
                batch[i].next_set.ok_or_else(|| Error::invalid(format!("model transition {i} has no uncertainty set")))
            })
            .collect::<Result<Vec<_>>>()?;
        let minima = set_minima(target_critics, policy, &sets, rng)?;
        for (&i, m) in model_idx.iter().zip(minima) {
            f[i] = q_next[i] - m;
        }
        computed = true;
    }

    let targets: Vec<f64> = batch
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let t = b.transition;
            target_value(t.r, t.done, t.source, gamma, q_next[i], alpha, logp[i], config.beta, f[i])
        })
        .collect();
    let (mean_f, max_f) = if computed {
        let vals: Vec<f64> = model_idx.iter().map(|&i| f[i]).collect();
        (
            Some(vals.iter().sum::<f64>() / vals.len() as f64),
            Some(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        )
    } else {
        (None, None)
    };
    let diag = PenaltyDiagnostics {
        mean_f,
        max_f,
        model_fraction: model_idx.len() as f64 / batch.len() as f64,
        mean_target: targets.iter().sum::<f64>() / targets.len() as f64,
    };
    if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFinite(format!("critic target of batch item {i}")));
    }
    Ok((targets, diag))
}
