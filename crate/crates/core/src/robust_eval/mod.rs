//! Robustness harness: observation attacks, gravity/friction sweeps and the
//! normalized score.
//!
//! Attacks act in normalized observation space on an L∞ ball of radius `ε`.
//! AD and MQ search a candidate set made of the clean state followed by
//! `n_candidates` uniform ball samples; ties keep the clean state.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, Policy, QFunction, SquashedGaussianPolicy};
use crate::data::NormStats;
use crate::envs::{EnvPerturbation, Pendulum, PendulumParams};
use crate::ndmath::Tensor;
use crate::penalty::min_q;
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackKind {
    /// Random point of the ball.
    #[serde(rename = "RA")]
    Ra,
    /// Maximises the Jeffreys divergence between action distributions.
    #[serde(rename = "AD")]
    Ad,
    /// Minimises the value of the action taken at the perturbed state.
    #[serde(rename = "MQ")]
    Mq,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::Ra, AttackKind::Ad, AttackKind::Mq];

    pub fn as_str(&self) -> &'static str {
        match self {
            AttackKind::Ra => "RA",
            AttackKind::Ad => "AD",
            AttackKind::Mq => "MQ",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RA" => Ok(AttackKind::Ra),
            "AD" => Ok(AttackKind::Ad),
            "MQ" => Ok(AttackKind::Mq),
            _ => Err(Error::invalid(format!("unknown attack `{s}` (expected RA, AD or MQ)"))),
        }
    }
}

pub const DEFAULT_CANDIDATES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub n_candidates: usize,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, epsilon: f64, n_candidates: usize) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("attack radius {epsilon} must be >= 0")));
        }
        if n_candidates == 0 {
            return Err(Error::invalid("n_candidates must be at least 1"));
        }
        Ok(Self { kind, epsilon, n_candidates })
    }
}

/// Uniform sample of the L∞ ball of radius `eps` around `s`.
pub fn attack_ra(s: &[f64], eps: f64, rng: &mut Rng) -> Vec<f64> {
    if eps == 0.0 {
        return s.to_vec();
    }
    s.iter()
        .map(|x| {
            let u: f64 = rng.random();
            (x + eps * (2.0 * u - 1.0)).clamp(x - eps, x + eps)
        })
        .collect()
}

/// `s` followed by `n` ball samples; just `s` when `eps = 0`.
pub fn candidates(s: &[f64], eps: f64, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut out = vec![s.to_vec()];
    if eps > 0.0 {
        out.extend((0..n).map(|_| attack_ra(s, eps, rng)));
    }
    out
}

/// Index of the best score; earlier entries win ties.
fn best(scores: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut k = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if better(v, scores[k]) {
            k = i;
        }
    }
    k
}

/// Jeffreys divergence `KL(p‖q) + KL(q‖p)` of two diagonal Gaussians.
pub fn jeffreys(mean_p: &[f64], log_std_p: &[f64], mean_q: &[f64], log_std_q: &[f64]) -> f64 {
    let mut d = 0.0;
    for j in 0..mean_p.len() {
        let vp = (2.0 * log_std_p[j]).exp();
        let vq = (2.0 * log_std_q[j]).exp();
        let dm2 = (mean_p[j] - mean_q[j]).powi(2);
        d += (vp + dm2) / (2.0 * vq) + (vq + dm2) / (2.0 * vp) - 1.0;
    }
    d
}

/// AD objective of every candidate: divergence from the policy at `s`
/// (pre-squash Gaussians).
pub fn ad_scores(s: &[f64], cands: &[Vec<f64>], policy: &SquashedGaussianPolicy) -> Result<Vec<f64>> {
    let mut rows = vec![s.to_vec()];
    rows.extend(cands.iter().cloned());
    let (mean, log_std) = policy.distribution(&Tensor::from_rows(&rows))?;
    Ok((1..rows.len()).map(|r| jeffreys(mean.row(0), log_std.row(0), mean.row(r), log_std.row(r))).collect())
}

/// MQ objective of every candidate: `min_k Q_k(s, π(c))` with the
/// deterministic action at the candidate and the value at the true state.
pub fn mq_scores<Q: QFunction, P: Policy + ?Sized>(
    s: &[f64],
    cands: &[Vec<f64>],
    policy: &P,
    critics: &[Q],
) -> Result<Vec<f64>> {
    let actions = policy.deterministic(&Tensor::from_rows(cands))?;
    let states = Tensor::from_rows(&vec![s; cands.len()]);
    min_q(critics, &states, &actions)
}

pub fn attack_ad(s: &[f64], policy: &SquashedGaussianPolicy, eps: f64, n: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let cands = candidates(s, eps, n, rng);
    let scores = ad_scores(s, &cands, policy)?;
    Ok(cands[best(&scores, |a, b| a > b)].clone())
}

pub fn attack_mq<Q: QFunction, P: Policy + ?Sized>(
    s: &[f64],
    policy: &P,
    critics: &[Q],
    eps: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let cands = candidates(s, eps, n, rng);
    let scores = mq_scores(s, &cands, policy, critics)?;
    Ok(cands[best(&scores, |a, b| a < b)].clone())
}

/// Mean and population standard deviation of episode returns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnStats {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

impl ReturnStats {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt(), returns }
    }
}

/// Runs `episodes` episodes; `choose` maps (episode, raw observation) to an action.
fn run_episodes(
    env: PendulumParams,
    episodes: usize,
    seed: u64,
    mut choose: impl FnMut(usize, &[f64]) -> Result<Vec<f64>>,
) -> Result<ReturnStats> {
    if episodes == 0 {
        return Err(Error::invalid("need at least one evaluation episode"));
    }
    let mut pendulum = Pendulum::new(env);
    let mut returns = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut start = rng_from_seed(derive_seed(seed, &format!("episode-{e}")));
        let mut obs = pendulum.reset(&mut start);
        let mut total = 0.0;
        loop {
            let a = choose(e, &obs)?;
            let out = pendulum.step(&a)?;
            total += out.reward;
            obs = out.obs;
            if out.terminal || out.truncated {
                break;
            }
        }
        returns.push(total);
    }
    Ok(ReturnStats::from_returns(returns))
}

/// Clean evaluation of the deterministic policy.
pub fn evaluate<P: Policy + ?Sized>(
    policy: &P,
    stats: &NormStats,
    env: PendulumParams,
    episodes: usize,
    seed: u64,
) -> Result<ReturnStats> {
    run_episodes(env, episodes, seed, |_, obs| {
        Ok(policy.deterministic(&Tensor::from_rows(&[stats.normalize(obs)]))?.into_data())
    })
}

/// Evaluation where the agent sees an attacked observation while the
/// environment evolves from the true state.
pub fn evaluate_under_attack(
    agent: &Agent,
    env: PendulumParams,
    spec: &AttackSpec,
    episodes: usize,
    seed: u64,
) -> Result<ReturnStats> {
    let mut attack_rng: Option<(usize, Rng)> = None;
    run_episodes(env, episodes, seed, |e, obs| {
        if attack_rng.as_ref().is_none_or(|(ep, _)| *ep != e) {
            attack_rng = Some((e, rng_from_seed(derive_seed(seed, &format!("attack-{e}")))));
        }
        let rng = &mut attack_rng.as_mut().expect("set above").1;
        let s = agent.stats.normalize(obs);
        let (eps, n) = (spec.epsilon, spec.n_candidates);
        let seen = match spec.kind {
            AttackKind::Ra => attack_ra(&s, eps, rng),
            AttackKind::Ad => attack_ad(&s, &agent.policy, eps, n, rng)?,
            AttackKind::Mq => attack_mq(&s, &agent.policy, &agent.critics.online, eps, n, rng)?,
        };
        Ok(agent.policy.deterministic(&Tensor::from_rows(&[seen]))?.into_data())
    })
}

/// One row of an attack curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub mean: f64,
    pub std: f64,
}

/// Evaluates every kind at every radius, kind-major.
pub fn attack_curve(
    agent: &Agent,
    env: PendulumParams,
    kinds: &[AttackKind],
    epsilons: &[f64],
    n_candidates: usize,
    episodes: usize,
    seed: u64,
) -> Result<Vec<AttackRecord>> {
    let mut out = Vec::with_capacity(kinds.len() * epsilons.len());
    for &kind in kinds {
        for &eps in epsilons {
            let spec = AttackSpec::new(kind, eps, n_candidates)?;
            let r = evaluate_under_attack(agent, env, &spec, episodes, seed)?;
            out.push(AttackRecord { kind, epsilon: eps, mean: r.mean, std: r.std });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub gravity: Vec<f64>,
    pub friction: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self { gravity: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0], friction: vec![0.5, 0.75, 1.0, 1.25, 1.5] }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if !self.gravity.contains(&1.0) || !self.friction.contains(&1.0) {
            return Err(Error::invalid("sweep grid must include the nominal multipliers (1, 1)"));
        }
        for &g in &self.gravity {
            for &f in &self.friction {
                EnvPerturbation::new(g, f)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub g_mult: f64,
    pub f_mult: f64,
    pub mean: f64,
}

/// Mean return per `(gravity, friction)` pair, gravity-major in declaration
/// order. Every cell uses the same episode starts.
pub fn sweep_env_params<P: Policy + ?Sized>(
    policy: &P,
    stats: &NormStats,
    base: PendulumParams,
    grid: &SweepGrid,
    episodes: usize,
    seed: u64,
) -> Result<Vec<SweepCell>> {
    grid.validate()?;
    let mut out = Vec::with_capacity(grid.gravity.len() * grid.friction.len());
    for &g in &grid.gravity {
        for &f in &grid.friction {
            let env = base.perturbed(EnvPerturbation::new(g, f)?);
            let r = evaluate(policy, stats, env, episodes, seed)?;
            out.push(SweepCell { g_mult: g, f_mult: f, mean: r.mean });
        }
    }
    Ok(out)
}

/// Reference returns of a random and an expert policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRefs {
    pub random: f64,
    pub expert: f64,
}

impl ScoreRefs {
    pub fn new(random: f64, expert: f64) -> Result<Self> {
        if !(expert > random) {
            return Err(Error::invalid(format!("expert return {expert} must exceed random return {random}")));
        }
        Ok(Self { random, expert })
    }
}

/// `100·(S − S_r)/(S_e − S_r)`.
pub fn normalized_score(s: f64, refs: &ScoreRefs) -> Result<f64> {
    if refs.expert == refs.random {
        return Err(Error::invalid("normalized score undefined when expert and random returns coincide"));
    }
    Ok((s - refs.random) / (refs.expert - refs.random) * 100.0)
}
