//! Behavior policies for dataset generation.
//!
//! A small tanh network is trained with the cross-entropy method on the
//! nominal pendulum. The generation-by-generation means form a sequence of
//! checkpoints: the best one is the expert, and the one whose return sits
//! halfway between a uniform-random policy and the expert is the
//! half-trained policy. Rollouts of a few candidates per generation are
//! kept as the replay buffer.

use rand::Rng;
use rand_distr::StandardNormal;

use super::pendulum::{Pendulum, PendulumParams, OBS_DIM};
use crate::data::{Source, Transition};
use crate::rng::{derive_seed, rng_from_seed};
use crate::Result;

/// `obs -> hidden (tanh) -> 1`, squashed to the torque range.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorPolicy {
    pub params: Vec<f64>,
    pub hidden: usize,
    pub max_torque: f64,
    /// Exploration noise as a fraction of the torque range.
    pub noise: f64,
}

/// Brings `(cos θ, sin θ, ω)` to comparable magnitudes.
const INPUT_SCALE: [f64; OBS_DIM] = [1.0, 1.0, 0.2];

pub fn num_params(hidden: usize) -> usize {
    OBS_DIM * hidden + hidden + hidden + 1
}

impl BehaviorPolicy {
    pub fn mean_action(&self, obs: &[f64]) -> f64 {
        let h = self.hidden;
        let (w1, rest) = self.params.split_at(OBS_DIM * h);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h);
        let mut out = b2[0];
        for j in 0..h {
            let mut z = b1[j];
            for (i, x) in obs.iter().enumerate() {
                z += w1[i * h + j] * x * INPUT_SCALE[i];
            }
            out += w2[j] * z.tanh();
        }
        self.max_torque * out.tanh()
    }

    pub fn act(&self, obs: &[f64], rng: &mut impl Rng) -> f64 {
        let mean = self.mean_action(obs);
        if self.noise == 0.0 {
            return mean;
        }
        let eps: f64 = rng.sample(StandardNormal);
        (mean + self.noise * self.max_torque * eps).clamp(-self.max_torque, self.max_torque)
    }

    pub fn with_noise(&self, noise: f64) -> Self {
        Self { noise, ..self.clone() }
    }
}

/// Runs one episode from a start drawn with `start_rng`, appending
/// transitions to `sink` when given. Returns the undiscounted return.
pub fn run_episode(
    env: &mut Pendulum,
    mut policy: impl FnMut(&[f64]) -> f64,
    start_rng: &mut impl Rng,
    mut sink: Option<&mut Vec<Transition>>,
) -> Result<f64> {
    let mut obs = env.reset(start_rng);
    let mut total = 0.0;
    loop {
        let u = policy(&obs);
        let out = env.step(&[u])?;
        total += out.reward;
        if let Some(s) = sink.as_deref_mut() {
            s.push(Transition {
                s: obs,
                a: vec![u.clamp(-env.params.max_torque, env.params.max_torque)],
                r: out.reward,
                s2: out.obs.clone(),
                done: out.terminal,
                source: Source::Offline,
            });
        }
        obs = out.obs;
        if out.terminal || out.truncated {
            return Ok(total);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CemConfig {
    pub hidden: usize,
    pub population: usize,
    pub elites: usize,
    pub generations: usize,
    /// Episodes per candidate; starts are shared by all candidates of a generation.
    pub episodes_per_candidate: usize,
    pub init_std: f64,
    /// Added to the elite spread each generation, decaying linearly to zero.
    pub extra_std: f64,
    /// Exploration noise used while collecting training rollouts.
    pub rollout_noise: f64,
    pub eval_episodes: usize,
    /// Candidates per generation whose rollouts are kept as replay data.
    pub replay_candidates: usize,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            population: 50,
            elites: 10,
            generations: 100,
            episodes_per_candidate: 2,
            init_std: 1.0,
            extra_std: 0.2,
            rollout_noise: 0.1,
            eval_episodes: 10,
            replay_candidates: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BehaviorTraining {
    pub config: CemConfig,
    /// Mean parameters after each generation.
    pub checkpoints: Vec<Vec<f64>>,
    /// Deterministic evaluation return of each checkpoint.
    pub checkpoint_returns: Vec<f64>,
    /// Training transitions of the first `replay_candidates` candidates, tagged with their generation.
    pub replay: Vec<(usize, Transition)>,
    pub random_return: f64,
    pub expert_index: usize,
    pub half_index: usize,
}

impl BehaviorTraining {
    pub fn policy(&self, index: usize, noise: f64) -> BehaviorPolicy {
        BehaviorPolicy {
            params: self.checkpoints[index].clone(),
            hidden: self.config.hidden,
            max_torque: PendulumParams::default().max_torque,
            noise,
        }
    }

    pub fn expert(&self, noise: f64) -> BehaviorPolicy {
        self.policy(self.expert_index, noise)
    }

    pub fn half_trained(&self, noise: f64) -> BehaviorPolicy {
        self.policy(self.half_index, noise)
    }

    pub fn expert_return(&self) -> f64 {
        self.checkpoint_returns[self.expert_index]
    }

    pub fn half_return(&self) -> f64 {
        self.checkpoint_returns[self.half_index]
    }

    /// Replay transitions collected up to and including the half-trained generation.
    pub fn replay_until_half(&self) -> impl Iterator<Item = &Transition> {
        let last = self.half_index;
        self.replay.iter().filter(move |(g, _)| *g <= last).map(|(_, t)| t)
    }
}

/// Mean return (noise as configured on `policy`) over `episodes` fixed starts derived from `seed`.
pub fn evaluate(params: PendulumParams, policy: &BehaviorPolicy, episodes: usize, seed: u64) -> Result<f64> {
    let mut env = Pendulum::new(params);
    let mut total = 0.0;
    for e in 0..episodes {
        let mut start = rng_from_seed(derive_seed(seed, &format!("episode-{e}")));
        let mut noise = rng_from_seed(derive_seed(seed, &format!("noise-{e}")));
        total += run_episode(&mut env, |o| policy.act(o, &mut noise), &mut start, None)?;
    }
    Ok(total / episodes as f64)
}

pub fn random_policy_return(params: PendulumParams, episodes: usize, seed: u64) -> Result<f64> {
    let mut env = Pendulum::new(params);
    let mut total = 0.0;
    let m = params.max_torque;
    for e in 0..episodes {
        let mut start = rng_from_seed(derive_seed(seed, &format!("episode-{e}")));
        let mut noise = rng_from_seed(derive_seed(seed, &format!("random-{e}")));
        total += run_episode(&mut env, |_| noise.random_range(-m..m), &mut start, None)?;
    }
    Ok(total / episodes as f64)
}

pub fn train_behavior(config: &CemConfig, seed: u64) -> Result<BehaviorTraining> {
    let params = PendulumParams::default();
    let dim = num_params(config.hidden);
    let mut rng = rng_from_seed(derive_seed(seed, "cem"));
    let eval_seed = derive_seed(seed, "cem-eval");

    let mut mean = vec![0.0; dim];
    let mut std = vec![config.init_std; dim];
    let mut env = Pendulum::new(params);
    let mut checkpoints = Vec::with_capacity(config.generations);
    let mut checkpoint_returns = Vec::with_capacity(config.generations);
    let mut replay = Vec::new();

    for gen in 0..config.generations {
        let start_seed = derive_seed(seed, &format!("cem-gen-{gen}"));
        let mut scored: Vec<(f64, Vec<f64>)> = Vec::with_capacity(config.population);
        for c in 0..config.population {
            let cand: Vec<f64> =
                mean.iter().zip(&std).map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal)).collect();
            let policy = BehaviorPolicy {
                params: cand.clone(),
                hidden: config.hidden,
                max_torque: params.max_torque,
                noise: config.rollout_noise,
            };
            let mut ep_rng = rng_from_seed(start_seed);
            let mut noise_rng = rng_from_seed(derive_seed(start_seed, &format!("cand-{c}")));
            let mut sink = Vec::new();
            let keep = c < config.replay_candidates;
            let mut ret = 0.0;
            for _ in 0..config.episodes_per_candidate {
                let out = if keep { Some(&mut sink) } else { None };
                ret += run_episode(&mut env, |o| policy.act(o, &mut noise_rng), &mut ep_rng, out)?;
            }
            replay.extend(sink.into_iter().map(|t| (gen, t)));
            scored.push((ret, cand));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let elites = &scored[..config.elites];
        let k = config.elites as f64;
        let extra = config.extra_std * (1.0 - gen as f64 / config.generations as f64);
        for j in 0..dim {
            let m = elites.iter().map(|(_, p)| p[j]).sum::<f64>() / k;
            let v = elites.iter().map(|(_, p)| (p[j] - m).powi(2)).sum::<f64>() / k;
            mean[j] = m;
            std[j] = v.sqrt() + extra;
        }
        let policy =
            BehaviorPolicy { params: mean.clone(), hidden: config.hidden, max_torque: params.max_torque, noise: 0.0 };
        checkpoint_returns.push(evaluate(params, &policy, config.eval_episodes, eval_seed)?);
        checkpoints.push(mean.clone());
    }

    let random_return = random_policy_return(params, config.eval_episodes, eval_seed)?;
    let expert_index = checkpoint_returns.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap();
    let target = random_return + 0.5 * (checkpoint_returns[expert_index] - random_return);
    let half_index = (0..=expert_index)
        .min_by(|&a, &b| (checkpoint_returns[a] - target).abs().total_cmp(&(checkpoint_returns[b] - target).abs()))
        .unwrap();

    Ok(BehaviorTraining {
        config: config.clone(),
        checkpoints,
        checkpoint_returns,
        replay,
        random_return,
        expert_index,
        half_index,
    })
}
