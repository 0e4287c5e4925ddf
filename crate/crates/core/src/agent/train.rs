use serde::{Deserialize, Serialize};

use super::policy::SquashedGaussianPolicy;
use super::sac::{update_critics, update_policy, CriticSet, EntropyTemp};
use super::Policy;
use crate::data::{MixedBuffer, ModelRecord, NormStats, Source, Transition};
use crate::dynamics::{rollout, sample_starts, GaussianEnsemble};
use crate::envs::{pendulum, PendulumParams};
use crate::ndmath::{AdamState, Checkpoint, Tensor};
use crate::penalty::{critic_targets, PenaltyConfig};
use crate::rng::{rng_from_seed, Rng, RngState, SeedStreams};
use crate::robust_eval::evaluate;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub n_iter: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub tau: f64,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub initial_alpha: f64,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub n_critics: usize,
    /// Model rollout length `h`.
    pub horizon: usize,
    /// Penalty coefficient `β`.
    pub beta: f64,
    /// Probability that a batch element comes from the model store.
    pub model_data_prob: f64,
    /// Gradient steps between rollout rounds.
    pub rollout_interval: usize,
    /// Start states per rollout round.
    pub rollout_batch_size: usize,
    /// Model store capacity; defaults to ten rounds of rollouts.
    pub model_capacity: Option<usize>,
    pub eval_interval: usize,
    pub eval_episodes: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            n_iter: 100_000,
            batch_size: 256,
            gamma: 0.99,
            tau: 5e-3,
            lr_policy: 1e-4,
            lr_critic: 3e-4,
            lr_alpha: 1e-4,
            initial_alpha: 1.0,
            hidden_layers: 2,
            hidden_units: 256,
            n_critics: 2,
            horizon: 5,
            beta: 0.5,
            model_data_prob: 0.95,
            rollout_interval: 1000,
            rollout_batch_size: 1000,
            model_capacity: None,
            eval_interval: 5000,
            eval_episodes: 10,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("horizon", self.horizon),
            ("rollout_interval", self.rollout_interval),
            ("rollout_batch_size", self.rollout_batch_size),
            ("eval_interval", self.eval_interval),
            ("eval_episodes", self.eval_episodes),
            ("hidden_units", self.hidden_units),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.model_capacity == Some(0) {
            return Err(Error::invalid("model_capacity must be positive"));
        }
        if self.n_critics < 2 {
            return Err(Error::invalid(format!("n_critics must be at least 2, got {}", self.n_critics)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid(format!("tau {} outside [0, 1]", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.model_data_prob) {
            return Err(Error::invalid(format!("model_data_prob {} outside [0, 1]", self.model_data_prob)));
        }
        PenaltyConfig::new(self.beta)?;
        for (name, lr) in [
            ("lr_policy", self.lr_policy),
            ("lr_critic", self.lr_critic),
            ("lr_alpha", self.lr_alpha),
            ("initial_alpha", self.initial_alpha),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("{name} = {lr} must be positive")));
            }
        }
        Ok(())
    }

    pub fn capacity(&self) -> usize {
        self.model_capacity.unwrap_or(10 * self.rollout_batch_size * self.horizon)
    }

    fn hidden(&self) -> Vec<usize> {
        vec![self.hidden_units; self.hidden_layers]
    }
}

/// Policy, critics, temperature and their optimisers. The networks consume
/// normalized observations; `stats` maps raw observations into that space.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub policy: SquashedGaussianPolicy,
    pub policy_optim: AdamState,
    pub critics: CriticSet,
    pub temp: EntropyTemp,
    pub stats: NormStats,
}

impl Agent {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        max_action: f64,
        stats: NormStats,
        config: &AgentConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let hidden = config.hidden();
        let policy = SquashedGaussianPolicy::new(obs_dim, act_dim, &hidden, max_action, &mut rng);
        let critics =
            CriticSet::new(obs_dim, act_dim, &hidden, config.n_critics, config.lr_critic, config.tau, &mut rng)?;
        Ok(Self {
            policy_optim: AdamState::new(config.lr_policy, &policy.net.param_shapes()),
            policy,
            critics,
            temp: EntropyTemp::new(config.initial_alpha, act_dim, config.lr_alpha)?,
            stats,
        })
    }

    /// Deterministic action for a raw observation.
    pub fn act(&self, raw_obs: &[f64]) -> Result<Vec<f64>> {
        let obs = Tensor::from_rows(&[self.stats.normalize(raw_obs)]);
        Ok(self.policy.deterministic(&obs)?.into_data())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.set_meta("kind", "agent");
        c.set_meta("act_dim", self.policy.act_dim);
        c.set_meta("max_action", format!("{:?}", self.policy.max_action));
        c.set_meta("tau", format!("{:?}", self.critics.tau));
        c.set_meta("target_entropy", format!("{:?}", self.temp.target_entropy));
        c.set_meta("n_critics", self.critics.online.len());
        c.set_meta("stats", serde_json::to_string(&self.stats).expect("stats serialize"));
        c.insert_mlp("policy", &self.policy.net);
        c.insert("log_alpha", self.temp.log_alpha.clone());
        insert_adam(&mut c, "policy_optim", &self.policy_optim);
        insert_adam(&mut c, "alpha_optim", &self.temp.optim);
        for i in 0..self.critics.online.len() {
            c.insert_mlp(&format!("critic{i}"), &self.critics.online[i]);
            c.insert_mlp(&format!("target{i}"), &self.critics.target[i]);
            insert_adam(&mut c, &format!("critic{i}_optim"), &self.critics.optim[i]);
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.meta("kind")? != "agent" {
            return Err(Error::invalid("checkpoint does not hold an agent"));
        }
        let act_dim: usize = c.meta_parse("act_dim")?;
        let max_action: f64 = c.meta_parse("max_action")?;
        let k: usize = c.meta_parse("n_critics")?;
        let stats: NormStats =
            serde_json::from_str(c.meta("stats")?).map_err(|e| Error::invalid(format!("checkpoint stats: {e}")))?;
        let policy = SquashedGaussianPolicy::from_net(c.get_mlp("policy")?, act_dim, max_action)?;
        let mut online = Vec::with_capacity(k);
        let mut target = Vec::with_capacity(k);
        let mut optim = Vec::with_capacity(k);
        for i in 0..k {
            online.push(c.get_mlp(&format!("critic{i}"))?);
            target.push(c.get_mlp(&format!("target{i}"))?);
            optim.push(get_adam(c, &format!("critic{i}_optim"))?);
        }
        Ok(Self {
            policy_optim: get_adam(c, "policy_optim")?,
            policy,
            critics: CriticSet { online, target, optim, tau: c.meta_parse("tau")? },
            temp: EntropyTemp {
                log_alpha: c.get("log_alpha")?.clone(),
                target_entropy: c.meta_parse("target_entropy")?,
                optim: get_adam(c, "alpha_optim")?,
            },
            stats,
        })
    }
}

fn insert_adam(c: &mut Checkpoint, prefix: &str, a: &AdamState) {
    c.set_meta(&format!("{prefix}.step"), a.step);
    c.set_meta(&format!("{prefix}.lr"), format!("{:?}", a.lr));
    c.set_meta(&format!("{prefix}.n"), a.m.len());
    for (i, (m, v)) in a.m.iter().zip(&a.v).enumerate() {
        c.insert(format!("{prefix}.m{i}"), m.clone());
        c.insert(format!("{prefix}.v{i}"), v.clone());
    }
}

fn get_adam(c: &Checkpoint, prefix: &str) -> Result<AdamState> {
    let n: usize = c.meta_parse(&format!("{prefix}.n"))?;
    let mut m = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        m.push(c.get(&format!("{prefix}.m{i}"))?.clone());
        v.push(c.get(&format!("{prefix}.v{i}"))?.clone());
    }
    let shapes: Vec<Vec<usize>> = m.iter().map(|t| t.shape().to_vec()).collect();
    let mut a = AdamState::new(c.meta_parse(&format!("{prefix}.lr"))?, &shapes);
    a.step = c.meta_parse(&format!("{prefix}.step"))?;
    a.m = m;
    a.v = v;
    Ok(a)
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub alpha: f64,
    pub mean_f: Option<f64>,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
}

/// What the training loop reads but never modifies.
#[derive(Debug, Clone, Copy)]
pub struct TrainInputs<'a> {
    /// Offline transitions in normalized observation space.
    pub offline: &'a [Transition],
    pub stats: &'a NormStats,
    pub ensemble: &'a GaussianEnsemble,
    /// Environment used for the periodic evaluations.
    pub env: PendulumParams,
    pub seed: u64,
}

#[derive(Default)]
struct Interval {
    steps: usize,
    critic_loss: f64,
    policy_loss: f64,
    f_sum: f64,
    f_batches: usize,
}

/// Everything needed to continue a run bit for bit.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub agent: Agent,
    pub buffer: MixedBuffer,
    pub agent_rng: Rng,
    pub rollout_rng: Rng,
    pub step: usize,
    pub metrics: Vec<MetricsRecord>,
}

impl TrainState {
    pub fn new(inputs: &TrainInputs, config: &AgentConfig) -> Result<Self> {
        config.validate()?;
        let first = inputs.offline.first().ok_or(Error::Empty("offline dataset"))?;
        let streams = SeedStreams::new(inputs.seed);
        let agent = Agent::new(
            first.s.len(),
            first.a.len(),
            inputs.env.max_torque,
            inputs.stats.clone(),
            config,
            streams.seed("agent-init"),
        )?;
        Ok(Self {
            agent,
            buffer: MixedBuffer::new(inputs.offline.to_vec(), config.capacity(), config.model_data_prob)?,
            agent_rng: streams.rng(SeedStreams::AGENT),
            rollout_rng: streams.rng(SeedStreams::ROLLOUT),
            step: 0,
            metrics: Vec::new(),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = self.agent.to_checkpoint();
        c.set_meta("kind", "train-state");
        c.set_meta("step", self.step);
        c.set_meta("agent_rng", RngState::capture(&self.agent_rng).encode());
        c.set_meta("rollout_rng", RngState::capture(&self.rollout_rng).encode());
        for (i, m) in self.metrics.iter().enumerate() {
            c.set_meta(&format!("metrics.{i:06}"), serde_json::to_string(m).expect("metrics serialize"));
        }
        let recs: Vec<&ModelRecord> = self.buffer.model().iter().collect();
        c.set_meta("model_records", recs.len());
        if let Some(r0) = recs.first() {
            let rows = |f: &dyn Fn(&ModelRecord) -> Vec<f64>| {
                Tensor::from_rows(&recs.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            c.insert("model.s", rows(&|r| r.transition.s.clone()));
            c.insert("model.a", rows(&|r| r.transition.a.clone()));
            c.insert("model.s2", rows(&|r| r.transition.s2.clone()));
            c.insert("model.r_done", rows(&|r| vec![r.transition.r, f64::from(u8::from(r.transition.done))]));
            c.insert("model.sets", rows(&|r| r.next_set.concat()));
            c.set_meta("model_set_size", r0.next_set.len());
        }
        c
    }

    /// Restores a state written by [`to_checkpoint`](Self::to_checkpoint).
    /// The offline data is not stored and must be supplied again.
    pub fn from_checkpoint(c: &Checkpoint, inputs: &TrainInputs, config: &AgentConfig) -> Result<Self> {
        if c.meta("kind")? != "train-state" {
            return Err(Error::invalid("checkpoint does not hold a training state"));
        }
        let mut agent_ckpt = c.clone();
        agent_ckpt.set_meta("kind", "agent");
        let agent = Agent::from_checkpoint(&agent_ckpt)?;
        let rng = |key: &str| -> Result<Rng> {
            RngState::decode(c.meta(key)?)
                .map(|s| s.restore())
                .ok_or_else(|| Error::invalid(format!("checkpoint meta `{key}` is malformed")))
        };
        let mut buffer = MixedBuffer::new(inputs.offline.to_vec(), config.capacity(), config.model_data_prob)?;
        let n: usize = c.meta_parse("model_records")?;
        if n > 0 {
            let k: usize = c.meta_parse("model_set_size")?;
            let (s, a, s2) = (c.get("model.s")?, c.get("model.a")?, c.get("model.s2")?);
            let (rd, sets) = (c.get("model.r_done")?, c.get("model.sets")?);
            let d = s.cols();
            buffer.add_model((0..n).map(|i| ModelRecord {
                transition: Transition {
                    s: s.row(i).to_vec(),
                    a: a.row(i).to_vec(),
                    r: rd.get(i, 0),
                    s2: s2.row(i).to_vec(),
                    done: rd.get(i, 1) != 0.0,
                    source: Source::Model,
                },
                next_set: (0..k).map(|j| sets.row(i)[j * d..(j + 1) * d].to_vec()).collect(),
            }));
        }
        let metrics = c
            .meta
            .iter()
            .filter(|(k, _)| k.starts_with("metrics."))
            .map(|(_, v)| serde_json::from_str(v).map_err(|e| Error::invalid(format!("checkpoint metrics: {e}"))))
            .collect::<Result<Vec<MetricsRecord>>>()?;
        Ok(Self {
            agent,
            buffer,
            agent_rng: rng("agent_rng")?,
            rollout_rng: rng("rollout_rng")?,
            step: c.meta_parse("step")?,
            metrics,
        })
    }
}

fn generate_model_data(state: &mut TrainState, inputs: &TrainInputs, config: &AgentConfig) -> Result<()> {
    let starts = sample_starts(inputs.offline, config.rollout_batch_size, &mut state.rollout_rng)?;
    let stats = inputs.stats;
    let policy = &state.agent.policy;
    let rng = &mut state.rollout_rng;
    // Policy noise comes from a child of the rollout stream.
    let mut policy_rng = crate::rng::rng_from_seed(rand::Rng::random(rng));
    let records = rollout(
        inputs.ensemble,
        &starts,
        config.horizon,
        |s| Ok(policy.sample(s, &mut policy_rng)?.0),
        |s, a| pendulum::reward(&stats.denormalize(s), a),
        |s2| pendulum::is_terminal(&stats.denormalize(s2)),
        rng,
    )?;
    state.buffer.add_model(records);
    Ok(())
}

fn one_step(state: &mut TrainState, config: &AgentConfig, penalty: &PenaltyConfig, acc: &mut Interval) -> Result<()> {
    let batch = state.buffer.sample(config.batch_size, &mut state.agent_rng)?;
    let alpha = state.agent.temp.alpha();
    let (targets, diag) = critic_targets(
        &batch,
        &state.agent.critics.target,
        &state.agent.policy,
        alpha,
        config.gamma,
        penalty,
        &mut state.agent_rng,
    )?;
    let obs = Tensor::from_rows(&batch.iter().map(|b| b.transition.s.as_slice()).collect::<Vec<_>>());
    let act = Tensor::from_rows(&batch.iter().map(|b| b.transition.a.as_slice()).collect::<Vec<_>>());
    let losses = update_critics(&mut state.agent.critics, &obs, &act, &targets)?;
    let agent = &mut state.agent;
    let (policy_loss, logp) = update_policy(
        &mut agent.policy,
        &mut agent.policy_optim,
        &agent.critics.online,
        &obs,
        alpha,
        &mut state.agent_rng,
    )?;
    agent.temp.update(&logp)?;
    agent.critics.soft_update();

    acc.steps += 1;
    acc.critic_loss += losses.iter().sum::<f64>() / losses.len() as f64;
    acc.policy_loss += policy_loss;
    if let Some(f) = diag.mean_f {
        acc.f_sum += f;
        acc.f_batches += 1;
    }
    Ok(())
}

/// Runs the training loop from `state.step` up to `config.n_iter`.
///
/// Every `rollout_interval` steps the current policy generates `h`-step model
/// rollouts; every step draws a mixed batch and updates critics, policy and
/// temperature, followed by a soft target update. Every `eval_interval` steps
/// (and at the end) the deterministic policy is evaluated and `on_record` is
/// called with the new metrics record.
pub fn train(
    inputs: &TrainInputs,
    config: &AgentConfig,
    mut state: TrainState,
    mut on_record: impl FnMut(&TrainState, &MetricsRecord) -> Result<()>,
) -> Result<TrainState> {
    config.validate()?;
    let penalty = PenaltyConfig::new(config.beta)?;
    let eval_seed = SeedStreams::new(inputs.seed).seed(SeedStreams::EVAL);
    let mut acc = Interval::default();
    while state.step < config.n_iter {
        let t = state.step;
        let wrap = |e: Error| Error::Training { iteration: t, source: Box::new(e) };
        if t % config.rollout_interval == 0 && config.model_data_prob > 0.0 {
            generate_model_data(&mut state, inputs, config).map_err(wrap)?;
        }
        one_step(&mut state, config, &penalty, &mut acc).map_err(wrap)?;
        state.step += 1;

        if state.step % config.eval_interval == 0 || state.step == config.n_iter {
            let ret = evaluate(&state.agent.policy, inputs.stats, inputs.env, config.eval_episodes, eval_seed)
                .map_err(wrap)?;
            let n = acc.steps.max(1) as f64;
            let record = MetricsRecord {
                step: state.step,
                critic_loss: acc.critic_loss / n,
                policy_loss: acc.policy_loss / n,
                alpha: state.agent.temp.alpha(),
                mean_f: (acc.f_batches > 0).then(|| acc.f_sum / acc.f_batches as f64),
                eval_return_mean: ret.mean,
                eval_return_std: ret.std,
            };
            log::info!(
                "step {} return {:.1} ± {:.1} critic {:.4} alpha {:.4}",
                record.step,
                record.eval_return_mean,
                record.eval_return_std,
                record.critic_loss,
                record.alpha
            );
            state.metrics.push(record.clone());
            acc = Interval::default();
            on_record(&state, &record)?;
        }
    }
    Ok(state)
}
