use super::policy::SquashedGaussianPolicy;
use crate::ndmath::{Activation, AdamState, Graph, Mlp, Tensor, Var};
use crate::rng::Rng;
use crate::{Error, Result};

/// `K` online critics, their target copies and one optimiser per critic.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticSet {
    pub online: Vec<Mlp>,
    pub target: Vec<Mlp>,
    pub optim: Vec<AdamState>,
    pub tau: f64,
}

impl CriticSet {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        k: usize,
        lr: f64,
        tau: f64,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("need at least 2 critics, got {k}")));
        }
        let mut sizes = vec![obs_dim + act_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let online: Vec<Mlp> = (0..k).map(|_| Mlp::new(&sizes, Activation::Relu, rng)).collect();
        Ok(Self::from_online(online, lr, tau))
    }

    /// Targets start as exact copies of the online critics.
    pub fn from_online(online: Vec<Mlp>, lr: f64, tau: f64) -> Self {
        let optim = online.iter().map(|c| AdamState::new(lr, &c.param_shapes())).collect();
        Self { target: online.clone(), online, optim, tau }
    }

    pub fn soft_update(&mut self) {
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            soft_update(t, o, self.tau);
        }
    }
}

/// `target ← τ·online + (1−τ)·target`, parameter by parameter.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) {
    for (t, o) in target.params_mut().into_iter().zip(online.params()) {
        for (x, y) in t.data_mut().iter_mut().zip(o.data()) {
            *x = tau * y + (1.0 - tau) * *x;
        }
    }
}

/// Records `Q(obs, act)` as a `[B, 1]` node.
pub fn q_graph(g: &mut Graph, critic: &Mlp, vars: &crate::ndmath::MlpVars, obs: Var, act: Var) -> Result<Var> {
    let input = g.concat_cols(&[obs, act])?;
    critic.forward_graph(g, vars, input)
}

/// Mean squared error of one critic against fixed targets, recorded on `g`.
/// Returns the loss node and the critic's parameter handles.
pub fn critic_loss_graph(
    g: &mut Graph,
    critic: &Mlp,
    obs: &Tensor,
    act: &Tensor,
    targets: &[f64],
) -> Result<(Var, crate::ndmath::MlpVars)> {
    let vars = critic.bind(g, true);
    let o = g.constant(obs.clone());
    let a = g.constant(act.clone());
    let q = q_graph(g, critic, &vars, o, a)?;
    let y = g.constant(Tensor::matrix(targets.len(), 1, targets.to_vec())?);
    let diff = g.sub(q, y)?;
    let sq = g.square(diff);
    Ok((g.mean(sq), vars))
}

/// One Adam step of every critic towards `targets`. Returns each critic's loss.
pub fn update_critics(critics: &mut CriticSet, obs: &Tensor, act: &Tensor, targets: &[f64]) -> Result<Vec<f64>> {
    if targets.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut losses = Vec::with_capacity(critics.online.len());
    let mut g = Graph::new();
    for (i, (critic, optim)) in critics.online.iter_mut().zip(&mut critics.optim).enumerate() {
        g.reset();
        let (loss, vars) = critic_loss_graph(&mut g, critic, obs, act, targets)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss of critic {i}")));
        }
        let mut grads = g.backward(loss)?;
        let gs: Vec<Tensor> = vars.vars.iter().map(|&v| grads.take(v)).collect();
        optim.step(&mut critic.params_mut(), &gs)?;
        losses.push(value);
    }
    Ok(losses)
}

/// Policy objective `mean[α·log π(ã|s) − min_k Q_k(s, ã)]` with `ã` the
/// reparameterised sample for noise `eps`; the critics are frozen.
/// Returns the loss node, the policy handles and the per-row log-densities.
pub fn policy_loss_graph(
    g: &mut Graph,
    policy: &SquashedGaussianPolicy,
    critics: &[Mlp],
    obs: &Tensor,
    eps: &Tensor,
    alpha: f64,
) -> Result<(Var, crate::ndmath::MlpVars, Vec<f64>)> {
    let vars = policy.net.bind(g, true);
    let o = g.constant(obs.clone());
    let sample = policy.sample_graph(g, &vars, o, eps)?;
    let mut min_q: Option<Var> = None;
    for c in critics {
        let cv = c.bind(g, false);
        let q = q_graph(g, c, &cv, o, sample.action)?;
        min_q = Some(match min_q {
            None => q,
            Some(m) => g.minimum(m, q)?,
        });
    }
    let min_q = min_q.ok_or(Error::Empty("critic set"))?;
    let weighted = g.scale(sample.log_prob, alpha);
    let per_row = g.sub(weighted, min_q)?;
    let logp = g.value(sample.log_prob).data().to_vec();
    Ok((g.mean(per_row), vars, logp))
}

/// One Adam step of the policy. Returns the loss and the log-densities of the
/// fresh samples, which the temperature update reuses.
pub fn update_policy(
    policy: &mut SquashedGaussianPolicy,
    optim: &mut AdamState,
    critics: &[Mlp],
    obs: &Tensor,
    alpha: f64,
    rng: &mut Rng,
) -> Result<(f64, Vec<f64>)> {
    if obs.rows() == 0 {
        return Err(Error::Empty("batch"));
    }
    let eps = policy.noise(obs.rows(), rng);
    let mut g = Graph::new();
    let (loss, vars, logp) = policy_loss_graph(&mut g, policy, critics, obs, &eps, alpha)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("policy loss".into()));
    }
    let mut grads = g.backward(loss)?;
    let gs: Vec<Tensor> = vars.vars.iter().map(|&v| grads.take(v)).collect();
    optim.step(&mut policy.net.params_mut(), &gs)?;
    Ok((value, logp))
}

/// Log-parameterised entropy temperature with target entropy `−dim(A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTemp {
    pub log_alpha: Tensor,
    pub target_entropy: f64,
    pub optim: AdamState,
}

impl EntropyTemp {
    pub fn new(initial_alpha: f64, act_dim: usize, lr: f64) -> Result<Self> {
        if !(initial_alpha > 0.0 && initial_alpha.is_finite()) {
            return Err(Error::invalid(format!("initial alpha {initial_alpha} must be positive")));
        }
        Ok(Self {
            log_alpha: Tensor::scalar(initial_alpha.ln()),
            target_entropy: -(act_dim as f64),
            optim: AdamState::new(lr, &[vec![]]),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.item().exp()
    }

    /// Gradient of `mean[−α·(log π + H̄)]` with respect to `log α`.
    pub fn gradient(&self, log_probs: &[f64]) -> f64 {
        let mean = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
        -self.alpha() * (mean + self.target_entropy)
    }

    /// One Adam step on `log α`.
    pub fn update(&mut self, log_probs: &[f64]) -> Result<()> {
        if log_probs.is_empty() {
            return Err(Error::Empty("log-probability batch"));
        }
        let grad = Tensor::scalar(self.gradient(log_probs));
        self.optim.step(&mut [&mut self.log_alpha], &[grad])
    }
}
