//! Soft actor-critic with the conservative target, trained on a mix of
//! offline and model-generated data.

mod policy;
mod sac;
mod train;

pub use policy::{PolicySample, SquashedGaussianPolicy, POLICY_LOG_STD_MAX, POLICY_LOG_STD_MIN};
pub use sac::{
    critic_loss_graph, policy_loss_graph, q_graph, soft_update, update_critics, update_policy, CriticSet, EntropyTemp,
};
pub use train::{train, Agent, AgentConfig, MetricsRecord, TrainInputs, TrainState};

use crate::ndmath::{Mlp, Tensor};
use crate::rng::Rng;
use crate::Result;

/// A stochastic policy over continuous actions.
pub trait Policy {
    /// Samples an action per row of `obs` with its log-density.
    fn sample(&self, obs: &Tensor, rng: &mut Rng) -> Result<(Tensor, Vec<f64>)>;

    /// The noise-free action used for evaluation.
    fn deterministic(&self, obs: &Tensor) -> Result<Tensor>;
}

/// A state-action value function.
pub trait QFunction {
    fn q(&self, obs: &Tensor, act: &Tensor) -> Result<Vec<f64>>;
}

/// A critic network takes `[obs, act]` and outputs one value.
impl QFunction for Mlp {
    fn q(&self, obs: &Tensor, act: &Tensor) -> Result<Vec<f64>> {
        let out = self.forward(&Tensor::concat_cols(&[obs, act])?)?;
        Ok(out.into_data())
    }
}

impl<T: QFunction + ?Sized> QFunction for &T {
    fn q(&self, obs: &Tensor, act: &Tensor) -> Result<Vec<f64>> {
        (**self).q(obs, act)
    }
}

/// A value function given by a closure over one `(obs, act)` row.
pub struct FnCritic<F>(pub F);

impl<F: Fn(&[f64], &[f64]) -> f64> QFunction for FnCritic<F> {
    fn q(&self, obs: &Tensor, act: &Tensor) -> Result<Vec<f64>> {
        Ok((0..obs.rows()).map(|r| (self.0)(obs.row(r), act.row(r))).collect())
    }
}

/// A deterministic policy given by a closure; its log-density is reported as 0.
pub struct FnPolicy<F>(pub F);

impl<F: Fn(&[f64]) -> Vec<f64>> Policy for FnPolicy<F> {
    fn sample(&self, obs: &Tensor, _rng: &mut Rng) -> Result<(Tensor, Vec<f64>)> {
        let a = self.deterministic(obs)?;
        Ok((a, vec![0.0; obs.rows()]))
    }

    fn deterministic(&self, obs: &Tensor) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = (0..obs.rows()).map(|r| (self.0)(obs.row(r))).collect();
        Ok(Tensor::from_rows(&rows))
    }
}
