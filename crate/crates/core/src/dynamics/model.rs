use rand::Rng;

use crate::ndmath::{Activation, Graph, Mlp, MlpVars, Tensor, Var};
use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// `0.5·ln(2π)`, the per-dimension constant of the Gaussian NLL.
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// A diagonal Gaussian over the state change `Δs = s' − s`, given `(s, a)`.
///
/// The network outputs `[μ, log σ]`; `log σ` is hard-clamped to
/// `[LOG_STD_MIN, LOG_STD_MAX]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    pub net: Mlp,
    pub obs_dim: usize,
    pub act_dim: usize,
}

impl GaussianModel {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        let mut sizes = vec![obs_dim + act_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * obs_dim);
        Self { net: Mlp::new(&sizes, activation, rng), obs_dim, act_dim }
    }

    pub fn from_net(net: Mlp, obs_dim: usize, act_dim: usize) -> Result<Self> {
        if net.input_dim() != obs_dim + act_dim || net.output_dim() != 2 * obs_dim {
            return Err(Error::Shape {
                context: "dynamics model network".into(),
                expected: vec![obs_dim + act_dim, 2 * obs_dim],
                got: vec![net.input_dim(), net.output_dim()],
            });
        }
        Ok(Self { net, obs_dim, act_dim })
    }

    /// `(μ_Δ, log σ)` for a batch of model inputs `[s, a]`.
    pub fn predict_inputs(&self, inputs: &Tensor) -> Result<(Tensor, Tensor)> {
        let out = self.net.forward(inputs)?;
        let (b, d) = (out.rows(), self.obs_dim);
        let mut mean = Vec::with_capacity(b * d);
        let mut log_std = Vec::with_capacity(b * d);
        for r in 0..b {
            let row = out.row(r);
            mean.extend_from_slice(&row[..d]);
            log_std.extend(row[d..].iter().map(|x| x.clamp(LOG_STD_MIN, LOG_STD_MAX)));
        }
        Ok((Tensor::matrix(b, d, mean)?, Tensor::matrix(b, d, log_std)?))
    }

    /// Mean next state and log σ for states `[B, obs]` and actions `[B, act]`.
    pub fn predict(&self, states: &Tensor, actions: &Tensor) -> Result<(Tensor, Tensor)> {
        let inputs = Tensor::concat_cols(&[states, actions])?;
        let (mut mean, log_std) = self.predict_inputs(&inputs)?;
        mean.add_assign(states);
        Ok((mean, log_std))
    }

    /// Records the batch NLL `mean_b Σ_d [½(Δ−μ)²/σ² + log σ]` on `g`, without
    /// the constant term.
    pub fn nll_graph(&self, g: &mut Graph, vars: &MlpVars, inputs: Var, targets: Var) -> Result<Var> {
        let d = self.obs_dim;
        let out = self.net.forward_graph(g, vars, inputs)?;
        let mean = g.slice_cols(out, 0, d)?;
        let raw = g.slice_cols(out, d, 2 * d)?;
        let log_std = g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        let m2 = g.scale(log_std, -2.0);
        let inv_var = g.exp(m2);
        let diff = g.sub(mean, targets)?;
        let sq = g.square(diff);
        let w = g.mul(sq, inv_var)?;
        let half = g.scale(w, 0.5);
        let per = g.add(half, log_std)?;
        let total = g.sum(per);
        let b = g.value(inputs).rows() as f64;
        Ok(g.scale(total, 1.0 / b))
    }

    /// Mean per-sample Gaussian NLL of `targets` (state changes), including
    /// the constant term.
    pub fn nll(&self, inputs: &Tensor, targets: &Tensor) -> Result<f64> {
        let (mean, log_std) = self.predict_inputs(inputs)?;
        if targets.shape() != mean.shape() {
            return Err(Error::Shape {
                context: "nll targets".into(),
                expected: mean.shape().to_vec(),
                got: targets.shape().to_vec(),
            });
        }
        let mut total = 0.0;
        for ((m, ls), t) in mean.data().iter().zip(log_std.data()).zip(targets.data()) {
            let z = (t - m) * (-ls).exp();
            total += 0.5 * z * z + ls + HALF_LN_2PI;
        }
        Ok(total / mean.rows() as f64)
    }
}
