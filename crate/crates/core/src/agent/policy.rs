use rand::Rng as _;
use rand_distr::StandardNormal;

use super::Policy;
use crate::ndmath::{Activation, Graph, Mlp, MlpVars, Tensor, Var};
use crate::rng::Rng;
use crate::{Error, Result};

pub const POLICY_LOG_STD_MIN: f64 = -20.0;
pub const POLICY_LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// `log(1 − tanh²(u)) = 2·(ln 2 − u − softplus(−2u))`, stable for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - crate::ndmath::softplus(-2.0 * u))
}

/// Diagonal Gaussian over pre-squash actions, squashed by `max_action·tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashedGaussianPolicy {
    pub net: Mlp,
    pub act_dim: usize,
    pub max_action: f64,
}

/// Tape handles of a reparameterised policy sample.
#[derive(Debug, Clone, Copy)]
pub struct PolicySample {
    /// `[B, act]`, within the action bounds.
    pub action: Var,
    /// `[B, 1]`
    pub log_prob: Var,
}

impl SquashedGaussianPolicy {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], max_action: f64, rng: &mut impl rand::Rng) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * act_dim);
        Self { net: Mlp::new(&sizes, Activation::Relu, rng), act_dim, max_action }
    }

    pub fn from_net(net: Mlp, act_dim: usize, max_action: f64) -> Result<Self> {
        if net.output_dim() != 2 * act_dim {
            return Err(Error::Shape {
                context: "policy network output".into(),
                expected: vec![2 * act_dim],
                got: vec![net.output_dim()],
            });
        }
        Ok(Self { net, act_dim, max_action })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Pre-squash mean and clamped log σ.
    pub fn distribution(&self, obs: &Tensor) -> Result<(Tensor, Tensor)> {
        let out = self.net.forward(obs)?;
        let (b, k) = (out.rows(), self.act_dim);
        let mut mean = Vec::with_capacity(b * k);
        let mut log_std = Vec::with_capacity(b * k);
        for r in 0..b {
            let row = out.row(r);
            mean.extend_from_slice(&row[..k]);
            log_std.extend(row[k..].iter().map(|x| x.clamp(POLICY_LOG_STD_MIN, POLICY_LOG_STD_MAX)));
        }
        Ok((Tensor::matrix(b, k, mean)?, Tensor::matrix(b, k, log_std)?))
    }

    /// Standard-normal noise for a batch of `rows`.
    pub fn noise(&self, rows: usize, rng: &mut Rng) -> Tensor {
        let data = (0..rows * self.act_dim).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::matrix(rows, self.act_dim, data).expect("noise shape")
    }

    /// Action and log-density for given noise `eps` (plain evaluation).
    pub fn sample_with(&self, obs: &Tensor, eps: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let (mean, log_std) = self.distribution(obs)?;
        if eps.shape() != mean.shape() {
            return Err(Error::Shape {
                context: "policy noise".into(),
                expected: mean.shape().to_vec(),
                got: eps.shape().to_vec(),
            });
        }
        let (b, k) = (mean.rows(), self.act_dim);
        let mut actions = Vec::with_capacity(b * k);
        let mut logp = Vec::with_capacity(b);
        for r in 0..b {
            let mut lp = 0.0;
            for j in 0..k {
                let (m, ls, e) = (mean.get(r, j), log_std.get(r, j), eps.get(r, j));
                let u = m + ls.exp() * e;
                actions.push(self.max_action * u.tanh());
                lp += -0.5 * e * e - ls - HALF_LN_2PI - self.max_action.ln() - log_one_minus_tanh_sq(u);
            }
            logp.push(lp);
        }
        Ok((Tensor::matrix(b, k, actions)?, logp))
    }

    /// Records a reparameterised sample on the tape for noise `eps`.
    pub fn sample_graph(&self, g: &mut Graph, vars: &MlpVars, obs: Var, eps: &Tensor) -> Result<PolicySample> {
        let k = self.act_dim;
        let out = self.net.forward_graph(g, vars, obs)?;
        let mean = g.slice_cols(out, 0, k)?;
        let raw = g.slice_cols(out, k, 2 * k)?;
        let log_std = g.clamp(raw, POLICY_LOG_STD_MIN, POLICY_LOG_STD_MAX);
        let std = g.exp(log_std);
        let e = g.constant(eps.clone());
        let spread = g.mul(std, e)?;
        let u = g.add(mean, spread)?;
        let squashed = g.tanh(u);
        let action = g.scale(squashed, self.max_action);

        // −log σ − log(1 − tanh² u) = −log σ + 2(u + softplus(−2u)) − 2 ln 2
        let m2u = g.scale(u, -2.0);
        let sp = g.softplus(m2u);
        let usp = g.add(u, sp)?;
        let corr = g.scale(usp, 2.0);
        let per_dim = g.sub(corr, log_std)?;
        let summed = g.sum_cols(per_dim);
        let rows = eps.rows();
        let constants: Vec<f64> = (0..rows)
            .map(|r| {
                let sq: f64 = eps.row(r).iter().map(|x| x * x).sum();
                -0.5 * sq - k as f64 * (HALF_LN_2PI + self.max_action.ln() + 2.0 * std::f64::consts::LN_2)
            })
            .collect();
        let c = g.constant(Tensor::matrix(rows, 1, constants)?);
        let log_prob = g.add(summed, c)?;
        Ok(PolicySample { action, log_prob })
    }
}

impl Policy for SquashedGaussianPolicy {
    fn sample(&self, obs: &Tensor, rng: &mut Rng) -> Result<(Tensor, Vec<f64>)> {
        let eps = self.noise(obs.rows(), rng);
        self.sample_with(obs, &eps)
    }

    fn deterministic(&self, obs: &Tensor) -> Result<Tensor> {
        let (mean, _) = self.distribution(obs)?;
        Ok(mean.map(|m| self.max_action * m.tanh()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn policy(seed: u64) -> SquashedGaussianPolicy {
        SquashedGaussianPolicy::new(3, 2, &[8, 8], 2.0, &mut rng_from_seed(seed))
    }

    #[test]
    fn actions_stay_in_bounds_and_logp_is_finite() {
        let p = policy(0);
        let mut rng = rng_from_seed(1);
        let obs = Tensor::from_rows(&[[0.5, -1.0, 3.0], [10.0, 10.0, -10.0]]);
        for _ in 0..50 {
            let (a, lp) = p.sample(&obs, &mut rng).unwrap();
            assert!(a.data().iter().all(|x| x.abs() <= 2.0));
            assert!(lp.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn graph_sample_matches_plain_sample() {
        let p = policy(2);
        let mut rng = rng_from_seed(3);
        let obs = Tensor::from_rows(&[[0.1, 0.2, 0.3], [-1.0, 0.0, 2.0], [0.0, 0.0, 0.0]]);
        let eps = p.noise(3, &mut rng);
        let (a, lp) = p.sample_with(&obs, &eps).unwrap();
        let mut g = Graph::new();
        let vars = p.net.bind(&mut g, true);
        let o = g.constant(obs);
        let s = p.sample_graph(&mut g, &vars, o, &eps).unwrap();
        assert!(g.value(s.action).max_abs_diff(&a) < 1e-12);
        for (x, y) in g.value(s.log_prob).data().iter().zip(&lp) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    /// One-dimensional check of the density against the change of variables
    /// done by hand: `a = 2 tanh(u)`, `u ~ N(0.3, 0.5²)`.
    #[test]
    fn log_density_by_hand() {
        let mut layer = crate::ndmath::Linear::zeros(1, 2);
        layer.bias.data_mut().copy_from_slice(&[0.3, 0.5f64.ln()]);
        let net = Mlp::from_layers(vec![layer], Activation::Identity).unwrap();
        let p = SquashedGaussianPolicy::from_net(net, 1, 2.0).unwrap();
        let eps = Tensor::from_rows(&[[0.7]]);
        let (a, lp) = p.sample_with(&Tensor::from_rows(&[[0.0]]), &eps).unwrap();
        let u: f64 = 0.3 + 0.5 * 0.7;
        let normal = (-0.5 * 0.7f64 * 0.7).exp() / (0.5 * (2.0 * std::f64::consts::PI).sqrt());
        let jacobian = 2.0 * (1.0 - u.tanh().powi(2));
        assert!((a.item() - 2.0 * u.tanh()).abs() < 1e-15);
        assert!((lp[0] - (normal / jacobian).ln()).abs() < 1e-12);
    }
}
