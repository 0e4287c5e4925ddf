#![allow(dead_code)]

use micro_core::agent::{critic_loss_graph, policy_loss_graph, SquashedGaussianPolicy};
use micro_core::dynamics::GaussianModel;
use micro_core::ndmath::{Activation, Graph, Mlp, MlpVars, Tensor, Var};
use micro_core::rng::rng_from_seed;
use micro_core::Result;
use rand::Rng;
use rand_distr::StandardNormal;

/// Relative error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖)` between analytic and central
/// finite-difference gradients of `loss` with respect to `net`'s parameters.
pub fn check_gradient(net: &Mlp, loss: impl Fn(&mut Graph, &Mlp) -> Result<(Var, MlpVars)>) -> f64 {
    let mut g = Graph::new();
    let (l, vars) = loss(&mut g, net).unwrap();
    let grads = g.backward(l).unwrap();
    let analytic: Vec<f64> = vars.vars.iter().flat_map(|&v| grads.wrt(v).into_data()).collect();

    let eval = |n: &Mlp| {
        let mut g = Graph::new();
        let (l, _) = loss(&mut g, n).unwrap();
        g.value(l).item()
    };
    let h = 1e-6;
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut probe = net.clone();
    let n_tensors = probe.params().len();
    for t in 0..n_tensors {
        let len = probe.params()[t].len();
        for j in 0..len {
            let x = probe.params()[t].data()[j];
            probe.params_mut()[t].data_mut()[j] = x + h;
            let up = eval(&probe);
            probe.params_mut()[t].data_mut()[j] = x - h;
            let down = eval(&probe);
            probe.params_mut()[t].data_mut()[j] = x;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn small_sizes(input: usize, output: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut sizes = vec![input];
    for _ in 0..rng.random_range(1..=2) {
        sizes.push(rng.random_range(3..=6));
    }
    sizes.push(output);
    sizes
}

/// Worst relative error of the critic loss over `n` random networks.
pub fn critic_loss_worst(n: u64) -> f64 {
    (0..n)
        .map(|seed| {
            let mut rng = rng_from_seed(1000 + seed);
            let (obs_dim, act_dim, b) = (rng.random_range(1..=3), rng.random_range(1..=2), rng.random_range(2..=6));
            let net = Mlp::new(&small_sizes(obs_dim + act_dim, 1, &mut rng), Activation::Tanh, &mut rng);
            let obs = normal_matrix(b, obs_dim, &mut rng);
            let act = normal_matrix(b, act_dim, &mut rng);
            let targets: Vec<f64> = (0..b).map(|_| rng.random_range(-2.0..2.0)).collect();
            check_gradient(&net, |g, n| critic_loss_graph(g, n, &obs, &act, &targets))
        })
        .fold(0.0, f64::max)
}

/// Worst relative error of the policy loss over `n` random networks.
pub fn policy_loss_worst(n: u64) -> f64 {
    (0..n)
        .map(|seed| {
            let mut rng = rng_from_seed(2000 + seed);
            let (obs_dim, act_dim, b) = (rng.random_range(1..=3), rng.random_range(1..=2), rng.random_range(2..=6));
            let net = Mlp::new(&small_sizes(obs_dim, 2 * act_dim, &mut rng), Activation::Tanh, &mut rng);
            let critics: Vec<Mlp> = (0..2)
                .map(|_| Mlp::new(&small_sizes(obs_dim + act_dim, 1, &mut rng), Activation::Tanh, &mut rng))
                .collect();
            let obs = normal_matrix(b, obs_dim, &mut rng);
            let eps = normal_matrix(b, act_dim, &mut rng);
            let alpha = rng.random_range(0.05..1.0);
            let max_action = rng.random_range(0.5..3.0);
            check_gradient(&net, |g, n| {
                let policy = SquashedGaussianPolicy::from_net(n.clone(), act_dim, max_action)?;
                let (loss, vars, _) = policy_loss_graph(g, &policy, &critics, &obs, &eps, alpha)?;
                Ok((loss, vars))
            })
        })
        .fold(0.0, f64::max)
}

/// Worst relative error of the dynamics negative log-likelihood over `n` random networks.
pub fn model_nll_worst(n: u64) -> f64 {
    (0..n)
        .map(|seed| {
            let mut rng = rng_from_seed(3000 + seed);
            let (obs_dim, act_dim, b) = (rng.random_range(1..=3), rng.random_range(1..=2), rng.random_range(2..=6));
            let net = Mlp::new(&small_sizes(obs_dim + act_dim, 2 * obs_dim, &mut rng), Activation::Tanh, &mut rng);
            let inputs = normal_matrix(b, obs_dim + act_dim, &mut rng);
            let targets = normal_matrix(b, obs_dim, &mut rng);
            check_gradient(&net, |g, n| {
                let model = GaussianModel::from_net(n.clone(), obs_dim, act_dim)?;
                let vars = n.bind(g, true);
                let x = g.constant(inputs.clone());
                let y = g.constant(targets.clone());
                Ok((model.nll_graph(g, &vars, x, y)?, vars))
            })
        })
        .fold(0.0, f64::max)
}

/// `n` pendulum transitions under uniformly random torques.
pub fn random_pendulum_data(n: usize, seed: u64) -> Vec<micro_core::data::Transition> {
    use micro_core::data::{Source, Transition};
    use micro_core::envs::{Pendulum, PendulumParams};
    let mut env = Pendulum::new(PendulumParams::default());
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(n);
    let mut obs = env.reset(&mut rng);
    while out.len() < n {
        let a = vec![rng.random_range(-2.0..2.0)];
        let step = env.step(&a).unwrap();
        out.push(Transition {
            s: obs,
            a,
            r: step.reward,
            s2: step.obs.clone(),
            done: step.terminal,
            source: Source::Offline,
        });
        obs = if step.terminal || step.truncated { env.reset(&mut rng) } else { step.obs };
    }
    out
}

/// Normalized random data, its statistics and a small trained ensemble.
pub struct Fixture {
    pub offline: Vec<micro_core::data::Transition>,
    pub stats: micro_core::data::NormStats,
    pub ensemble: micro_core::dynamics::GaussianEnsemble,
}

pub fn small_fixture(n: usize, seed: u64) -> Fixture {
    use micro_core::data::NormStats;
    use micro_core::dynamics::{EnsembleConfig, GaussianEnsemble};
    let raw = random_pendulum_data(n, seed);
    let stats = NormStats::from_transitions(&raw, false).unwrap();
    let offline = stats.normalize_transitions(&raw);
    let config = EnsembleConfig {
        n_models: 3,
        n_elites: 2,
        hidden_layers: 2,
        hidden_units: 32,
        max_epochs: 5,
        steps_per_epoch: Some(50),
        batch_size: 64,
        ..EnsembleConfig::default()
    };
    let (ensemble, _) = GaussianEnsemble::train(&offline, &config, seed).unwrap();
    Fixture { offline, stats, ensemble }
}

pub fn small_agent_config() -> micro_core::agent::AgentConfig {
    micro_core::agent::AgentConfig {
        n_iter: 200,
        batch_size: 64,
        hidden_units: 32,
        horizon: 2,
        rollout_interval: 50,
        rollout_batch_size: 50,
        eval_interval: 50,
        eval_episodes: 1,
        ..micro_core::agent::AgentConfig::default()
    }
}
