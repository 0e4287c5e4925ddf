use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::GaussianModel;
use crate::data::Transition;
use crate::ndmath::{Activation, AdamState, Checkpoint, Graph, Mlp, Tensor};
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_models: usize,
    pub n_elites: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub activation: Activation,
    pub lr: f64,
    pub batch_size: usize,
    /// Fraction of the data held out for early stopping and elite selection.
    pub holdout_fraction: f64,
    pub max_epochs: usize,
    /// Epochs without a holdout improvement before a model stops.
    pub patience: usize,
    /// Gradient steps per epoch; by default one pass over the training split.
    pub steps_per_epoch: Option<usize>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_models: 7,
            n_elites: 5,
            hidden_layers: 4,
            hidden_units: 200,
            activation: Activation::Relu,
            lr: 1e-3,
            batch_size: 256,
            holdout_fraction: 0.1,
            max_epochs: 100,
            patience: 5,
            steps_per_epoch: None,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_models == 0 || self.n_elites == 0 || self.n_elites > self.n_models {
            return Err(Error::invalid(format!(
                "need 1 <= n_elites <= n_models, got {} elites of {} models",
                self.n_elites, self.n_models
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch_size and max_epochs must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("model learning rate {} must be positive", self.lr)));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::invalid(format!("holdout_fraction {} outside (0, 1)", self.holdout_fraction)));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::invalid("steps_per_epoch must be positive"));
        }
        Ok(())
    }

    fn hidden(&self) -> Vec<usize> {
        vec![self.hidden_units; self.hidden_layers]
    }
}

/// Per-model training history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Holdout NLL after every epoch, one list per model.
    pub holdout_history: Vec<Vec<f64>>,
    /// Best holdout NLL per model; the parameters at that epoch are kept.
    pub holdout_nll: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEnsemble {
    pub models: Vec<GaussianModel>,
    /// Indices of the elite models, best first. Empty until trained.
    pub elites: Vec<usize>,
    pub holdout_nll: Vec<f64>,
    /// Multiplies the Gaussian noise when sampling; `0` yields the means.
    pub noise_scale: f64,
}

pub const MIN_TRANSITIONS: usize = 10;

/// Model inputs `[s, a]` and targets `s' − s`.
fn design(data: &[Transition]) -> Result<(Tensor, Tensor)> {
    let inputs: Vec<Vec<f64>> = data.iter().map(|t| [t.s.as_slice(), t.a.as_slice()].concat()).collect();
    let targets: Vec<Vec<f64>> = data.iter().map(|t| t.s2.iter().zip(&t.s).map(|(b, a)| b - a).collect()).collect();
    Ok((Tensor::from_rows(&inputs), Tensor::from_rows(&targets)))
}

/// A content key for the train/holdout split, so the split depends on the
/// records themselves rather than their position in the file.
fn record_key(t: &Transition) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in t.s.iter().chain(&t.a).chain(&t.s2).chain(std::iter::once(&t.r)) {
        for b in x.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let c = t.cols();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor::matrix(idx.len(), c, data).expect("gather")
}

fn train_one(
    model: &mut GaussianModel,
    train: (&Tensor, &Tensor),
    holdout: (&Tensor, &Tensor),
    config: &EnsembleConfig,
    rng: &mut impl Rng,
) -> Result<(f64, Vec<f64>)> {
    let n = train.0.rows();
    let steps = config.steps_per_epoch.unwrap_or(n.div_ceil(config.batch_size));
    let mut adam = AdamState::new(config.lr, &model.net.param_shapes());
    let mut best = model.nll(holdout.0, holdout.1)?;
    let mut best_net = model.net.clone();
    let mut history = Vec::new();
    let mut stale = 0;
    let mut g = Graph::new();
    let mut idx = vec![0; config.batch_size];
    for _ in 0..config.max_epochs {
        for _ in 0..steps {
            for i in idx.iter_mut() {
                // floor(u·n) rather than a range draw keeps batches aligned
                // when every record is repeated in place.
                *i = ((rng.random::<f64>() * n as f64) as usize).min(n - 1);
            }
            g.reset();
            let vars = model.net.bind(&mut g, true);
            let x = g.constant(gather(train.0, &idx));
            let y = g.constant(gather(train.1, &idx));
            let loss = model.nll_graph(&mut g, &vars, x, y)?;
            if !g.value(loss).item().is_finite() {
                return Err(Error::NonFinite("dynamics model loss".into()));
            }
            let mut grads = g.backward(loss)?;
            let gs: Vec<Tensor> = vars.vars.iter().map(|&v| grads.take(v)).collect();
            adam.step(&mut model.net.params_mut(), &gs)?;
        }
        let nll = model.nll(holdout.0, holdout.1)?;
        history.push(nll);
        if nll < best {
            best = nll;
            best_net = model.net.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    model.net = best_net;
    Ok((best, history))
}

impl GaussianEnsemble {
    /// An untrained ensemble; prediction fails until [`train`](Self::train).
    pub fn new(obs_dim: usize, act_dim: usize, config: &EnsembleConfig, seed: u64) -> Self {
        let hidden = config.hidden();
        let models = (0..config.n_models)
            .map(|i| {
                let mut rng = rng_from_seed(derive_seed(seed, &format!("model-{i}-init")));
                GaussianModel::new(obs_dim, act_dim, &hidden, config.activation, &mut rng)
            })
            .collect();
        Self { models, elites: Vec::new(), holdout_nll: Vec::new(), noise_scale: 1.0 }
    }

    /// A trained ensemble assembled from given models.
    pub fn from_models(models: Vec<GaussianModel>, elites: Vec<usize>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Empty("model list"));
        }
        if elites.is_empty() || elites.iter().any(|&e| e >= models.len()) {
            return Err(Error::invalid(format!("bad elite indices {elites:?} for {} models", models.len())));
        }
        let (d, a) = (models[0].obs_dim, models[0].act_dim);
        if models.iter().any(|m| m.obs_dim != d || m.act_dim != a) {
            return Err(Error::invalid("ensemble members disagree on dimensions"));
        }
        Ok(Self { holdout_nll: vec![f64::NAN; models.len()], models, elites, noise_scale: 1.0 })
    }

    /// Trains every member by maximum likelihood on a shared 90/10 split and
    /// picks the elites by holdout NLL.
    pub fn train(data: &[Transition], config: &EnsembleConfig, seed: u64) -> Result<(Self, TrainReport)> {
        config.validate()?;
        if data.len() < MIN_TRANSITIONS {
            return Err(Error::invalid(format!(
                "dynamics training needs at least {MIN_TRANSITIONS} transitions, got {}",
                data.len()
            )));
        }
        crate::data::validate_transitions(data)?;
        let (obs_dim, act_dim) = (data[0].s.len(), data[0].a.len());
        let mut order: Vec<(u64, usize)> = data.iter().enumerate().map(|(i, t)| (record_key(t), i)).collect();
        order.sort_unstable();
        let n_hold = ((data.len() as f64 * config.holdout_fraction) as usize).max(1);
        let hold_idx: Vec<usize> = order[..n_hold].iter().map(|&(_, i)| i).collect();
        let train_idx: Vec<usize> = order[n_hold..].iter().map(|&(_, i)| i).collect();
        let (inputs, targets) = design(data)?;
        let (tx, ty) = (gather(&inputs, &train_idx), gather(&targets, &train_idx));
        let (hx, hy) = (gather(&inputs, &hold_idx), gather(&targets, &hold_idx));

        let mut ens = Self::new(obs_dim, act_dim, config, seed);
        let mut history = Vec::with_capacity(config.n_models);
        let mut nlls = Vec::with_capacity(config.n_models);
        for (i, model) in ens.models.iter_mut().enumerate() {
            let mut rng = rng_from_seed(derive_seed(seed, &format!("model-{i}-batches")));
            let (best, hist) = train_one(model, (&tx, &ty), (&hx, &hy), config, &mut rng)?;
            log::debug!("model {i}: holdout nll {best:.4} after {} epochs", hist.len());
            nlls.push(best);
            history.push(hist);
        }
        let mut rank: Vec<usize> = (0..config.n_models).collect();
        rank.sort_by(|&a, &b| nlls[a].total_cmp(&nlls[b]).then(a.cmp(&b)));
        rank.truncate(config.n_elites);
        ens.elites = rank;
        ens.holdout_nll = nlls.clone();
        Ok((ens, TrainReport { holdout_history: history, holdout_nll: nlls }))
    }

    pub fn is_trained(&self) -> bool {
        !self.elites.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.models[0].obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.models[0].act_dim
    }

    pub fn n_elites(&self) -> usize {
        self.elites.len()
    }

    fn check(&self, states: &Tensor, actions: &Tensor) -> Result<()> {
        if !self.is_trained() {
            return Err(Error::Untrained);
        }
        if states.cols() != self.obs_dim() || actions.cols() != self.act_dim() || states.rows() != actions.rows() {
            return Err(Error::Shape {
                context: "ensemble prediction".into(),
                expected: vec![self.obs_dim(), self.act_dim()],
                got: vec![states.cols(), actions.cols()],
            });
        }
        Ok(())
    }

    /// Mean next state and log σ of every elite, in elite order.
    pub fn elite_predictions(&self, states: &Tensor, actions: &Tensor) -> Result<Vec<(Tensor, Tensor)>> {
        self.check(states, actions)?;
        self.elites.iter().map(|&e| self.models[e].predict(states, actions)).collect()
    }

    fn draw(&self, mean: &[f64], log_std: &[f64], rng: &mut impl Rng, out: &mut Vec<f64>) {
        for (m, ls) in mean.iter().zip(log_std) {
            let eps: f64 = rng.sample(StandardNormal);
            out.push(m + self.noise_scale * ls.exp() * eps);
        }
    }

    /// One next-state sample per elite for each row: element `k` of the result
    /// holds elite `k`'s samples, `[B, obs]`.
    pub fn predict_set_batch(&self, states: &Tensor, actions: &Tensor, rng: &mut impl Rng) -> Result<Vec<Tensor>> {
        let preds = self.elite_predictions(states, actions)?;
        Ok(self.sample_set(&preds, rng))
    }

    pub(crate) fn sample_set(&self, preds: &[(Tensor, Tensor)], rng: &mut impl Rng) -> Vec<Tensor> {
        preds
            .iter()
            .map(|(mean, log_std)| {
                let mut data = Vec::with_capacity(mean.len());
                for r in 0..mean.rows() {
                    self.draw(mean.row(r), log_std.row(r), rng, &mut data);
                }
                Tensor::matrix(mean.rows(), mean.cols(), data).expect("sample shape")
            })
            .collect()
    }

    /// The uncertainty set `X(s, a)`: one sample from each elite.
    pub fn predict_set(&self, s: &[f64], a: &[f64], rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
        let set = self.predict_set_batch(&Tensor::from_rows(&[s]), &Tensor::from_rows(&[a]), rng)?;
        Ok(set.into_iter().map(|t| t.row(0).to_vec()).collect())
    }

    /// Samples the uniform mixture of the elites: pick an elite per row, then
    /// sample its Gaussian. Returns the states and the chosen elite positions.
    pub fn sample_mixture_batch(
        &self,
        states: &Tensor,
        actions: &Tensor,
        rng: &mut impl Rng,
    ) -> Result<(Tensor, Vec<usize>)> {
        let preds = self.elite_predictions(states, actions)?;
        Ok(self.sample_mixture_from(&preds, rng))
    }

    pub(crate) fn sample_mixture_from(&self, preds: &[(Tensor, Tensor)], rng: &mut impl Rng) -> (Tensor, Vec<usize>) {
        let (b, d) = (preds[0].0.rows(), preds[0].0.cols());
        let mut data = Vec::with_capacity(b * d);
        let mut picks = Vec::with_capacity(b);
        for r in 0..b {
            // A single elite is its own mixture; skip the draw so the sample matches it exactly.
            let k = if preds.len() == 1 { 0 } else { rng.random_range(0..preds.len()) };
            self.draw(preds[k].0.row(r), preds[k].1.row(r), rng, &mut data);
            picks.push(k);
        }
        (Tensor::matrix(b, d, data).expect("sample shape"), picks)
    }

    pub fn sample_mixture(&self, s: &[f64], a: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let (t, _) = self.sample_mixture_batch(&Tensor::from_rows(&[s]), &Tensor::from_rows(&[a]), rng)?;
        Ok(t.row(0).to_vec())
    }

    /// Holdout-style NLL of every member on `data`.
    pub fn nll(&self, data: &[Transition]) -> Result<Vec<f64>> {
        let (x, y) = design(data)?;
        self.models.iter().map(|m| m.nll(&x, &y)).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.set_meta("kind", "ensemble");
        c.set_meta("obs_dim", self.obs_dim());
        c.set_meta("act_dim", self.act_dim());
        c.set_meta("n_models", self.models.len());
        c.set_meta("elites", join(&self.elites));
        c.set_meta("noise_scale", format!("{:?}", self.noise_scale));
        c.insert("holdout_nll", Tensor::vector(self.holdout_nll.clone()));
        for (i, m) in self.models.iter().enumerate() {
            c.insert_mlp(&format!("model{i}"), &m.net);
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.meta("kind")? != "ensemble" {
            return Err(Error::invalid("checkpoint does not hold a dynamics ensemble"));
        }
        let obs_dim: usize = c.meta_parse("obs_dim")?;
        let act_dim: usize = c.meta_parse("act_dim")?;
        let n: usize = c.meta_parse("n_models")?;
        let models = (0..n)
            .map(|i| GaussianModel::from_net(c.get_mlp(&format!("model{i}"))?, obs_dim, act_dim))
            .collect::<Result<Vec<_>>>()?;
        let elites = split(c.meta("elites")?)?;
        let mut ens = if elites.is_empty() {
            Self { models, elites, holdout_nll: Vec::new(), noise_scale: 1.0 }
        } else {
            Self::from_models(models, elites)?
        };
        ens.holdout_nll = c.get("holdout_nll")?.data().to_vec();
        ens.noise_scale = c.meta_parse("noise_scale")?;
        Ok(ens)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Replaces member `i`'s network (used to build hand-set ensembles).
    pub fn set_net(&mut self, i: usize, net: Mlp) -> Result<()> {
        self.models[i] = GaussianModel::from_net(net, self.obs_dim(), self.act_dim())?;
        Ok(())
    }
}

fn join(v: &[usize]) -> String {
    if v.is_empty() {
        return "-".into();
    }
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn split(s: &str) -> Result<Vec<usize>> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',').map(|x| x.parse().map_err(|_| Error::invalid(format!("bad elite list `{s}`")))).collect()
}
