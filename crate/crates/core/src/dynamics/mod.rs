//! Probabilistic dynamics ensemble: maximum-likelihood training, elite
//! selection, the per-elite uncertainty set `X(s, a)`, mixture sampling and
//! short synthetic rollouts.

mod ensemble;
mod model;
mod rollout;

pub use ensemble::{EnsembleConfig, GaussianEnsemble, TrainReport, MIN_TRANSITIONS};
pub use model::{GaussianModel, LOG_STD_MAX, LOG_STD_MIN};
pub use rollout::{rollout, sample_starts, RolloutConfig};
