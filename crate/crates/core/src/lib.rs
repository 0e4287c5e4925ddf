//! Model-based offline reinforcement learning with a conservative Bellman
//! operator.
//!
//! The crate is organised bottom-up:
//!
//! * [`ndmath`]: dense tensors, a reverse-mode tape, MLPs and Adam.
//! * [`envs`]: the pendulum environment and behavior-policy datasets.
//! * [`data`]: transitions, normalization, the mixed offline/model sampler.
//! * [`dynamics`]: the probabilistic dynamics ensemble and model rollouts.
//! * [`penalty`]: the uncertainty-set penalty and the conservative critic target.
//! * [`agent`]: the soft actor-critic learner and its training loop.
//! * [`tabular`]: exact standard, robust and conservative operators on finite MDPs.
//! * [`robust_eval`]: observation attacks, environment sweeps, normalized scores.
//! * [`config`]: run configuration shared by the `micro` binary.

pub mod agent;
pub mod config;
pub mod data;
pub mod dynamics;
pub mod envs;
pub mod error;
pub mod ndmath;
pub mod penalty;
pub mod rng;
pub mod robust_eval;
pub mod tabular;

pub use error::{Error, Result};
