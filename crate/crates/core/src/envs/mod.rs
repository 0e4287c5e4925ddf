//! The desk-scale pendulum environment and its offline datasets.

pub mod behavior;
mod dataset;
pub mod pendulum;

pub use behavior::{train_behavior, BehaviorPolicy, BehaviorTraining, CemConfig};
pub use dataset::{dataset_from, generate_dataset, generate_from, BehaviorLabel, DatasetTier, BEHAVIOR_NOISE};
pub use pendulum::{EnvPerturbation, Pendulum, PendulumParams, PendulumState, StepOutcome};
