//! Transitions, normalization statistics and the mixed offline/model sampler.

mod buffer;
mod io;

pub use buffer::{BatchItem, MixedBuffer, ModelRecord, RingBuffer};
pub use io::{
    load_dataset, load_stats, read_dataset, save_dataset, save_stats, stats_path, write_dataset, Dataset, DatasetHeader,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Where a transition came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Collected in the real environment.
    Offline,
    /// Generated by the learned dynamics.
    Model,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s2: Vec<f64>,
    pub done: bool,
    pub source: Source,
}

/// Checks the per-dataset invariants: constant dimensions and finite rewards.
pub fn validate_transitions(data: &[Transition]) -> Result<()> {
    let Some(first) = data.first() else { return Ok(()) };
    let (ds, da) = (first.s.len(), first.a.len());
    for (i, t) in data.iter().enumerate() {
        if t.s.len() != ds || t.s2.len() != ds || t.a.len() != da {
            return Err(Error::Shape {
                context: format!("transition {i}"),
                expected: vec![ds, da, ds],
                got: vec![t.s.len(), t.a.len(), t.s2.len()],
            });
        }
        if !t.r.is_finite() {
            return Err(Error::NonFinite(format!("reward of transition {i}")));
        }
    }
    Ok(())
}

pub const STD_FLOOR: f64 = 1e-6;

/// Per-dimension observation (and action) statistics of the offline data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub act_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub act_std: Option<Vec<f64>>,
}

fn mean_std(rows: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r.iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for ((v, x), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

impl NormStats {
    /// Statistics of the observations `s` of offline transitions.
    pub fn from_transitions(data: &[Transition], with_actions: bool) -> Result<Self> {
        let offline: Vec<&Transition> = data.iter().filter(|t| t.source == Source::Offline).collect();
        if offline.is_empty() {
            return Err(Error::Empty("offline dataset"));
        }
        let obs: Vec<&[f64]> = offline.iter().map(|t| t.s.as_slice()).collect();
        let (obs_mean, obs_std) = mean_std(&obs);
        let (act_mean, act_std) = if with_actions {
            let acts: Vec<&[f64]> = offline.iter().map(|t| t.a.as_slice()).collect();
            let (m, s) = mean_std(&acts);
            (Some(m), Some(s))
        } else {
            (None, None)
        };
        Ok(Self { obs_mean, obs_std, act_mean, act_std })
    }

    pub fn identity(obs_dim: usize) -> Self {
        Self { obs_mean: vec![0.0; obs_dim], obs_std: vec![1.0; obs_dim], act_mean: None, act_std: None }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_mean.len()
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter().zip(&self.obs_mean).zip(&self.obs_std).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn denormalize(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter().zip(&self.obs_mean).zip(&self.obs_std).map(|((z, m), s)| z * s + m).collect()
    }

    /// Copy of `data` with `s` and `s2` normalized.
    pub fn normalize_transitions(&self, data: &[Transition]) -> Vec<Transition> {
        data.iter().map(|t| Transition { s: self.normalize(&t.s), s2: self.normalize(&t.s2), ..t.clone() }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tr(s: Vec<f64>) -> Transition {
        Transition { s: s.clone(), a: vec![0.0], r: 0.0, s2: s, done: false, source: Source::Offline }
    }

    #[test]
    fn constant_dimension_is_floored() {
        // dim 0 = [1, 2, 3]: mean 2, population std sqrt(2/3); dim 1 constant 5.
        let data = vec![tr(vec![1.0, 5.0]), tr(vec![2.0, 5.0]), tr(vec![3.0, 5.0])];
        let st = NormStats::from_transitions(&data, false).unwrap();
        assert_eq!(st.obs_mean, vec![2.0, 5.0]);
        assert!((st.obs_std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(st.obs_std[1], 1e-6);
    }

    #[test]
    fn stats_require_offline_data() {
        assert!(matches!(NormStats::from_transitions(&[], false), Err(Error::Empty(_))));
        let mut t = tr(vec![1.0]);
        t.source = Source::Model;
        assert!(NormStats::from_transitions(&[t], false).is_err());
    }

    #[test]
    fn validation_catches_ragged_records() {
        let mut bad = tr(vec![1.0, 2.0]);
        bad.s2 = vec![1.0];
        assert!(validate_transitions(&[tr(vec![1.0, 2.0]), bad]).is_err());
    }

    proptest! {
        #[test]
        fn normalize_round_trip(
            obs in proptest::collection::vec(-1e3f64..1e3, 3),
            mean in proptest::collection::vec(-10f64..10.0, 3),
            std in proptest::collection::vec(1e-3f64..10.0, 3),
        ) {
            let st = NormStats { obs_mean: mean, obs_std: std, act_mean: None, act_std: None };
            let back = st.denormalize(&st.normalize(&obs));
            for (a, b) in back.iter().zip(&obs) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
