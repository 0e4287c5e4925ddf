use std::collections::VecDeque;

use rand::Rng;

use super::{Source, Transition};
use crate::{Error, Result};

/// Fixed-capacity FIFO store; inserting past capacity evicts the oldest.
#[derive(Debug, Clone)]
pub struct RingBuffer<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> RingBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "ring buffer capacity must be positive");
        Self { items: VecDeque::with_capacity(capacity.min(1 << 20)), capacity }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = T>) {
        for it in items {
            self.push(it);
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }
}

/// A model-generated transition together with the per-elite next-state set
/// drawn when it was generated.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub transition: Transition,
    pub next_set: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub transition: &'a Transition,
    /// Present for model-sourced items.
    pub next_set: Option<&'a [Vec<f64>]>,
}

/// Offline data plus a ring buffer of model data, sampled per element with
/// model probability `mix`.
#[derive(Debug, Clone)]
pub struct MixedBuffer {
    offline: Vec<Transition>,
    model: RingBuffer<ModelRecord>,
    mix: f64,
}

impl MixedBuffer {
    pub fn new(offline: Vec<Transition>, model_capacity: usize, mix: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mix) {
            return Err(Error::invalid(format!("model-data probability {mix} outside [0, 1]")));
        }
        Ok(Self { offline, model: RingBuffer::new(model_capacity), mix })
    }

    pub fn mix(&self) -> f64 {
        self.mix
    }

    pub fn offline(&self) -> &[Transition] {
        &self.offline
    }

    pub fn model(&self) -> &RingBuffer<ModelRecord> {
        &self.model
    }

    pub fn add_model(&mut self, records: impl IntoIterator<Item = ModelRecord>) {
        self.model.extend(records);
    }

    pub fn clear_model(&mut self) {
        self.model.clear();
    }

    /// Draws `batch_size` items. Each item independently comes from the model
    /// store with probability `mix` (when it is non-empty), else from the
    /// offline store; indices are uniform within the chosen store.
    pub fn sample<'a>(&'a self, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<BatchItem<'a>>> {
        if self.offline.is_empty() {
            return Err(Error::Empty("offline store"));
        }
        let use_model = !self.model.is_empty();
        let mut out = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let u: f64 = rng.random();
            if use_model && u < self.mix {
                let rec = self.model.get(rng.random_range(0..self.model.len())).unwrap();
                out.push(BatchItem { transition: &rec.transition, next_set: Some(&rec.next_set) });
            } else {
                let t = &self.offline[rng.random_range(0..self.offline.len())];
                out.push(BatchItem { transition: t, next_set: None });
            }
        }
        Ok(out)
    }
}

impl BatchItem<'_> {
    pub fn source(&self) -> Source {
        self.transition.source
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn tr(x: f64, source: Source) -> Transition {
        Transition { s: vec![x], a: vec![0.0], r: x, s2: vec![x], done: false, source }
    }

    fn buffer(mix: f64, model_items: usize) -> MixedBuffer {
        let offline = (0..50).map(|i| tr(i as f64, Source::Offline)).collect();
        let mut b = MixedBuffer::new(offline, 1000, mix).unwrap();
        b.add_model(
            (0..model_items)
                .map(|i| ModelRecord { transition: tr(i as f64, Source::Model), next_set: vec![vec![i as f64]] }),
        );
        b
    }

    #[test]
    fn boundaries_of_mix_probability() {
        let mut rng = rng_from_seed(0);
        let b0 = buffer(0.0, 10);
        assert!(b0.sample(500, &mut rng).unwrap().iter().all(|i| i.source() == Source::Offline));
        let b1 = buffer(1.0, 10);
        let batch = b1.sample(500, &mut rng).unwrap();
        assert!(batch.iter().all(|i| i.source() == Source::Model && i.next_set.is_some()));
    }

    #[test]
    fn empty_model_store_falls_back_to_offline() {
        let mut rng = rng_from_seed(0);
        let b = buffer(1.0, 0);
        assert!(b.sample(100, &mut rng).unwrap().iter().all(|i| i.source() == Source::Offline));
    }

    #[test]
    fn mix_fraction_concentrates() {
        // Binomial(10000, 0.95): sd ≈ 0.0022, so ±0.01 is about 4.6 sd.
        let mut rng = rng_from_seed(42);
        let b = buffer(0.95, 100);
        let batch = b.sample(10_000, &mut rng).unwrap();
        assert_eq!(batch.len(), 10_000);
        let frac = batch.iter().filter(|i| i.source() == Source::Model).count() as f64 / 1e4;
        assert!((frac - 0.95).abs() < 0.01, "{frac}");
    }

    #[test]
    fn empty_offline_store_is_an_error() {
        let b = MixedBuffer::new(Vec::new(), 10, 0.5).unwrap();
        assert!(b.sample(1, &mut rng_from_seed(0)).is_err());
        assert!(MixedBuffer::new(Vec::new(), 10, 1.5).is_err());
    }

    #[test]
    fn ring_buffer_evicts_oldest() {
        let mut r = RingBuffer::new(5);
        r.extend(0..8);
        assert_eq!(r.iter().copied().collect::<Vec<_>>(), vec![3, 4, 5, 6, 7]);
    }

    #[test]
    fn sampling_is_deterministic() {
        let b = buffer(0.5, 20);
        let pick = |seed| {
            b.sample(64, &mut rng_from_seed(seed))
                .unwrap()
                .iter()
                .map(|i| (i.source(), i.transition.r))
                .collect::<Vec<_>>()
        };
        assert_eq!(pick(3), pick(3));
    }
}
