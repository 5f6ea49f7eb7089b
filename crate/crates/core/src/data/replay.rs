use std::collections::VecDeque;

use rand::seq::index;

use super::DataError;
use crate::Rng;

/// Bounded FIFO buffer with uniform sampling without replacement.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends `item`, evicting the oldest entry when full.
    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// `min(n, len)` distinct items chosen uniformly at random.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Vec<&T>, DataError> {
        if self.items.is_empty() {
            return Err(DataError::Empty);
        }
        let n = n.min(self.items.len());
        Ok(index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn oldest_is_evicted() {
        let mut b = ReplayBuffer::new(2);
        for i in 0..3 {
            b.push(i);
        }
        assert_eq!(b.iter().copied().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn full_sample_is_permutation() {
        let mut b = ReplayBuffer::new(10);
        (0..7).for_each(|i| b.push(i));
        let mut rng = Rng::seed_from_u64(1);
        let mut s: Vec<i32> = b.sample(7, &mut rng).unwrap().into_iter().copied().collect();
        s.sort();
        assert_eq!(s, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn empty_sample_errors() {
        let b: ReplayBuffer<u8> = ReplayBuffer::new(3);
        assert!(matches!(b.sample(1, &mut Rng::seed_from_u64(0)), Err(DataError::Empty)));
    }

    #[test]
    fn sampling_is_uniform() {
        let mut b = ReplayBuffer::new(10);
        (0..10).for_each(|i| b.push(i));
        let mut rng = Rng::seed_from_u64(7);
        let draws = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..draws {
            counts[*b.sample(1, &mut rng).unwrap()[0]] += 1;
        }
        let p = 0.1;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
        // Chi-squared with 9 degrees of freedom; 99.9% quantile is 27.88.
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - draws as f64 * p).powi(2) / (draws as f64 * p))
            .sum();
        assert!(chi2 < 27.88);
    }
}
