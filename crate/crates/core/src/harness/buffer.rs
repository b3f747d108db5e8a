use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

/// Fixed-capacity exemplar store, balanced across the classes seen so far.
/// Holds indices into the benchmark's train split. Capacity 0 disables replay.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayBuffer {
    capacity: usize,
    per_class: BTreeMap<usize, Vec<usize>>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            per_class: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.per_class.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> impl Iterator<Item = (&usize, &Vec<usize>)> {
        self.per_class.iter()
    }

    /// All stored indices, class by class.
    pub fn indices(&self) -> Vec<usize> {
        self.per_class.values().flatten().copied().collect()
    }

    /// Admits a task's classes. The per-class quota becomes
    /// `capacity / classes_seen`; old classes keep a prefix of their exemplars
    /// and new classes are sampled uniformly without replacement.
    pub fn update(&mut self, task_data: &[(usize, Vec<usize>)], seed: u64) -> Result<()> {
        if let Some((c, _)) = task_data.iter().find(|(_, idx)| idx.is_empty()) {
            return Err(Error::Dataset(format!("class {c} has no data for the buffer")));
        }
        if self.capacity == 0 {
            return Ok(());
        }
        let seen = self.per_class.len()
            + task_data
                .iter()
                .filter(|(c, _)| !self.per_class.contains_key(c))
                .count();
        let quota = self.capacity / seen;
        if quota == 0 {
            return Err(Error::BufferTooSmall {
                capacity: self.capacity,
                classes: seen,
            });
        }
        for kept in self.per_class.values_mut() {
            kept.truncate(quota);
        }
        for (class, idx) in task_data {
            let mut pool = idx.clone();
            pool.shuffle(&mut seed::rng(seed, &[*class as u64]));
            pool.truncate(quota);
            self.per_class.insert(*class, pool);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(class: usize, n: usize) -> (usize, Vec<usize>) {
        (class, (class * 100..class * 100 + n).collect())
    }

    #[test]
    fn quota_arithmetic() {
        let mut b = ReplayBuffer::new(20);
        b.update(&[data(0, 50), data(1, 50)], 1).unwrap();
        assert!(b.classes().all(|(_, v)| v.len() == 10));
        b.update(&[data(2, 50)], 2).unwrap();
        assert!(b.classes().all(|(_, v)| v.len() == 6));
        assert_eq!(b.len(), 18);
    }

    #[test]
    fn deterministic_subset_of_inputs() {
        let mut a = ReplayBuffer::new(8);
        let mut c = ReplayBuffer::new(8);
        a.update(&[data(3, 30)], 7).unwrap();
        c.update(&[data(3, 30)], 7).unwrap();
        assert_eq!(a, c);
        assert!(a.indices().iter().all(|&i| (300..330).contains(&i)));
    }

    #[test]
    fn errors() {
        let mut b = ReplayBuffer::new(1);
        assert!(matches!(
            b.update(&[data(0, 5), data(1, 5)], 0),
            Err(Error::BufferTooSmall { .. })
        ));
        assert!(b.update(&[(4, vec![])], 0).is_err());
        let mut off = ReplayBuffer::new(0);
        off.update(&[data(0, 5)], 0).unwrap();
        assert!(off.is_empty());
    }
}
