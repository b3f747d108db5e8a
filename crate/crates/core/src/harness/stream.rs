use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::harness::data::Benchmark;
use crate::seed;

/// One incremental step: its classes and the matching train/test indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub classes: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Ordered tasks over disjoint class sets.
#[derive(Clone, Debug)]
pub struct TaskStream {
    pub benchmark: Benchmark,
    pub tasks: Vec<Task>,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Train-split indices of `class`.
    pub fn train_of_class(&self, class: usize) -> Vec<usize> {
        self.benchmark.train.indices_of(class)
    }
}

/// Shuffles the class ids with `seed` and cuts them into `num_tasks`
/// contiguous groups of `classes_per_task`.
pub fn split_tasks(
    bench: &Benchmark,
    num_tasks: usize,
    classes_per_task: usize,
    seed: u64,
) -> Result<TaskStream> {
    let k = bench.train.num_classes();
    if num_tasks == 0 || classes_per_task == 0 || num_tasks * classes_per_task != k {
        return Err(Error::Config(format!(
            "{num_tasks} tasks x {classes_per_task} classes does not partition {k} classes"
        )));
    }
    if bench.test.num_classes() != k || bench.test.shape() != bench.train.shape() {
        return Err(Error::Dataset("train and test splits disagree".into()));
    }
    let mut classes: Vec<usize> = (0..k).collect();
    classes.shuffle(&mut seed::rng(seed, &[0x7a5c]));
    let mut tasks = Vec::with_capacity(num_tasks);
    for chunk in classes.chunks(classes_per_task) {
        let mut group = chunk.to_vec();
        group.sort_unstable();
        let pick = |labels: &[usize]| -> Vec<usize> {
            (0..labels.len()).filter(|&i| group.contains(&labels[i])).collect()
        };
        let train = pick(bench.train.labels());
        let test = pick(bench.test.labels());
        for &c in &group {
            let has = |labels: &[usize]| labels.iter().any(|&l| l == c);
            if !has(bench.train.labels()) || !has(bench.test.labels()) {
                return Err(Error::Dataset(format!("class {c} has no train or test samples")));
            }
        }
        tasks.push(Task {
            classes: group,
            train,
            test,
        });
    }
    Ok(TaskStream {
        benchmark: bench.clone(),
        tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::{make_synthetic_benchmark, SyntheticSpec};
    use std::collections::BTreeSet;

    fn bench(classes: usize) -> Benchmark {
        make_synthetic_benchmark(&SyntheticSpec {
            num_classes: classes,
            per_class_train: 2,
            per_class_test: 1,
            image_size: 4,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn hundred_classes_twenty_tasks() {
        let s = split_tasks(&bench(100), 20, 5, 1).unwrap();
        assert_eq!(s.len(), 20);
        assert!(s.tasks.iter().all(|t| t.classes.len() == 5));
    }

    #[test]
    fn disjoint_and_covering() {
        let b = bench(10);
        let s = split_tasks(&b, 5, 2, 3).unwrap();
        let mut all = BTreeSet::new();
        for t in &s.tasks {
            for &c in &t.classes {
                assert!(all.insert(c));
            }
            assert!(t.test.iter().all(|&i| t.classes.contains(&b.test.labels()[i])));
        }
        assert_eq!(all.len(), 10);
        let covered: usize = s.tasks.iter().map(|t| t.test.len()).sum();
        assert_eq!(covered, b.test.len());
    }

    #[test]
    fn seeds_change_order_not_sizes() {
        let b = bench(10);
        let a = split_tasks(&b, 5, 2, 1).unwrap();
        let c = split_tasks(&b, 5, 2, 2).unwrap();
        let order = |s: &TaskStream| s.tasks.iter().map(|t| t.classes.clone()).collect::<Vec<_>>();
        assert_ne!(order(&a), order(&c));
        assert!(c.tasks.iter().all(|t| t.classes.len() == 2));
    }

    #[test]
    fn indivisible_is_error() {
        assert!(split_tasks(&bench(10), 3, 3, 1).is_err());
    }
}
