mod common;

use clnas::builder::HeadSelector;
use clnas::genotype::count_parameters;
use clnas::harness::{accuracy, make_synthetic_benchmark, run_continual, split_tasks, RunOptions, Scenario, SyntheticSpec, TrainConfig};
use clnas::search::{evaluate_fitness, run_search, EvalRecord, FitnessMode, SearchConfig, Searcher, Surrogate};
use clnas::{Bounds, InputShape};
use common::genotype;

fn surrogate(seed: u64, workers: usize) -> SearchConfig {
    SearchConfig {
        mode: FitnessMode::Surrogate(Surrogate {
            target_width: 36,
            target_depth: 12,
        }),
        master_seed: seed,
        workers,
        ..SearchConfig::default()
    }
}

fn canonical(h: &[EvalRecord]) -> Vec<EvalRecord> {
    h.iter().map(EvalRecord::canonical).collect()
}

#[test]
fn best_fitness_never_decreases_over_long_runs() {
    let cfg = SearchConfig {
        generations: 100,
        ..surrogate(3, 1)
    };
    let out = run_search(&cfg, None).unwrap();
    for pair in out.generations.windows(2) {
        assert!(pair[1].best_fitness >= pair[0].best_fitness);
    }
    assert_eq!(out.generations.len(), 101);
    assert_eq!(out.history.len(), 10 * 101);
    assert!(out.history.iter().all(|r| cfg.bounds.check(&r.genotype).is_ok()));
}

#[test]
fn history_does_not_depend_on_worker_count() {
    let one = run_search(&surrogate(9, 1), None).unwrap();
    let four = run_search(&surrogate(9, 4), None).unwrap();
    assert_eq!(
        serde_json::to_string(&canonical(&one.history)).unwrap(),
        serde_json::to_string(&canonical(&four.history)).unwrap()
    );
    assert_eq!(one.best, four.best);
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let cfg = surrogate(5, 1);
    let full = run_search(&cfg, None).unwrap();
    for cut in [35, 50] {
        let prefix = &full.history[..cut];
        let mut searcher = Searcher::new(cfg.clone(), None).unwrap();
        assert_eq!(searcher.resume_from(prefix), cut / 10);
        let mut tail = Vec::new();
        let resumed = searcher
            .run(&mut |r| {
                tail.push(r.clone());
                Ok(())
            })
            .unwrap();
        assert_eq!(resumed.best, full.best);
        let kept = &prefix[..cut / 10 * 10];
        let joined: Vec<_> = kept.iter().chain(&tail).collect();
        assert_eq!(joined.len(), full.history.len());
        for (a, b) in joined.iter().zip(&full.history) {
            assert_eq!((a.generation, a.index, a.genotype, a.fitness), (b.generation, b.index, b.genotype, b.fitness));
        }
    }
}

#[test]
fn budget_holds_for_every_evaluation() {
    let limit = 20_000;
    let mut cfg = surrogate(11, 1);
    cfg.bounds.param_limit = Some(limit);
    let out = run_search(&cfg, None).unwrap();
    let component = cfg.component_config();
    for r in &out.history {
        assert!(r.param_count <= limit);
        assert_eq!(count_parameters(&r.genotype, &component, cfg.input, cfg.num_classes).unwrap(), r.param_count);
    }
}

#[test]
fn infeasible_budget_fails_before_evaluating() {
    let mut cfg = surrogate(1, 1);
    cfg.bounds.param_limit = Some(10);
    let mut seen = 0;
    let err = Searcher::new(cfg, None).unwrap().run(&mut |_| {
        seen += 1;
        Ok(())
    });
    assert!(err.is_err());
    assert_eq!(seen, 0);
}

#[test]
fn invalid_bounds_are_rejected() {
    let cfg = SearchConfig {
        bounds: Bounds {
            d_min: 5,
            d_max: 2,
            ..Bounds::default()
        },
        ..surrogate(1, 1)
    };
    assert!(Searcher::new(cfg, None).is_err());
}

#[test]
fn real_fitness_is_deterministic_and_degenerates_to_accuracy() {
    let bench = make_synthetic_benchmark(&SyntheticSpec {
        per_class_train: 10,
        per_class_test: 10,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let stream = split_tasks(&bench, 1, 10, 0).unwrap();
    let train = TrainConfig {
        epochs_first: 2,
        epochs_rest: 1,
        batch_size: 10,
        ..TrainConfig::default()
    };
    let cfg = SearchConfig {
        mode: FitnessMode::ClassIl { buffer: 20 },
        input: InputShape::square(3, 16),
        train: train.clone(),
        ..SearchConfig::default()
    };
    let g = genotype("3,8,0,1,7,7,7,1,7,7,7,7");
    let a = evaluate_fitness(&g, &cfg, Some(&stream));
    let b = evaluate_fitness(&g, &cfg, Some(&stream));
    assert_eq!(a, b);
    let run = run_continual::<f32>(
        &g,
        &cfg.component_config(),
        Scenario::ClassIl { buffer: 20 },
        &stream,
        &TrainConfig {
            seed: cfg.eval_seed(),
            ..train
        },
        RunOptions { capture_checkpoints: true },
    )
    .unwrap();
    let plain = accuracy(&run.checkpoints[0], &bench.test, &stream.tasks[0].test, HeadSelector::Unified).unwrap();
    assert_eq!(a.fitness, plain);
}
