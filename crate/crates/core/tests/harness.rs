mod common;

use clnas::builder::{decode, ComponentConfig, HeadLayout, HeadSelector, Network};
use clnas::harness::{
    accuracy, class_template, evaluate_task_il, make_synthetic_benchmark, run_continual, split_tasks, train_class_il,
    train_task_il, RunOptions, Scenario, SyntheticSpec, TrainConfig,
};
use common::{desk_stream, genotype, rng};

const G: &str = "3,8,0,1,7,7,7,1,7,7,7,7";

fn quick() -> TrainConfig {
    TrainConfig {
        epochs_first: 3,
        epochs_rest: 2,
        lr: 0.02,
        batch_size: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn nearest_template_is_perfect_without_noise() {
    let spec = SyntheticSpec {
        noise_level: 0.0,
        ..SyntheticSpec::default()
    };
    let bench = make_synthetic_benchmark(&spec).unwrap();
    let templates: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|c| class_template(c, spec.num_classes, spec.image_size, spec.channels))
        .collect();
    for i in 0..bench.train.len() {
        let img = bench.train.image(i);
        let dist = |t: &Vec<f64>| -> f64 { t.iter().zip(img).map(|(a, &p)| (a - p as f64 / 255.0).powi(2)).sum() };
        let best = (0..templates.len())
            .min_by(|&a, &b| dist(&templates[a]).total_cmp(&dist(&templates[b])))
            .unwrap();
        assert_eq!(best, bench.train.labels()[i]);
    }
}

#[test]
fn single_task_metrics_equal_plain_accuracy() {
    let bench = make_synthetic_benchmark(&SyntheticSpec::default()).unwrap();
    let stream = split_tasks(&bench, 1, 10, 0).unwrap();
    let g = genotype(G);
    for scenario in [Scenario::TaskIl, Scenario::ClassIl { buffer: 20 }] {
        let out = run_continual::<f32>(
            &g,
            &scenario.preset(),
            scenario,
            &stream,
            &quick(),
            RunOptions { capture_checkpoints: true },
        )
        .unwrap();
        let m = &out.matrix;
        assert_eq!(m.tasks(), 1);
        assert_eq!(m.la(), m.aia());
        let sel = match scenario {
            Scenario::TaskIl => HeadSelector::Task(0),
            Scenario::ClassIl { .. } => HeadSelector::Unified,
        };
        let plain = accuracy(&out.checkpoints[0], &bench.test, &stream.tasks[0].test, sel).unwrap();
        assert_eq!(m.aia(), plain);
    }
}

#[test]
fn desk_runs_are_lower_triangular_and_above_chance() {
    let stream = desk_stream(0.3);
    let g = genotype(G);
    for m in [
        train_task_il(&g, &stream, &quick()).unwrap(),
        train_class_il(&g, &stream, 40, &quick()).unwrap(),
    ] {
        assert_eq!(m.tasks(), 5);
        for (b, row) in m.rows().iter().enumerate() {
            assert_eq!(row.len(), b + 1);
            assert!(row.iter().all(|a| (0.0..=1.0).contains(a)));
        }
    }
    let m = train_task_il(&g, &stream, &quick()).unwrap();
    for b in 0..5 {
        assert!(m.get(b, b).unwrap() > 0.5, "diagonal {b}: {:?}", m.rows());
    }
}

#[test]
fn frozen_trunk_keeps_first_task_accuracy() {
    let stream = desk_stream(0.3);
    let cfg = TrainConfig {
        freeze_trunk_after_first: true,
        ..quick()
    };
    let m = train_task_il(&genotype(G), &stream, &cfg).unwrap();
    let first = m.get(0, 0).unwrap();
    for b in 1..5 {
        assert_eq!(m.get(0, b).unwrap(), first);
    }
}

#[test]
fn task_il_evaluation_reads_only_the_task_head() {
    let stream = desk_stream(0.3);
    let bench = &stream.benchmark;
    let plan = decode(&genotype(G), &ComponentConfig::task_il(), bench.train.shape(), 10).unwrap();
    let mut r = rng(2);
    let mut net = Network::<f32>::instantiate_incremental(&plan, HeadLayout::PerTask, &mut r);
    for task in &stream.tasks {
        net.attach_head(&task.classes, &mut r).unwrap();
    }
    for i in 0..stream.len() {
        net.reset_head_reads();
        accuracy(&net, &bench.test, &stream.tasks[i].test, HeadSelector::Task(i)).unwrap();
        for j in 0..stream.len() {
            assert_eq!(net.head_reads(j) > 0, i == j);
        }
    }
    net.reset_head_reads();
    evaluate_task_il(&net, &stream, 2).unwrap();
    assert!((0..3).all(|j| net.head_reads(j) == 1));
    assert!((3..5).all(|j| net.head_reads(j) == 0));
}

#[test]
fn full_buffer_is_no_worse_than_none() {
    let stream = desk_stream(0.6);
    let g = genotype(G);
    let full = train_class_il(&g, &stream, 200, &quick()).unwrap();
    let none = train_class_il(&g, &stream, 0, &quick()).unwrap();
    assert!(full.aia() >= none.aia(), "{} < {}", full.aia(), none.aia());
}

#[test]
fn undersized_buffer_is_an_error() {
    let stream = desk_stream(0.3);
    let err = train_class_il(&genotype(G), &stream, 5, &quick()).unwrap_err();
    assert!(matches!(err, clnas::Error::BufferTooSmall { .. }), "{err}");
}
