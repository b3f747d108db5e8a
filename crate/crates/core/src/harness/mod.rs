//! Continual-learning harness: datasets, task streams, replay, training
//! protocols and incremental metrics.

pub mod buffer;
pub mod data;
pub mod metrics;
pub mod stream;
pub mod train;

pub use buffer::ReplayBuffer;
pub use data::{class_template, make_synthetic_benchmark, Benchmark, LabeledDataset, SyntheticSpec};
pub use metrics::AccuracyMatrix;
pub use stream::{split_tasks, Task, TaskStream};
pub use train::{
    accuracy, evaluate_class_il, evaluate_task_il, run_continual, train_class_il, train_task_il,
    ClOutcome, LrSchedule, RunOptions, Scenario, TrainConfig,
};
