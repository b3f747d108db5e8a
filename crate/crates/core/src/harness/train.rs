//! Task-IL and Class-IL training protocols.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::builder::{decode, ComponentConfig, HeadLayout, HeadSelector, Mode, Network};
use crate::error::{Error, Result};
use crate::genotype::Genotype;
use crate::harness::buffer::ReplayBuffer;
use crate::harness::data::LabeledDataset;
use crate::harness::metrics::AccuracyMatrix;
use crate::harness::stream::TaskStream;
use crate::numerics::{backward_into, Sgd, Tape, Tensor};
use crate::scalar::Scalar;
use crate::seed;

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const BUFFER_STREAM: u64 = 3;
const HEAD_STREAM: u64 = 4;
const EVAL_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// x0.1 at 60% and again at 80% of a task's epochs.
    Step,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs_first: usize,
    pub epochs_rest: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    /// Random horizontal flip and shift of up to two pixels.
    pub augment: bool,
    pub seed: u64,
    /// Task IL only: stop updating the shared trunk after the first task.
    pub freeze_trunk_after_first: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_first: 10,
            epochs_rest: 5,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            lr_schedule: LrSchedule::Constant,
            augment: false,
            seed: 0,
            freeze_trunk_after_first: false,
        }
    }
}

impl TrainConfig {
    /// 60 epochs on the first task, 20 on the rest.
    pub fn full_scale_task_il() -> Self {
        Self {
            epochs_first: 60,
            epochs_rest: 20,
            lr_schedule: LrSchedule::Step,
            ..Self::default()
        }
    }

    /// 200 epochs on the first task, 70 on the rest.
    pub fn full_scale_class_il() -> Self {
        Self {
            epochs_first: 200,
            epochs_rest: 70,
            lr_schedule: LrSchedule::Step,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs_first == 0 || self.epochs_rest == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.momentum >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config("lr, momentum and weight decay must be non-negative".into()));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize, epochs: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Step => {
                let frac = epoch as f64 / epochs as f64;
                if frac >= 0.8 {
                    self.lr * 0.01
                } else if frac >= 0.6 {
                    self.lr * 0.1
                } else {
                    self.lr
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    TaskIl,
    ClassIl { buffer: usize },
}

impl Scenario {
    pub fn preset(&self) -> ComponentConfig {
        match self {
            Scenario::TaskIl => ComponentConfig::task_il(),
            Scenario::ClassIl { .. } => ComponentConfig::class_il(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Keep a copy of the network after every task.
    pub capture_checkpoints: bool,
}

#[derive(Clone, Debug)]
pub struct ClOutcome<T> {
    pub matrix: AccuracyMatrix,
    pub param_count: usize,
    pub checkpoints: Vec<Network<T>>,
}

/// In-place random horizontal flip and zero-filled shift of up to two pixels.
pub fn augment<T: Scalar, R: Rng + ?Sized>(batch: &mut Tensor<T>, rng: &mut R) {
    let [n, c, h, w] = batch.dims4("augment").expect("image batch");
    let data = batch.data_mut();
    let mut plane = vec![T::zero(); h * w];
    for b in 0..n {
        let flip = rng.gen_bool(0.5);
        let dy = rng.gen_range(-2i64..=2);
        let dx = rng.gen_range(-2i64..=2);
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            plane.copy_from_slice(&data[base..base + h * w]);
            for y in 0..h {
                for x in 0..w {
                    let sy = y as i64 - dy;
                    let sx0 = x as i64 - dx;
                    let sx = if flip { w as i64 - 1 - sx0 } else { sx0 };
                    data[base + y * w + x] =
                        if sy < 0 || sy >= h as i64 || sx < 0 || sx >= w as i64 {
                            T::zero()
                        } else {
                            plane[sy as usize * w + sx as usize]
                        };
                }
            }
        }
    }
}

fn column_map<T: Scalar>(net: &Network<T>, sel: HeadSelector, num_classes: usize) -> Result<Vec<Option<usize>>> {
    let head = net.head(sel)?;
    let mut map = vec![None; num_classes];
    for (j, &c) in head.classes.iter().enumerate() {
        map[c] = Some(j);
    }
    Ok(map)
}

fn train_on<T: Scalar>(
    net: &mut Network<T>,
    ds: &LabeledDataset,
    indices: &[usize],
    sel: HeadSelector,
    epochs: usize,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    let map = column_map(net, sel, ds.num_classes())?;
    let mut opt = Sgd::new(
        T::from_f64_lossy(cfg.lr),
        T::from_f64_lossy(cfg.momentum),
        T::from_f64_lossy(cfg.weight_decay),
    );
    let mut order = indices.to_vec();
    for epoch in 0..epochs {
        opt.lr = T::from_f64_lossy(cfg.lr_at(epoch, epochs));
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            // batch statistics are undefined for a single sample
            if chunk.len() < 2 {
                continue;
            }
            let mut x = ds.batch::<T>(chunk);
            if cfg.augment {
                augment(&mut x, rng);
            }
            let labels = chunk
                .iter()
                .map(|&i| {
                    let l = ds.labels()[i];
                    map[l].ok_or(Error::InactiveLabel { label: l })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let logits = net.forward_logits(&mut tape, xv, sel, Mode::Train)?;
            let (loss, _) = tape.softmax_cross_entropy(logits, &labels, None)?;
            backward_into(&tape, loss, net.store_mut())?;
            opt.step(net.store_mut())?;
        }
    }
    Ok(())
}

/// Top-1 accuracy of head `sel` on `indices` of `ds`; the prediction ranges
/// over that head's classes only.
pub fn accuracy<T: Scalar>(
    net: &Network<T>,
    ds: &LabeledDataset,
    indices: &[usize],
    sel: HeadSelector,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Dataset("accuracy on an empty split".into()));
    }
    let classes = net.head(sel)?.classes.clone();
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_BATCH) {
        let logits = net.logits(&ds.batch::<T>(chunk), sel)?;
        let width = classes.len();
        for (row, &i) in logits.data().chunks(width).zip(chunk) {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
            if classes[best] == ds.labels()[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// `a[i][stage]` for every `i <= stage`, using each task's own head.
pub fn evaluate_task_il<T: Scalar>(net: &Network<T>, stream: &TaskStream, stage: usize) -> Result<Vec<f64>> {
    (0..=stage)
        .map(|i| accuracy(net, &stream.benchmark.test, &stream.tasks[i].test, HeadSelector::Task(i)))
        .collect()
}

/// `a[i][stage]` for every `i <= stage`, predicting over all seen classes.
pub fn evaluate_class_il<T: Scalar>(net: &Network<T>, stream: &TaskStream, stage: usize) -> Result<Vec<f64>> {
    (0..=stage)
        .map(|i| accuracy(net, &stream.benchmark.test, &stream.tasks[i].test, HeadSelector::Unified))
        .collect()
}

/// Runs a full continual-learning protocol for `g` decoded under `component`.
pub fn run_continual<T: Scalar>(
    g: &Genotype,
    component: &ComponentConfig,
    scenario: Scenario,
    stream: &TaskStream,
    cfg: &TrainConfig,
    opts: RunOptions,
) -> Result<ClOutcome<T>> {
    cfg.validate()?;
    if stream.is_empty() {
        return Err(Error::Config("empty task stream".into()));
    }
    let bench = &stream.benchmark;
    let plan = decode(g, component, bench.train.shape(), bench.train.num_classes())?;
    let layout = match scenario {
        Scenario::TaskIl => HeadLayout::PerTask,
        Scenario::ClassIl { .. } => HeadLayout::Unified,
    };
    let mut init_rng = seed::rng(cfg.seed, &[INIT_STREAM]);
    let mut net = Network::<T>::instantiate_incremental(&plan, layout, &mut init_rng);
    let mut buffer = match scenario {
        Scenario::ClassIl { buffer } => Some(ReplayBuffer::new(buffer)),
        Scenario::TaskIl => None,
    };
    let mut rows = Vec::with_capacity(stream.len());
    let mut checkpoints = Vec::new();
    for (b, task) in stream.tasks.iter().enumerate() {
        let mut head_rng = seed::rng(cfg.seed, &[HEAD_STREAM, b as u64]);
        let mut rng = seed::rng(cfg.seed, &[SHUFFLE_STREAM, b as u64]);
        let epochs = if b == 0 { cfg.epochs_first } else { cfg.epochs_rest };
        match scenario {
            Scenario::TaskIl => {
                let t = net.attach_head(&task.classes, &mut head_rng)?;
                if b > 0 && cfg.freeze_trunk_after_first {
                    net.set_trunk_frozen(true);
                }
                net.focus_head(t);
                train_on(&mut net, &bench.train, &task.train, HeadSelector::Task(t), epochs, cfg, &mut rng)?;
                rows.push(evaluate_task_il(&net, stream, b)?);
            }
            Scenario::ClassIl { .. } => {
                net.grow_head(&task.classes, &mut head_rng)?;
                let buf = buffer.as_mut().expect("class IL has a buffer");
                let mut indices = task.train.clone();
                indices.extend(buf.indices());
                train_on(&mut net, &bench.train, &indices, HeadSelector::Unified, epochs, cfg, &mut rng)?;
                let task_data: Vec<(usize, Vec<usize>)> = task
                    .classes
                    .iter()
                    .map(|&c| {
                        let idx = task
                            .train
                            .iter()
                            .copied()
                            .filter(|&i| bench.train.labels()[i] == c)
                            .collect();
                        (c, idx)
                    })
                    .collect();
                buf.update(&task_data, seed::derive(cfg.seed, &[BUFFER_STREAM, b as u64]))?;
                rows.push(evaluate_class_il(&net, stream, b)?);
            }
        }
        if opts.capture_checkpoints {
            checkpoints.push(net.clone());
        }
    }
    Ok(ClOutcome {
        matrix: AccuracyMatrix::from_rows(rows)?,
        param_count: net.param_count(),
        checkpoints,
    })
}

/// Task IL with the `task_il` preset, in `f32`.
pub fn train_task_il(g: &Genotype, stream: &TaskStream, cfg: &TrainConfig) -> Result<AccuracyMatrix> {
    Ok(run_continual::<f32>(g, &ComponentConfig::task_il(), Scenario::TaskIl, stream, cfg, RunOptions::default())?.matrix)
}

/// Class IL with the `class_il` preset and a replay buffer, in `f32`.
pub fn train_class_il(
    g: &Genotype,
    stream: &TaskStream,
    buffer_capacity: usize,
    cfg: &TrainConfig,
) -> Result<AccuracyMatrix> {
    Ok(run_continual::<f32>(
        g,
        &ComponentConfig::class_il(),
        Scenario::ClassIl { buffer: buffer_capacity },
        stream,
        cfg,
        RunOptions::default(),
    )?
    .matrix)
}
