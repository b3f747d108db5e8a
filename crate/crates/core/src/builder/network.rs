use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::plan::{ArchitecturePlan, DownsampleKind, LayerKind};
use crate::error::{Error, Result};
use crate::numerics::{BnMode, BnStats, ParamId, ParamRole, ParamStore, PoolKind, Tape, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How classifier heads are organized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadLayout {
    /// One independent head per task; task identity picks the head.
    PerTask,
    /// A single head that grows as classes arrive.
    Unified,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadSelector {
    Task(usize),
    Unified,
}

#[derive(Clone, Debug)]
struct ConvBn {
    kernel: ParamId,
    bias: ParamId,
    gamma: ParamId,
    beta: ParamId,
    stats: usize,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Debug)]
enum Block {
    ConvBnRelu(ConvBn),
    Pool(PoolKind),
    Unit {
        conv: ConvBn,
        skip: bool,
        projection: Option<(ParamId, ParamId)>,
    },
    Gap,
    Flatten,
}

/// A linear classifier over `classes` (column `j` scores `classes[j]`).
#[derive(Debug)]
pub struct Head {
    pub classes: Vec<usize>,
    weight: ParamId,
    bias: ParamId,
    reads: AtomicU64,
}

impl Clone for Head {
    fn clone(&self) -> Self {
        Self {
            classes: self.classes.clone(),
            weight: self.weight,
            bias: self.bias,
            reads: AtomicU64::new(self.reads.load(Ordering::Relaxed)),
        }
    }
}

impl Head {
    /// Column index of a global class id.
    pub fn column(&self, class: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }
}

enum StatsAccess<'a, T> {
    Train(&'a mut [BnStats<T>]),
    Eval(&'a [BnStats<T>]),
}

/// An instantiated plan: trunk parameters, BN running statistics and heads.
#[derive(Clone, Debug)]
pub struct Network<T> {
    plan: ArchitecturePlan,
    store: ParamStore<T>,
    stats: Vec<BnStats<T>>,
    blocks: Vec<Block>,
    trunk_params: usize,
    layout: HeadLayout,
    heads: Vec<Head>,
    trunk_frozen: bool,
}

fn uniform_fan_in<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    // variance 2 / fan_in
    let a = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.gen_range(-a..a)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

struct Builder<'r, T, R: ?Sized> {
    store: ParamStore<T>,
    stats: Vec<BnStats<T>>,
    rng: &'r mut R,
}

impl<T: Scalar, R: Rng + ?Sized> Builder<'_, T, R> {
    fn conv_bn(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> ConvBn {
        let kernel = uniform_fan_in(self.rng, &[cout, cin, k, k], cin * k * k);
        let kernel = self.store.add(format!("{name}.kernel"), ParamRole::ConvKernel, kernel);
        let bias = self.store.add(format!("{name}.bias"), ParamRole::Bias, Tensor::zeros(&[cout]));
        let gamma = self.store.add(format!("{name}.bn.gamma"), ParamRole::BnGamma, Tensor::full(&[cout], T::one()));
        let beta = self.store.add(format!("{name}.bn.beta"), ParamRole::BnBeta, Tensor::zeros(&[cout]));
        self.stats.push(BnStats::new(cout));
        ConvBn {
            kernel,
            bias,
            gamma,
            beta,
            stats: self.stats.len() - 1,
            stride,
            pad: k / 2,
        }
    }
}

impl<T: Scalar> Network<T> {
    /// Trunk plus a single unified head covering classes `0..num_classes`.
    /// Its parameter count equals `plan.param_count()`.
    pub fn instantiate<R: Rng + ?Sized>(plan: &ArchitecturePlan, rng: &mut R) -> Self {
        let mut net = Self::instantiate_incremental(plan, HeadLayout::Unified, rng);
        let classes: Vec<usize> = (0..plan.num_classes).collect();
        net.grow_head(&classes, rng).expect("fresh head, distinct classes");
        net
    }

    /// Trunk only; heads are added with [`attach_head`](Self::attach_head)
    /// or [`grow_head`](Self::grow_head) as tasks arrive.
    pub fn instantiate_incremental<R: Rng + ?Sized>(
        plan: &ArchitecturePlan,
        layout: HeadLayout,
        rng: &mut R,
    ) -> Self {
        let mut b = Builder {
            store: ParamStore::new(),
            stats: Vec::new(),
            rng,
        };
        let mut blocks = Vec::new();
        for (i, layer) in plan.layers.iter().enumerate() {
            match layer.kind {
                LayerKind::Stem { cin, cout } => {
                    blocks.push(Block::ConvBnRelu(b.conv_bn("stem", cin, cout, 3, 1)));
                }
                LayerKind::Downsample { kind, channels } => blocks.push(match kind {
                    DownsampleKind::MaxPool => Block::Pool(PoolKind::Max),
                    DownsampleKind::AvgPool => Block::Pool(PoolKind::Avg),
                    DownsampleKind::StridedConv => Block::ConvBnRelu(b.conv_bn(
                        &format!("down{i}"),
                        channels,
                        channels,
                        3,
                        2,
                    )),
                }),
                LayerKind::Unit {
                    index,
                    cin,
                    cout,
                    skip,
                    projection,
                } => {
                    let name = format!("unit{index}");
                    let conv = b.conv_bn(&name, cin, cout, 3, 1);
                    let projection = projection.then(|| {
                        let k = uniform_fan_in(b.rng, &[cout, cin, 1, 1], cin);
                        let k = b.store.add(format!("{name}.proj.kernel"), ParamRole::ConvKernel, k);
                        let bias = b.store.add(format!("{name}.proj.bias"), ParamRole::Bias, Tensor::zeros(&[cout]));
                        (k, bias)
                    });
                    blocks.push(Block::Unit {
                        conv,
                        skip,
                        projection,
                    });
                }
                LayerKind::PreClassifier { cin, cout } => {
                    blocks.push(Block::ConvBnRelu(b.conv_bn("pre", cin, cout, 1, 1)));
                }
                LayerKind::GlobalAvgPool => blocks.push(Block::Gap),
                LayerKind::Flatten => blocks.push(Block::Flatten),
                LayerKind::Classifier { .. } => {}
            }
        }
        let trunk_params = b.store.len();
        Self {
            plan: plan.clone(),
            store: b.store,
            stats: b.stats,
            blocks,
            trunk_params,
            layout,
            heads: Vec::new(),
            trunk_frozen: false,
        }
    }

    pub fn plan(&self) -> &ArchitecturePlan {
        &self.plan
    }

    pub fn layout(&self) -> HeadLayout {
        self.layout
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn bn_stats(&self) -> &[BnStats<T>] {
        &self.stats
    }

    pub fn bn_stats_mut(&mut self) -> &mut [BnStats<T>] {
        &mut self.stats
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    pub fn is_trunk_param(&self, id: ParamId) -> bool {
        id.0 < self.trunk_params
    }

    /// Freezing excludes trunk parameters from optimization and runs the trunk
    /// batch norms on their running statistics even in train mode.
    pub fn set_trunk_frozen(&mut self, frozen: bool) {
        self.trunk_frozen = frozen;
        for (i, p) in self.store.iter_mut().enumerate() {
            if i < self.trunk_params {
                p.trainable = !frozen;
            }
        }
    }

    /// Makes head `t` the only trainable head; the trunk stays trainable
    /// unless frozen.
    pub fn focus_head(&mut self, t: usize) {
        let keep: Vec<usize> = self
            .heads
            .get(t)
            .map(|h| vec![h.weight.0, h.bias.0])
            .unwrap_or_default();
        let frozen = self.trunk_frozen;
        for (i, p) in self.store.iter_mut().enumerate() {
            p.trainable = if i < self.trunk_params {
                !frozen
            } else {
                keep.contains(&i)
            };
        }
    }

    fn feature_width(&self) -> usize {
        self.plan.feature_width()
    }

    fn check_classes(new: &[usize], existing: &[usize]) -> Result<()> {
        let mut seen: BTreeSet<usize> = existing.iter().copied().collect();
        for &c in new {
            if !seen.insert(c) {
                return Err(Error::DuplicateClass(c));
            }
        }
        Ok(())
    }

    /// Adds an independent head for a new task; returns its task index.
    pub fn attach_head<R: Rng + ?Sized>(&mut self, classes: &[usize], rng: &mut R) -> Result<usize> {
        if self.layout != HeadLayout::PerTask {
            return Err(Error::UnknownHead("attach_head needs a per-task layout".into()));
        }
        Self::check_classes(classes, &[])?;
        let f = self.feature_width();
        let t = self.heads.len();
        let weight = self.store.add(
            format!("head{t}.weight"),
            ParamRole::LinearWeight,
            uniform_fan_in(rng, &[f, classes.len()], f),
        );
        let bias = self.store.add(format!("head{t}.bias"), ParamRole::Bias, Tensor::zeros(&[classes.len()]));
        self.heads.push(Head {
            classes: classes.to_vec(),
            weight,
            bias,
            reads: AtomicU64::new(0),
        });
        Ok(t)
    }

    /// Widens the unified head by `new_classes`; existing columns are copied
    /// unchanged.
    pub fn grow_head<R: Rng + ?Sized>(&mut self, new_classes: &[usize], rng: &mut R) -> Result<()> {
        if self.layout != HeadLayout::Unified {
            return Err(Error::UnknownHead("grow_head needs a unified layout".into()));
        }
        let f = self.feature_width();
        if self.heads.is_empty() {
            Self::check_classes(new_classes, &[])?;
            let weight = self.store.add(
                "head.weight",
                ParamRole::LinearWeight,
                uniform_fan_in(rng, &[f, new_classes.len()], f),
            );
            let bias = self.store.add("head.bias", ParamRole::Bias, Tensor::zeros(&[new_classes.len()]));
            self.heads.push(Head {
                classes: new_classes.to_vec(),
                weight,
                bias,
                reads: AtomicU64::new(0),
            });
            return Ok(());
        }
        Self::check_classes(new_classes, &self.heads[0].classes)?;
        let head = &self.heads[0];
        let (old, add) = (head.classes.len(), new_classes.len());
        let fresh: Tensor<T> = uniform_fan_in(rng, &[f, add], f);
        let w_old = self.store.get(head.weight).value.data();
        let mut w = Vec::with_capacity(f * (old + add));
        for r in 0..f {
            w.extend_from_slice(&w_old[r * old..(r + 1) * old]);
            w.extend_from_slice(&fresh.data()[r * add..(r + 1) * add]);
        }
        let mut b = self.store.get(head.bias).value.data().to_vec();
        b.resize(old + add, T::zero());
        let (wid, bid) = (head.weight, head.bias);
        self.store.replace(wid, Tensor::new(vec![f, old + add], w)?);
        self.store.replace(bid, Tensor::new(vec![old + add], b)?);
        self.heads[0].classes.extend_from_slice(new_classes);
        Ok(())
    }

    pub fn head(&self, sel: HeadSelector) -> Result<&Head> {
        match (self.layout, sel) {
            (HeadLayout::PerTask, HeadSelector::Task(t)) => self
                .heads
                .get(t)
                .ok_or_else(|| Error::UnknownHead(format!("task {t} (have {})", self.heads.len()))),
            (HeadLayout::Unified, HeadSelector::Unified) => self
                .heads
                .first()
                .ok_or_else(|| Error::UnknownHead("unified head not created yet".into())),
            (_, sel) => Err(Error::UnknownHead(format!("{sel:?} for {:?} layout", self.layout))),
        }
    }

    /// How many forward passes have read head `i` since the last reset.
    pub fn head_reads(&self, i: usize) -> u64 {
        self.heads[i].reads.load(Ordering::Relaxed)
    }

    pub fn reset_head_reads(&self) {
        for h in &self.heads {
            h.reads.store(0, Ordering::Relaxed);
        }
    }

    fn check_input(&self, tape: &Tape<T>, x: Var) -> Result<()> {
        let shape = tape.value(x).shape();
        let want = self.plan.input.dims();
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::ShapeMismatch {
                op: "network input",
                lhs: shape.to_vec(),
                rhs: [&[0usize][..], &want[..]].concat(),
            });
        }
        Ok(())
    }

    fn conv_bn(
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        stats: &mut StatsAccess<'_, T>,
        cb: &ConvBn,
        x: Var,
    ) -> Result<Var> {
        let k = tape.param(store, cb.kernel);
        let b = tape.param(store, cb.bias);
        let g = tape.param(store, cb.gamma);
        let beta = tape.param(store, cb.beta);
        let y = tape.conv2d(x, k, Some(b), cb.stride, cb.pad)?;
        let mode = match stats {
            StatsAccess::Train(s) => BnMode::Train(&mut s[cb.stats]),
            StatsAccess::Eval(s) => BnMode::Eval(&s[cb.stats]),
        };
        tape.batch_norm(y, g, beta, mode)
    }

    fn trunk(
        blocks: &[Block],
        store: &ParamStore<T>,
        mut stats: StatsAccess<'_, T>,
        tape: &mut Tape<T>,
        mut x: Var,
    ) -> Result<Var> {
        for block in blocks {
            x = match block {
                Block::ConvBnRelu(cb) => {
                    let y = Self::conv_bn(tape, store, &mut stats, cb, x)?;
                    tape.relu(y)
                }
                Block::Pool(kind) => tape.pool2d(x, *kind)?,
                Block::Unit {
                    conv,
                    skip,
                    projection,
                } => {
                    let mut y = Self::conv_bn(tape, store, &mut stats, conv, x)?;
                    if *skip {
                        let shortcut = match projection {
                            Some((k, b)) => {
                                let k = tape.param(store, *k);
                                let b = tape.param(store, *b);
                                tape.conv2d(x, k, Some(b), 1, 0)?
                            }
                            None => x,
                        };
                        y = tape.add(y, shortcut)?;
                    }
                    tape.relu(y)
                }
                Block::Gap => tape.global_avg_pool(x)?,
                Block::Flatten => tape.flatten(x)?,
            };
        }
        Ok(x)
    }

    /// Pre-classifier features (after GAP or flatten). Train mode uses batch
    /// statistics and updates the running ones unless the trunk is frozen.
    pub fn forward_features(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        self.check_input(tape, x)?;
        let stats = if mode == Mode::Train && !self.trunk_frozen {
            StatsAccess::Train(&mut self.stats)
        } else {
            StatsAccess::Eval(&self.stats)
        };
        Self::trunk(&self.blocks, &self.store, stats, tape, x)
    }

    /// Eval-mode features through a shared reference.
    pub fn features_eval(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.check_input(tape, x)?;
        Self::trunk(&self.blocks, &self.store, StatsAccess::Eval(&self.stats), tape, x)
    }

    /// Applies a head to features produced by this network.
    pub fn head_logits(&self, tape: &mut Tape<T>, features: Var, sel: HeadSelector) -> Result<Var> {
        let head = self.head(sel)?;
        head.reads.fetch_add(1, Ordering::Relaxed);
        let w = tape.param(&self.store, head.weight);
        let b = tape.param(&self.store, head.bias);
        tape.linear(features, w, b)
    }

    pub fn forward_logits(
        &mut self,
        tape: &mut Tape<T>,
        x: Var,
        sel: HeadSelector,
        mode: Mode,
    ) -> Result<Var> {
        self.head(sel)?;
        let f = self.forward_features(tape, x, mode)?;
        self.head_logits(tape, f, sel)
    }

    /// Eval-mode features of a batch, without recording for backward.
    pub fn features(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let x = tape.constant(batch.clone());
        let f = self.features_eval(&mut tape, x)?;
        Ok(tape.value(f).clone())
    }

    /// Eval-mode output of the last spatial layer, before pooling or
    /// flattening into the feature vector.
    pub fn feature_map(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let x = tape.constant(batch.clone());
        self.check_input(&tape, x)?;
        let spatial = self
            .blocks
            .iter()
            .position(|b| matches!(b, Block::Gap | Block::Flatten))
            .unwrap_or(self.blocks.len());
        let y = Self::trunk(&self.blocks[..spatial], &self.store, StatsAccess::Eval(&self.stats), &mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    /// Eval-mode logits of a batch for one head.
    pub fn logits(&self, batch: &Tensor<T>, sel: HeadSelector) -> Result<Tensor<T>> {
        self.head(sel)?;
        let mut tape = Tape::inference();
        let x = tape.constant(batch.clone());
        let f = self.features_eval(&mut tape, x)?;
        let l = self.head_logits(&mut tape, f, sel)?;
        Ok(tape.value(l).clone())
    }

    /// Rebuilds heads in their original order; used by checkpoint loading.
    pub(crate) fn restore_heads<R: Rng + ?Sized>(&mut self, heads: &[Vec<usize>], rng: &mut R) -> Result<()> {
        for classes in heads {
            match self.layout {
                HeadLayout::PerTask => {
                    self.attach_head(classes, rng)?;
                }
                HeadLayout::Unified => self.grow_head(classes, rng)?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{decode, ComponentConfig, InputShape};
    use crate::genotype::Genotype;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plan(cfg: ComponentConfig) -> ArchitecturePlan {
        let g = Genotype::new(3, 4, [0, 9, 9, 9, 9], [1, 9, 9, 9, 9]);
        decode(&g, &cfg, InputShape::square(3, 8), 6).unwrap()
    }

    fn batch(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * 3 * 64).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::new(vec![n, 3, 8, 8], data).unwrap()
    }

    #[test]
    fn count_matches_plan() {
        for cfg in [ComponentConfig::task_il(), ComponentConfig::class_il()] {
            let p = plan(cfg);
            let net = Network::<f32>::instantiate(&p, &mut ChaCha8Rng::seed_from_u64(1));
            assert_eq!(net.param_count(), p.param_count());
        }
    }

    #[test]
    fn same_seed_same_values() {
        let p = plan(ComponentConfig::class_il());
        let a = Network::<f32>::instantiate(&p, &mut ChaCha8Rng::seed_from_u64(9));
        let b = Network::<f32>::instantiate(&p, &mut ChaCha8Rng::seed_from_u64(9));
        for (x, y) in a.store().iter().zip(b.store().iter()) {
            assert_eq!(x.value, y.value);
        }
    }

    #[test]
    fn zero_batch_is_finite() {
        let p = plan(ComponentConfig::class_il());
        let net = Network::<f32>::instantiate(&p, &mut ChaCha8Rng::seed_from_u64(2));
        let out = net.logits(&Tensor::zeros(&[2, 3, 8, 8]), HeadSelector::Unified).unwrap();
        assert!(out.is_finite());
        assert_eq!(out.shape(), [2, 6]);
    }

    #[test]
    fn feature_shapes_follow_preset() {
        let p = plan(ComponentConfig::class_il());
        let net = Network::<f64>::instantiate(&p, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(net.features(&batch(3, 0)).unwrap().shape(), [3, 8]);
        let p = plan(ComponentConfig::task_il());
        let net = Network::<f64>::instantiate(&p, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(net.features(&batch(3, 0)).unwrap().shape(), [3, 8 * 4 * 4]);
    }

    #[test]
    fn unified_head_growth_keeps_old_logits() {
        let p = plan(ComponentConfig::class_il());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Network::<f64>::instantiate_incremental(&p, HeadLayout::Unified, &mut rng);
        net.grow_head(&[0, 1, 2, 3, 4], &mut rng).unwrap();
        let x = batch(2, 1);
        let before = net.logits(&x, HeadSelector::Unified).unwrap();
        net.grow_head(&[5, 6, 7, 8, 9], &mut rng).unwrap();
        net.grow_head(&[10, 11, 12, 13, 14], &mut rng).unwrap();
        let after = net.logits(&x, HeadSelector::Unified).unwrap();
        assert_eq!(after.shape(), [2, 15]);
        for r in 0..2 {
            assert_eq!(&after.data()[r * 15..r * 15 + 5], &before.data()[r * 5..r * 5 + 5]);
        }
        assert!(matches!(net.grow_head(&[3], &mut rng), Err(Error::DuplicateClass(3))));
        assert!(matches!(net.grow_head(&[20, 20], &mut rng), Err(Error::DuplicateClass(20))));
    }

    #[test]
    fn task_heads_are_independent() {
        let p = plan(ComponentConfig::task_il());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Network::<f64>::instantiate_incremental(&p, HeadLayout::PerTask, &mut rng);
        net.attach_head(&[0, 1, 2, 3, 4], &mut rng).unwrap();
        net.attach_head(&[5, 6, 7, 8, 9], &mut rng).unwrap();
        let x = batch(1, 2);
        let a = net.logits(&x, HeadSelector::Task(0)).unwrap();
        let b = net.logits(&x, HeadSelector::Task(1)).unwrap();
        assert_eq!(a.shape(), [1, 5]);
        assert_ne!(a, b);
        assert!(matches!(net.logits(&x, HeadSelector::Task(2)), Err(Error::UnknownHead(_))));
        assert!(net.logits(&x, HeadSelector::Unified).is_err());
        assert_eq!(net.head_reads(0), 1);
        assert_eq!(net.head_reads(1), 1);
    }

    #[test]
    fn zero_gamma_unit_is_identity() {
        // single unit without doubling or pooling
        let g = Genotype::new(1, 4, [9; 5], [9; 5]);
        let p = decode(&g, &ComponentConfig::custom(DownsampleKind::MaxPool, true, true), InputShape::square(3, 8), 2).unwrap();
        let mut net = Network::<f64>::instantiate(&p, &mut ChaCha8Rng::seed_from_u64(3));
        let x = batch(2, 7);
        let unit_ids: Vec<ParamId> = (0..net.store().len())
            .map(ParamId)
            .filter(|id| net.store().get(*id).name.starts_with("unit1"))
            .collect();
        for id in unit_ids {
            let p = net.store_mut().get_mut(id);
            if p.role != ParamRole::BnBeta {
                p.value.fill(0.0);
            }
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let stem_only = Network::<f64>::trunk(&net.blocks[..1], &net.store, StatsAccess::Eval(&net.stats), &mut tape, xv).unwrap();
        let with_unit = Network::<f64>::trunk(&net.blocks[..2], &net.store, StatsAccess::Eval(&net.stats), &mut tape, xv).unwrap();
        assert_eq!(tape.value(stem_only), tape.value(with_unit));
    }

    #[test]
    fn strided_conv_halves_exactly() {
        let g = Genotype::new(2, 4, [0, 1, 9, 9, 9], [9; 5]);
        let cfg = ComponentConfig::custom(DownsampleKind::StridedConv, true, false);
        let p = decode(&g, &cfg, InputShape::square(3, 8), 2).unwrap();
        let net = Network::<f64>::instantiate(&p, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(net.features(&batch(2, 0)).unwrap().shape(), [2, 4 * 2 * 2]);
        assert_eq!(net.param_count(), p.param_count());
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let p = plan(ComponentConfig::class_il());
        let net = Network::<f32>::instantiate(&p, &mut ChaCha8Rng::seed_from_u64(2));
        assert!(matches!(
            net.features(&Tensor::zeros(&[1, 3, 16, 16])),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
