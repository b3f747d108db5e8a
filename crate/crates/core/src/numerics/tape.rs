//! Define-by-run reverse-mode differentiation.
//!
//! Every op executes eagerly and appends a node holding its value and whatever
//! the backward pass needs. Nodes only reference earlier nodes, so the tape is
//! always in topological order and backward is a single reverse sweep.

use crate::error::{Error, Result};
use crate::numerics::ops::{self, BnContext, BnStats, PoolKind};
use crate::numerics::param::{ParamId, ParamStore};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Constant,
    Param(ParamId),
    Conv {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        ctx: BnContext<T>,
    },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Pool {
        input: Var,
        kind: PoolKind,
        argmax: Vec<usize>,
    },
    Gap(Var),
    Reshape(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    CrossEntropy {
        logits: Var,
        probs: Tensor<T>,
        labels: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Batch-norm statistics access for a single forward call.
pub enum BnMode<'a, T> {
    Train(&'a mut BnStats<T>),
    Eval(&'a BnStats<T>),
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape for inference only: ops drop their backward state.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let op = if self.recording { op } else { Op::Constant };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Signs of every ReLU input and the winners of every max-pool window.
    /// Two evaluations with equal patterns lie on the same smooth piece of
    /// the recorded function.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(input) => out.extend(
                    self.value(*input)
                        .data()
                        .iter()
                        .map(|&v| usize::from(v > T::zero())),
                ),
                Op::Pool { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    /// Copies `v` as a constant; nothing upstream of it receives gradient
    /// through the copy.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let out = ops::conv2d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        Ok(self.push(
            out,
            Op::Conv {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
        ))
    }

    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
    ) -> Result<Var> {
        let (x, g, b) = (self.value(input), self.value(gamma), self.value(beta));
        let (out, ctx) = match mode {
            BnMode::Train(stats) => ops::batch_norm_train(x, g, b, stats)?,
            BnMode::Eval(stats) => ops::batch_norm_eval(x, g, b, stats)?,
        };
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                ctx,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(input))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let mut out = x.clone();
        out.add_assign(y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(input))
    }

    pub fn pool2d(&mut self, input: Var, kind: PoolKind) -> Result<Var> {
        let (out, argmax) = ops::pool2d(self.value(input), kind)?;
        Ok(self.push(
            out,
            Op::Pool {
                input,
                kind,
                argmax,
            },
        ))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let out = ops::global_avg_pool(self.value(input))?;
        Ok(self.push(out, Op::Gap(input)))
    }

    /// `[N, ...] -> [N, rest]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let n = x.shape()[0];
        let out = x.clone().reshape(&[n, x.numel() / n])?;
        Ok(self.push(out, Op::Reshape(input)))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::linear(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Mean masked cross-entropy; returns the scalar loss node and the
    /// softmax probabilities.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        active: Option<&[usize]>,
    ) -> Result<(Var, Tensor<T>)> {
        let (loss, probs) = ops::softmax_cross_entropy(self.value(logits), labels, active)?;
        let var = self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs: probs.clone(),
                labels: labels.to_vec(),
            },
        );
        Ok((var, probs))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.recording {
            return Err(Error::NotRecorded);
        }
        let shape = self.value(loss).shape();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(shape, T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Param(_) | Op::Constant) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut acc = |v: Var, d: Tensor<T>| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot => *slot = Some(d),
            };
            match &node.op {
                Op::Constant | Op::Param(_) => unreachable!("leaves are skipped"),
                Op::Conv {
                    input,
                    kernel,
                    bias,
                    stride,
                    pad,
                } => {
                    let need_dx = !matches!(self.nodes[input.0].op, Op::Constant);
                    let (dx, dk, db) = ops::conv2d_backward(
                        &g,
                        self.value(*input),
                        self.value(*kernel),
                        *stride,
                        *pad,
                        need_dx,
                    )?;
                    if let Some(dx) = dx {
                        acc(*input, dx);
                    }
                    acc(*kernel, dk);
                    if let Some(b) = bias {
                        acc(*b, db);
                    }
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    ctx,
                } => {
                    let (dx, dg, db) = ops::batch_norm_backward(&g, self.value(*gamma), ctx)?;
                    acc(*input, dx);
                    acc(*gamma, dg);
                    acc(*beta, db);
                }
                Op::Relu(input) => {
                    let x = self.value(*input);
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                        .collect();
                    acc(*input, Tensor::new(x.shape().to_vec(), data)?);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let da = g.data().iter().zip(y.data()).map(|(&d, &v)| d * v).collect();
                    let db = g.data().iter().zip(x.data()).map(|(&d, &v)| d * v).collect();
                    acc(*a, Tensor::new(x.shape().to_vec(), da)?);
                    acc(*b, Tensor::new(y.shape().to_vec(), db)?);
                }
                Op::Sum(input) => {
                    let x = self.value(*input);
                    acc(*input, Tensor::full(x.shape(), g.data()[0]));
                }
                Op::Pool {
                    input,
                    kind,
                    argmax,
                } => {
                    let dx =
                        ops::pool2d_backward(&g, self.value(*input).shape(), *kind, argmax)?;
                    acc(*input, dx);
                }
                Op::Gap(input) => {
                    let dx = ops::global_avg_pool_backward(&g, self.value(*input).shape())?;
                    acc(*input, dx);
                }
                Op::Reshape(input) => {
                    acc(*input, g.reshape(self.value(*input).shape())?);
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let (dx, dw, db) =
                        ops::linear_backward(&g, self.value(*input), self.value(*weight))?;
                    acc(*input, dx);
                    acc(*weight, dw);
                    acc(*bias, db);
                }
                Op::CrossEntropy {
                    logits,
                    probs,
                    labels,
                } => {
                    acc(
                        *logits,
                        ops::softmax_cross_entropy_backward(probs, labels, g.data()[0]),
                    );
                }
            }
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Result of a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a leaf (constant or parameter), `None` when
    /// unreachable. Intermediate gradients are released during the sweep.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Adds every parameter gradient into the store's accumulators.
    pub fn accumulate(&self, store: &mut ParamStore<T>) {
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}

/// Runs backward from `loss` and adds the parameter gradients into `store`.
pub fn backward_into<T: Scalar>(tape: &Tape<T>, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
    tape.backward(loss)?.accumulate(store);
    Ok(())
}
