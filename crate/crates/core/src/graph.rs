//! Dynamic reverse-mode autodiff over [`Tensor`] values.
//!
//! Every primitive appends one node holding its output and the context its
//! backward rule needs. [`Graph::backward`] walks the nodes in reverse
//! execution order exactly once.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels;
use crate::network::projection::ProjectionMap;
use crate::tensor::{Axis, Scalar, Tensor};
use crate::training::loss;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Kind of primitive recorded in a node, used for reporting and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv1d,
    Pointwise,
    Softmax,
    Add,
    Mul,
    Relu,
    MulBroadcast,
    Concat,
    Slice,
    MaxPool,
    Conv3d,
    Project,
    Sum,
    CrossEntropy,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv1d => "conv1d_axis",
            OpKind::Pointwise => "pointwise_conv",
            OpKind::Softmax => "softmax_over_channels",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Relu => "relu",
            OpKind::MulBroadcast => "mul_channel_broadcast",
            OpKind::Concat => "concat_channels",
            OpKind::Slice => "slice_channels",
            OpKind::MaxPool => "max_pool2",
            OpKind::Conv3d => "conv3d_strided",
            OpKind::Project => "project_2d_to_3d",
            OpKind::Sum => "sum",
            OpKind::CrossEntropy => "weighted_cross_entropy",
        }
    }

    pub fn parse(name: &str) -> Option<OpKind> {
        use OpKind::*;
        [
            Leaf, Conv1d, Pointwise, Softmax, Add, Mul, Relu, MulBroadcast, Concat, Slice, MaxPool,
            Conv3d, Project, Sum, CrossEntropy,
        ]
        .into_iter()
        .find(|k| k.name() == name)
    }
}

enum Op<T> {
    Leaf,
    Conv1d { input: Var, weight: Var, bias: Var, axis: Axis },
    Pointwise { input: Var, weight: Var, bias: Var },
    Softmax { input: Var },
    Add { lhs: Var, rhs: Var },
    Mul { lhs: Var, rhs: Var },
    Relu { input: Var },
    MulBroadcast { input: Var, factor: Var },
    Concat { inputs: Vec<Var> },
    Slice { input: Var, start: usize },
    MaxPool { input: Var, argmax: Vec<usize> },
    Conv3d { input: Var, weight: Var, bias: Var, stride: usize },
    Project { input: Var, maps: Arc<Vec<ProjectionMap>> },
    Sum { input: Var },
    CrossEntropy { logits: Var, probs: Tensor<T>, labels: Arc<Vec<u32>>, weights: Arc<Vec<T>> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv1d { .. } => OpKind::Conv1d,
            Op::Pointwise { .. } => OpKind::Pointwise,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Add { .. } => OpKind::Add,
            Op::Mul { .. } => OpKind::Mul,
            Op::Relu { .. } => OpKind::Relu,
            Op::MulBroadcast { .. } => OpKind::MulBroadcast,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::MaxPool { .. } => OpKind::MaxPool,
            Op::Conv3d { .. } => OpKind::Conv3d,
            Op::Project { .. } => OpKind::Project,
            Op::Sum { .. } => OpKind::Sum,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of executed primitives.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    fault: Option<OpKind>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            fault: None,
        }
    }

    /// Test hook: scales every input gradient produced by `kind` by 1.5.
    pub fn inject_backward_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient during backward.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn conv1d_axis(&mut self, input: Var, weight: Var, bias: Var, axis: Axis) -> Result<Var> {
        let out = kernels::conv1d_axis(self.value(input), self.value(weight), self.value(bias), axis)?;
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(out, Op::Conv1d { input, weight, bias, axis }, rg))
    }

    pub fn pointwise_conv(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = kernels::pointwise_conv(self.value(input), self.value(weight), self.value(bias))?;
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(out, Op::Pointwise { input, weight, bias }, rg))
    }

    pub fn softmax_channels(&mut self, input: Var) -> Result<Var> {
        let out = kernels::softmax_channels(self.value(input))?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::Softmax { input }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.same_shape("add", lhs, rhs)?;
        let mut out = self.value(lhs).clone();
        out.add_assign(self.value(rhs));
        let rg = self.rg(&[lhs, rhs]);
        Ok(self.push(out, Op::Add { lhs, rhs }, rg))
    }

    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.same_shape("mul", lhs, rhs)?;
        let mut out = self.value(lhs).clone();
        for (a, &b) in out.data_mut().iter_mut().zip(self.value(rhs).data()) {
            *a *= b;
        }
        let rg = self.rg(&[lhs, rhs]);
        Ok(self.push(out, Op::Mul { lhs, rhs }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| v.max(T::zero()));
        let rg = self.rg(&[input]);
        self.push(out, Op::Relu { input }, rg)
    }

    /// Multiplies every channel of `input` by the single-channel `factor`.
    pub fn mul_channel_broadcast(&mut self, input: Var, factor: Var) -> Result<Var> {
        let out = kernels::mul_channel_broadcast(self.value(input), self.value(factor))?;
        let rg = self.rg(&[input, factor]);
        Ok(self.push(out, Op::MulBroadcast { input, factor }, rg))
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = kernels::concat_channels(&values)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let out = kernels::slice_channels(self.value(input), start, len)?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::Slice { input, start }, rg))
    }

    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = kernels::max_pool2(self.value(input))?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::MaxPool { input, argmax }, rg))
    }

    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let out = kernels::conv3d(self.value(input), self.value(weight), self.value(bias), stride)?;
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(out, Op::Conv3d { input, weight, bias, stride }, rg))
    }

    /// Scatters 2D feature maps `[B, C, H, W]` into voxel volumes, one map per batch item.
    pub fn project(&mut self, input: Var, maps: Arc<Vec<ProjectionMap>>) -> Result<Var> {
        let out = crate::network::projection::scatter(self.value(input), &maps)?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::Project { input, maps }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        let rg = self.rg(&[input]);
        self.push(out, Op::Sum { input }, rg)
    }

    /// Weighted voxel-wise softmax cross-entropy, normalised by the weight sum.
    /// Labels are 1-based class indices, one per `(batch, voxel)`.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: Var,
        labels: Arc<Vec<u32>>,
        weights: Arc<Vec<T>>,
    ) -> Result<Var> {
        let (value, probs) = loss::cross_entropy_forward(self.value(logits), &labels, &weights)?;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(value),
            Op::CrossEntropy {
                logits,
                probs,
                labels,
                weights,
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a single-element `target`.
    pub fn backward(&mut self, target: Var) -> Result<()> {
        if self.value(target).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("target must be a scalar, got {:?}", self.value(target).shape()),
            ));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[target.0] = Some(Tensor::full(self.value(target).shape().to_vec(), T::one()));

        for id in (0..=target.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else { continue };
            let node = &self.nodes[id];
            let mut contributions = self.backward_node(node, &g);
            if self.fault == Some(node.op.kind()) {
                let scale = T::of(1.5);
                for (_, t) in contributions.iter_mut() {
                    for v in t.data_mut() {
                        *v *= scale;
                    }
                }
            }
            self.grads[id] = Some(g);
            for (var, contribution) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut self.grads[var.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::Conv1d {
                input,
                weight,
                bias,
                axis,
            } => {
                let grads = kernels::conv1d_axis_backward(
                    self.value(input),
                    self.value(weight),
                    g,
                    axis,
                    self.needs(input),
                );
                if let Some(gi) = grads.input {
                    out.push((input, gi));
                }
                out.push((weight, grads.weight));
                out.push((bias, grads.bias));
            }
            &Op::Pointwise { input, weight, bias } => {
                let grads = kernels::pointwise_conv_backward(
                    self.value(input),
                    self.value(weight),
                    g,
                    self.needs(input),
                );
                if let Some(gi) = grads.input {
                    out.push((input, gi));
                }
                out.push((weight, grads.weight));
                out.push((bias, grads.bias));
            }
            &Op::Softmax { input } => {
                out.push((input, kernels::softmax_channels_backward(&node.value, g)));
            }
            &Op::Add { lhs, rhs } => {
                out.push((lhs, g.clone()));
                out.push((rhs, g.clone()));
            }
            &Op::Mul { lhs, rhs } => {
                let mut gl = g.clone();
                for (a, &b) in gl.data_mut().iter_mut().zip(self.value(rhs).data()) {
                    *a *= b;
                }
                let mut gr = g.clone();
                for (a, &b) in gr.data_mut().iter_mut().zip(self.value(lhs).data()) {
                    *a *= b;
                }
                out.push((lhs, gl));
                out.push((rhs, gr));
            }
            &Op::Relu { input } => {
                let mut gi = g.clone();
                for (a, &x) in gi.data_mut().iter_mut().zip(self.value(input).data()) {
                    if x <= T::zero() {
                        *a = T::zero();
                    }
                }
                out.push((input, gi));
            }
            &Op::MulBroadcast { input, factor } => {
                let (gx, gf) =
                    kernels::mul_channel_broadcast_backward(self.value(input), self.value(factor), g);
                out.push((input, gx));
                out.push((factor, gf));
            }
            Op::Concat { inputs } => {
                let mut start = 0;
                for &v in inputs {
                    let c = self.value(v).channels();
                    let part = kernels::slice_channels(g, start, c).expect("concat slice");
                    out.push((v, part));
                    start += c;
                }
            }
            &Op::Slice { input, start } => {
                out.push((
                    input,
                    kernels::unslice_channels(g, self.value(input).shape(), start),
                ));
            }
            Op::MaxPool { input, argmax } => {
                out.push((
                    *input,
                    kernels::max_pool2_backward(self.value(*input).shape(), argmax, g),
                ));
            }
            &Op::Conv3d {
                input,
                weight,
                bias,
                stride,
            } => {
                let grads = kernels::conv3d_backward(
                    self.value(input),
                    self.value(weight),
                    g,
                    stride,
                    self.needs(input),
                );
                if let Some(gi) = grads.input {
                    out.push((input, gi));
                }
                out.push((weight, grads.weight));
                out.push((bias, grads.bias));
            }
            Op::Project { input, maps } => {
                out.push((
                    *input,
                    crate::network::projection::scatter_backward(self.value(*input).shape(), maps, g),
                ));
            }
            &Op::Sum { input } => {
                out.push((
                    input,
                    Tensor::full(self.value(input).shape().to_vec(), g.item()),
                ));
            }
            Op::CrossEntropy {
                logits,
                probs,
                labels,
                weights,
            } => {
                out.push((
                    *logits,
                    loss::cross_entropy_backward(probs, labels, weights, g.item()),
                ));
            }
        }
        out
    }
}
