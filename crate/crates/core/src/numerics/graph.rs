//! Reverse-mode tape.
//!
//! A [`Graph`] records every operation applied to its variables. Leaves are
//! either owned inputs or borrowed parameter tensors, so binding a model to a
//! fresh graph per sample costs no copies. Nodes are appended in evaluation
//! order, which makes reverse index order a valid topological order for the
//! backward sweep.

use std::borrow::Cow;
use std::sync::atomic::{AtomicU32, Ordering};

use super::kernels::{self, ConvGeometry};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_GRAPH_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node of one particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u32,
    index: u32,
}

/// Operation kinds with their attributes.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// `[x, W]` or `[x, W, b]`; `x` is `in` or `n × in`, `W` is `out × in`.
    Linear,
    /// `[x, W]` or `[x, W, b]`; `x` is `C × H × W`, `W` is `O × C × kh × kw`.
    Conv2d {
        stride: (usize, usize),
        padding: (usize, usize),
    },
    Relu,
    /// Mean over every axis but the first.
    GlobalAvgPool,
    /// Normalizes along the last axis, with a norm floor.
    L2Normalize { eps: f64 },
    /// Two 2-D operands.
    MatMul,
    Add,
    Mul,
    Scale(f64),
    Reshape(Vec<usize>),
    Sum,
    /// Contrastive loss over a `2N × P` matrix with consecutive positive pairs.
    InfoNce { tau: f64 },
    /// Mean softmax cross-entropy of `n × K` logits.
    SoftmaxCrossEntropy { labels: Vec<usize> },
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Linear => "linear",
            OpKind::Conv2d { .. } => "conv2d",
            OpKind::Relu => "relu",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::L2Normalize { .. } => "l2_normalize",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::Reshape(_) => "reshape",
            OpKind::Sum => "sum",
            OpKind::InfoNce { .. } => "info_nce",
            OpKind::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

struct Node<'a, S: Scalar> {
    value: Cow<'a, Tensor<S>>,
    op: Option<OpKind>,
    inputs: Vec<Var>,
    needs_grad: bool,
    /// Values saved by the forward pass (softmax gradients, norms).
    saved: Vec<S>,
}

pub struct Graph<'a, S: Scalar> {
    id: u32,
    nodes: Vec<Node<'a, S>>,
}

/// Gradients of one backward sweep, indexed by [`Var`].
pub struct Gradients<S> {
    graph: u32,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&[S]> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.index as usize)?.as_deref()
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<S>> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get_mut(v.index as usize)?.take()
    }
}

fn add_into<S: Scalar>(slot: &mut Option<Vec<S>>, g: Vec<S>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        None => *slot = Some(g),
    }
}

impl<S: Scalar> Default for Graph<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, S: Scalar> Graph<'a, S> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<S>>, op: Option<OpKind>, inputs: Vec<Var>, needs_grad: bool, saved: Vec<S>) -> Var {
        let index = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op,
            inputs,
            needs_grad,
            saved,
        });
        Var {
            graph: self.id,
            index,
        }
    }

    /// Owned leaf; differentiable iff the tensor requires grad.
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        let needs = t.requires_grad();
        self.push(Cow::Owned(t), None, Vec::new(), needs, Vec::new())
    }

    /// Borrowed leaf, typically a model parameter.
    pub fn param(&mut self, t: &'a Tensor<S>) -> Var {
        let needs = t.requires_grad();
        self.push(Cow::Borrowed(t), None, Vec::new(), needs, Vec::new())
    }

    fn node(&self, v: Var) -> Result<&Node<'a, S>> {
        if v.graph != self.id {
            return Err(Error::BrokenTape(format!(
                "variable belongs to graph {}, not {}",
                v.graph, self.id
            )));
        }
        self.nodes
            .get(v.index as usize)
            .ok_or_else(|| Error::BrokenTape(format!("variable {} out of range", v.index)))
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<S>> {
        Ok(self.node(v)?.value.as_ref())
    }

    pub fn needs_grad(&self, v: Var) -> Result<bool> {
        Ok(self.node(v)?.needs_grad)
    }

    /// Applies `kind` to `inputs` and records the result on the tape.
    pub fn forward_op(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let op = kind.name();
        let vals: Vec<&Tensor<S>> = inputs
            .iter()
            .map(|&v| self.value(v))
            .collect::<Result<_>>()?;
        let arity = |lo: usize, hi: usize| -> Result<()> {
            if vals.len() < lo || vals.len() > hi {
                return Err(Error::shape(op, format!("expected {lo}..={hi} inputs, got {}", vals.len())));
            }
            Ok(())
        };
        let mut saved = Vec::new();
        let (shape, data) = match &kind {
            OpKind::Linear => {
                arity(2, 3)?;
                let (n, fan_in) = linear_dims(vals[0].shape()).ok_or_else(|| {
                    Error::shape(op, format!("input {:?} is not 1-D or 2-D", vals[0].shape()))
                })?;
                let w = vals[1].shape();
                if w.len() != 2 || w[1] != fan_in {
                    return Err(Error::shape(op, format!("input {:?} vs weight {w:?}", vals[0].shape())));
                }
                let fan_out = w[0];
                if let Some(b) = vals.get(2) {
                    if b.shape() != [fan_out] {
                        return Err(Error::shape(op, format!("bias {:?} vs weight {w:?}", b.shape())));
                    }
                }
                let y = kernels::linear_forward(
                    vals[0].data(),
                    n,
                    fan_in,
                    vals[1].data(),
                    fan_out,
                    vals.get(2).map(|b| b.data()),
                );
                let shape = if vals[0].shape().len() == 1 {
                    vec![fan_out]
                } else {
                    vec![n, fan_out]
                };
                (shape, y)
            }
            OpKind::Conv2d { stride, padding } => {
                arity(2, 3)?;
                let g = conv_geometry(vals[0].shape(), vals[1].shape(), *stride, *padding)?;
                if let Some(b) = vals.get(2) {
                    if b.shape() != [g.out_channels] {
                        return Err(Error::shape(op, format!("bias {:?} vs {} output channels", b.shape(), g.out_channels)));
                    }
                }
                let (ho, wo) = g.output_hw().expect("checked by conv_geometry");
                let y = kernels::conv2d_forward(vals[0].data(), vals[1].data(), vals.get(2).map(|b| b.data()), &g);
                (vec![g.out_channels, ho, wo], y)
            }
            OpKind::Relu => {
                arity(1, 1)?;
                let y = vals[0].data().iter().map(|&v| v.max(S::zero())).collect();
                (vals[0].shape().to_vec(), y)
            }
            OpKind::GlobalAvgPool => {
                arity(1, 1)?;
                let shape = vals[0].shape();
                if shape.len() < 2 {
                    return Err(Error::shape(op, format!("need at least 2 axes, got {shape:?}")));
                }
                let inner = numel(&shape[1..]);
                let inv = S::one() / S::from_usize_lossy(inner);
                let y = vals[0]
                    .data()
                    .chunks_exact(inner)
                    .map(|c| c.iter().copied().sum::<S>() * inv)
                    .collect();
                (vec![shape[0]], y)
            }
            OpKind::L2Normalize { eps } => {
                arity(1, 1)?;
                let shape = vals[0].shape();
                let d = *shape.last().expect("tensor has at least one axis");
                let (y, norms) = kernels::l2_normalize_rows(vals[0].data(), d, S::from_f64_lossy(*eps));
                saved = norms;
                (shape.to_vec(), y)
            }
            OpKind::MatMul => {
                arity(2, 2)?;
                let (a, b) = (vals[0].shape(), vals[1].shape());
                if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
                    return Err(Error::shape(op, format!("{a:?} x {b:?}")));
                }
                let y = kernels::matmul(vals[0].data(), vals[1].data(), a[0], a[1], b[1]);
                (vec![a[0], b[1]], y)
            }
            OpKind::Add | OpKind::Mul => {
                arity(2, 2)?;
                if vals[0].shape() != vals[1].shape() {
                    return Err(Error::shape(op, format!("{:?} vs {:?}", vals[0].shape(), vals[1].shape())));
                }
                let (a, b) = (vals[0].data(), vals[1].data());
                let y = if kind == OpKind::Add {
                    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
                } else {
                    a.iter().zip(b).map(|(&x, &y)| x * y).collect()
                };
                (vals[0].shape().to_vec(), y)
            }
            OpKind::Scale(c) => {
                arity(1, 1)?;
                let c = S::from_f64_lossy(*c);
                (vals[0].shape().to_vec(), vals[0].data().iter().map(|&v| v * c).collect())
            }
            OpKind::Reshape(shape) => {
                arity(1, 1)?;
                if shape.is_empty() || shape.contains(&0) || numel(shape) != vals[0].numel() {
                    return Err(Error::shape(op, format!("{:?} -> {shape:?}", vals[0].shape())));
                }
                (shape.clone(), vals[0].data().to_vec())
            }
            OpKind::Sum => {
                arity(1, 1)?;
                (vec![1], vec![vals[0].data().iter().copied().sum()])
            }
            OpKind::InfoNce { tau } => {
                arity(1, 1)?;
                let shape = vals[0].shape();
                if shape.len() != 2 || shape[0] < 2 || shape[0] % 2 != 0 {
                    return Err(Error::shape(op, format!("need a 2N x P matrix with N >= 1, got {shape:?}")));
                }
                if !(*tau > 0.0) {
                    return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
                }
                let (loss, dz) = kernels::info_nce(
                    vals[0].data(),
                    shape[0],
                    shape[1],
                    S::from_f64_lossy(*tau),
                    S::from_f64_lossy(crate::NORM_EPS),
                );
                saved = dz;
                (vec![1], vec![loss])
            }
            OpKind::SoftmaxCrossEntropy { labels } => {
                arity(1, 1)?;
                let shape = vals[0].shape();
                let (n, k) = linear_dims(shape)
                    .ok_or_else(|| Error::shape(op, format!("logits {shape:?} are not 1-D or 2-D")))?;
                if labels.len() != n {
                    return Err(Error::shape(op, format!("{} labels for {n} rows", labels.len())));
                }
                if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
                    return Err(Error::shape(op, format!("label {bad} out of range for {k} classes")));
                }
                let (loss, dlogits) = kernels::softmax_cross_entropy(vals[0].data(), k, labels);
                saved = dlogits;
                (vec![1], vec![loss])
            }
        };
        let needs = inputs
            .iter()
            .map(|&v| self.needs_grad(v))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .any(|b| b);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(Cow::Owned(value), Some(kind), inputs.to_vec(), needs, saved))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let mut ins = vec![x, w];
        ins.extend(b);
        self.forward_op(OpKind::Linear, &ins)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: (usize, usize), padding: (usize, usize)) -> Result<Var> {
        let mut ins = vec![x, w];
        ins.extend(b);
        self.forward_op(OpKind::Conv2d { stride, padding }, &ins)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.forward_op(OpKind::Relu, &[x])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.forward_op(OpKind::GlobalAvgPool, &[x])
    }

    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        self.forward_op(OpKind::L2Normalize { eps: crate::NORM_EPS }, &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.forward_op(OpKind::Scale(c), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.forward_op(OpKind::Reshape(shape), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::Sum, &[a])
    }

    pub fn info_nce(&mut self, z: Var, tau: f64) -> Result<Var> {
        self.forward_op(OpKind::InfoNce { tau }, &[z])
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Result<Var> {
        self.forward_op(OpKind::SoftmaxCrossEntropy { labels }, &[logits])
    }

    /// Backward sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let node = self.node(loss)?;
        if node.value.numel() != 1 {
            return Err(Error::NonScalarLoss(node.value.shape().to_vec()));
        }
        self.backward_from(loss, vec![S::one()])
    }

    /// Backward sweep seeded with an arbitrary upstream gradient for `root`.
    pub fn backward_from(&self, root: Var, seed: Vec<S>) -> Result<Gradients<S>> {
        let root_node = self.node(root)?;
        if seed.len() != root_node.value.numel() {
            return Err(Error::shape(
                "backward",
                format!("seed of {} values for output {:?}", seed.len(), root_node.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[root.index as usize] = Some(seed);
        for idx in (0..=root.index as usize).rev() {
            let node = &self.nodes[idx];
            let Some(op) = &node.op else { continue };
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            let contributions = self.local_backward(node, op, &dy)?;
            for (input, g) in node.inputs.iter().zip(contributions) {
                if let Some(g) = g {
                    add_into(&mut grads[input.index as usize], g);
                }
            }
            // Keep the output gradient readable for callers.
            grads[idx] = Some(dy);
        }
        Ok(Gradients {
            graph: self.id,
            grads,
        })
    }

    fn local_backward(&self, node: &Node<'a, S>, op: &OpKind, dy: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        let ins: Vec<&Node<'a, S>> = node
            .inputs
            .iter()
            .map(|&v| self.node(v))
            .collect::<Result<_>>()?;
        let need = |i: usize| ins.get(i).is_some_and(|n| n.needs_grad);
        let val = |i: usize| ins[i].value.as_ref();
        Ok(match op {
            OpKind::Linear => {
                let (n, fan_in) = linear_dims(val(0).shape()).expect("validated in forward");
                let fan_out = val(1).shape()[0];
                let (dx, dw, db) = kernels::linear_backward(
                    val(0).data(),
                    n,
                    fan_in,
                    val(1).data(),
                    fan_out,
                    dy,
                    (need(0), need(1), need(2)),
                );
                vec![dx, dw, db]
            }
            OpKind::Conv2d { stride, padding } => {
                let g = conv_geometry(val(0).shape(), val(1).shape(), *stride, *padding)?;
                let (dx, dw, db) = kernels::conv2d_backward(val(0).data(), val(1).data(), dy, &g, (need(0), need(1), need(2)));
                vec![dx, dw, db]
            }
            OpKind::Relu => vec![Some(
                val(0)
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&x, &g)| if x > S::zero() { g } else { S::zero() })
                    .collect(),
            )],
            OpKind::GlobalAvgPool => {
                let inner = numel(&val(0).shape()[1..]);
                let inv = S::one() / S::from_usize_lossy(inner);
                let mut dx = Vec::with_capacity(val(0).numel());
                for &g in dy {
                    dx.extend(std::iter::repeat(g * inv).take(inner));
                }
                vec![Some(dx)]
            }
            OpKind::L2Normalize { eps } => {
                let d = *val(0).shape().last().expect("non-empty shape");
                vec![Some(kernels::l2_normalize_rows_backward(
                    val(0).data(),
                    &node.saved,
                    dy,
                    d,
                    S::from_f64_lossy(*eps),
                ))]
            }
            OpKind::MatMul => {
                let (a, b) = (val(0).shape(), val(1).shape());
                let (m, k, n) = (a[0], a[1], b[1]);
                let da = need(0).then(|| kernels::matmul_nt(dy, val(1).data(), m, n, k));
                let db = need(1).then(|| kernels::matmul_tn(val(0).data(), dy, m, k, n));
                vec![da, db]
            }
            OpKind::Add => vec![Some(dy.to_vec()), Some(dy.to_vec())],
            OpKind::Mul => {
                let da = need(0).then(|| val(1).data().iter().zip(dy).map(|(&b, &g)| b * g).collect());
                let db = need(1).then(|| val(0).data().iter().zip(dy).map(|(&a, &g)| a * g).collect());
                vec![da, db]
            }
            OpKind::Scale(c) => {
                let c = S::from_f64_lossy(*c);
                vec![Some(dy.iter().map(|&g| g * c).collect())]
            }
            OpKind::Reshape(_) => vec![Some(dy.to_vec())],
            OpKind::Sum => vec![Some(vec![dy[0]; val(0).numel()])],
            OpKind::InfoNce { .. } | OpKind::SoftmaxCrossEntropy { .. } => {
                vec![Some(node.saved.iter().map(|&g| g * dy[0]).collect())]
            }
        })
    }
}

fn linear_dims(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [d] => Some((1, *d)),
        [n, d] => Some((*n, *d)),
        _ => None,
    }
}

fn conv_geometry(x: &[usize], w: &[usize], stride: (usize, usize), padding: (usize, usize)) -> Result<ConvGeometry> {
    let ([c, h, wd], [o, ci, kh, kw]) = (x, w) else {
        return Err(Error::shape("conv2d", format!("input {x:?} must be C x H x W and weight {w:?} O x C x kh x kw")));
    };
    if c != ci {
        return Err(Error::shape("conv2d", format!("input {x:?} has {c} channels, weight {w:?} expects {ci}")));
    }
    let g = ConvGeometry {
        in_channels: *c,
        height: *h,
        width: *wd,
        out_channels: *o,
        kernel: (*kh, *kw),
        stride,
        padding,
    };
    if g.output_hw().is_none() {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {:?} with stride {stride:?} and padding {padding:?} does not fit input {x:?}", g.kernel),
        ));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn identity_linear_passes_input_through() {
        let mut g = Graph::new();
        let x = g.input(t(vec![2], vec![3.0, 4.0]));
        let w = g.input(t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let b = g.input(t(vec![2], vec![0.0, 0.0]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut g = Graph::new();
        let x = g.input(t(vec![3], vec![-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).unwrap().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn pooling_a_constant_map_returns_the_constant() {
        let mut g = Graph::new();
        let x = g.input(t(vec![2, 1, 5], vec![0.25; 10]));
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y).unwrap().data(), &[0.25, 0.25]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.input(t(vec![1], vec![3.0]).requiring_grad());
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn constant_loss_yields_no_parameter_gradient() {
        let mut g = Graph::new();
        let p = g.input(t(vec![2], vec![1.0, 2.0]).requiring_grad());
        let c = g.input(t(vec![2], vec![5.0, 5.0]));
        let loss = g.sum(c).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(p).map_or(true, |d| d.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.input(t(vec![2], vec![1.0, 2.0]).requiring_grad());
        let y = g.relu(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn foreign_variable_is_a_broken_tape() {
        let mut g1 = Graph::<f64>::new();
        let mut g2 = Graph::<f64>::new();
        let x = g1.input(t(vec![1], vec![1.0]));
        assert!(matches!(g2.relu(x), Err(Error::BrokenTape(_))));
        assert!(matches!(g2.backward(x), Err(Error::BrokenTape(_))));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let x = g.input(t(vec![3], vec![1.0; 3]));
        let w = g.input(t(vec![2, 2], vec![1.0; 4]));
        let err = g.linear(x, w, None).unwrap_err().to_string();
        assert!(err.contains("linear"), "{err}");
        let img = g.input(t(vec![1, 2, 3], vec![0.0; 6]));
        let k = g.input(t(vec![1, 1, 2, 5], vec![0.0; 10]));
        let err = g.conv2d(img, k, None, (1, 1), (0, 0)).unwrap_err().to_string();
        assert!(err.contains("conv2d"), "{err}");
    }

    #[test]
    fn conv_matches_direct_sum() {
        // 1 input channel, 1x4 image, kernel 1x2, stride 1, padding 1 in width.
        let mut g = Graph::new();
        let x = g.input(t(vec![1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]));
        let w = g.input(t(vec![1, 1, 1, 2], vec![10.0, 1.0]));
        let b = g.input(t(vec![1], vec![0.5]));
        let y = g.conv2d(x, w, Some(b), (1, 1), (0, 1)).unwrap();
        let out = g.value(y).unwrap();
        assert_eq!(out.shape(), &[1, 1, 5]);
        assert_eq!(out.data(), &[1.5, 12.5, 23.5, 34.5, 40.5]);
    }
}
