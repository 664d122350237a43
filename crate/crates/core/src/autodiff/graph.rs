use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::tensor::{axis_extents, broadcast_shape, for_each_broadcast, sum_to_shape, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Numeric precision of forward values.
///
/// `Single` rounds every op output to the nearest `f32`; gradients are
/// always accumulated in `f64`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Double,
    Single,
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Operation kinds recorded on the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Sum,
    Mean,
    Exp,
    Log,
    Softplus,
    Sigmoid,
    Relu,
    Power,
    Concat,
    Slice,
    Gather,
    GatherWeighted,
    CumprodExclusive,
    Broadcast,
    Reshape,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Sum {
        input: usize,
        axis: Option<usize>,
    },
    Mean {
        input: usize,
        axis: Option<usize>,
    },
    Exp(usize),
    Log(usize),
    Softplus(usize),
    Sigmoid(usize),
    Relu(usize),
    Power {
        input: usize,
        exponent: f64,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        input: usize,
        axis: usize,
        start: usize,
        end: usize,
    },
    Gather {
        table: usize,
        indices: Arc<Vec<usize>>,
    },
    GatherWeighted {
        table: usize,
        indices: Arc<Vec<usize>>,
        weights: Arc<Vec<f64>>,
        group: usize,
    },
    CumprodExclusive(usize),
    Broadcast {
        input: usize,
        shape: Vec<usize>,
    },
    Reshape {
        input: usize,
        shape: Vec<usize>,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Div(..) => OpKind::Div,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::Softplus(_) => OpKind::Softplus,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Relu(_) => OpKind::Relu,
            Op::Power { .. } => OpKind::Power,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Gather { .. } => OpKind::Gather,
            Op::GatherWeighted { .. } => OpKind::GatherWeighted,
            Op::CumprodExclusive(_) => OpKind::CumprodExclusive,
            Op::Broadcast { .. } => OpKind::Broadcast,
            Op::Reshape { .. } => OpKind::Reshape,
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Sum { input, .. }
            | Op::Mean { input, .. }
            | Op::Power { input, .. }
            | Op::Slice { input, .. }
            | Op::Broadcast { input, .. }
            | Op::Reshape { input, .. } => vec![*input],
            Op::Exp(x) | Op::Log(x) | Op::Softplus(x) | Op::Sigmoid(x) | Op::Relu(x) | Op::CumprodExclusive(x) => {
                vec![*x]
            }
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Gather { table, .. } | Op::GatherWeighted { table, .. } => vec![*table],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of tensor operations supporting reverse-mode
/// differentiation of a scalar output.
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    precision: Precision,
    epsilon_guard: Option<f64>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::with_precision(Precision::Double)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            precision,
            epsilon_guard: None,
        }
    }

    /// With a guard set, `log` clamps its input to at least `eps` and `div`
    /// replaces zero denominators by `eps` instead of failing.
    pub fn set_epsilon_guard(&mut self, eps: Option<f64>) {
        self.epsilon_guard = eps;
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Handle of the node at `index`, in recording order.
    pub fn var_at(&self, index: usize) -> Option<Var> {
        (index < self.nodes.len()).then_some(Var { graph: self.id, index })
    }

    pub fn value(&self, v: Var) -> &Tensor {
        debug_assert_eq!(v.graph, self.id);
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.index].op.kind()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let value = self.round(value);
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    fn round(&self, t: Tensor) -> Tensor {
        match self.precision {
            Precision::Double => t,
            Precision::Single => t.round_to_f32(),
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::Detached(format!(
                "variable {} belongs to graph {}, not graph {}",
                v.index, v.graph, self.id
            )));
        }
        Ok(v.index)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let kind = op.kind();
        let value = eval_op(&op, |i| &self.nodes[i].value, self.epsilon_guard)?;
        let value = self.round(value);
        if let Some(index) = value.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: kind_name(kind),
                index,
            });
        }
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.push(Op::Div(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.push(Op::MatMul(a, b))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let input = self.check(x)?;
        self.push(Op::Sum { input, axis: None })
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let input = self.check(x)?;
        self.push(Op::Sum {
            input,
            axis: Some(axis),
        })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let input = self.check(x)?;
        self.push(Op::Mean { input, axis: None })
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let input = self.check(x)?;
        self.push(Op::Mean {
            input,
            axis: Some(axis),
        })
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let x = self.check(x)?;
        self.push(Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let x = self.check(x)?;
        self.push(Op::Log(x))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let x = self.check(x)?;
        self.push(Op::Softplus(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let x = self.check(x)?;
        self.push(Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let x = self.check(x)?;
        self.push(Op::Relu(x))
    }

    pub fn powf(&mut self, x: Var, exponent: f64) -> Result<Var> {
        let input = self.check(x)?;
        self.push(Op::Power { input, exponent })
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let inputs = xs.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        self.push(Op::Concat { inputs, axis })
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let input = self.check(x)?;
        self.push(Op::Slice {
            input,
            axis,
            start,
            end,
        })
    }

    /// Rows of a rank-2 `table` selected by `indices`; shape `[indices.len(), cols]`.
    pub fn gather(&mut self, table: Var, indices: Arc<Vec<usize>>) -> Result<Var> {
        let table = self.check(table)?;
        self.push(Op::Gather { table, indices })
    }

    /// Weighted sums of table rows: output row `r` is
    /// `sum_c weights[r*group + c] * table[indices[r*group + c]]`. The
    /// weights are constants; gradients flow to the table only.
    pub fn gather_weighted(
        &mut self,
        table: Var,
        indices: Arc<Vec<usize>>,
        weights: Arc<Vec<f64>>,
        group: usize,
    ) -> Result<Var> {
        let table = self.check(table)?;
        if group == 0 || indices.len() != weights.len() || indices.len() % group != 0 {
            return Err(Error::shape(
                "gather_weighted",
                format!(
                    "{} indices and {} weights do not form groups of {group}",
                    indices.len(),
                    weights.len()
                ),
            ));
        }
        self.push(Op::GatherWeighted {
            table,
            indices,
            weights,
            group,
        })
    }

    /// Exclusive cumulative product along the last axis.
    pub fn cumprod_exclusive(&mut self, x: Var) -> Result<Var> {
        let x = self.check(x)?;
        self.push(Op::CumprodExclusive(x))
    }

    pub fn broadcast(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let input = self.check(x)?;
        self.push(Op::Broadcast {
            input,
            shape: shape.into(),
        })
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let input = self.check(x)?;
        self.push(Op::Reshape {
            input,
            shape: shape.into(),
        })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let c = self.scalar(factor);
        self.mul(x, c)
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Result<Var> {
        let c = self.scalar(offset);
        self.add(x, c)
    }

    /// Recompute every node from the leaf values.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                _ => self.round(eval_op(&node.op, |i| &values[i], self.epsilon_guard)?),
            };
            values.push(value);
        }
        Ok(values)
    }

    /// Gradient of a scalar `loss` with respect to every leaf that requires grad.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.check(loss)?;
        let lv = &self.nodes[root].value;
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.nodes[root].requires_grad {
            return Err(Error::Detached(
                "loss does not depend on any leaf that requires grad".into(),
            ));
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; root + 1];
        grads[root] = Some(Tensor::full(lv.shape().to_vec(), 1.0));
        let mut leaves = HashMap::new();

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaves.insert(i, g);
                continue;
            }
            for (input, grad) in self.vjp(node, &g)? {
                if !self.nodes[input].requires_grad {
                    continue;
                }
                accumulate(&mut grads[input], grad)?;
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                leaves
                    .entry(i)
                    .or_insert_with(|| Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { graph: self.id, leaves })
    }

    /// Vector-Jacobian products of one node for each of its inputs.
    fn vjp(&self, node: &Node, g: &Tensor) -> Result<Vec<(usize, Tensor)>> {
        let val = |i: usize| &self.nodes[i].value;
        let out = &node.value;
        let needs = |i: usize| self.nodes[i].requires_grad;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![
                (*a, sum_to_shape(g, val(*a).shape())),
                (*b, sum_to_shape(g, val(*b).shape())),
            ],
            Op::Sub(a, b) => vec![
                (*a, sum_to_shape(g, val(*a).shape())),
                (*b, sum_to_shape(&g.scale(-1.0), val(*b).shape())),
            ],
            Op::Mul(a, b) => {
                let mut res = Vec::new();
                if needs(*a) {
                    let ga = broadcast_binary(g, val(*b), |x, y| x * y);
                    res.push((*a, sum_to_shape(&ga, val(*a).shape())));
                }
                if needs(*b) {
                    let gb = broadcast_binary(g, val(*a), |x, y| x * y);
                    res.push((*b, sum_to_shape(&gb, val(*b).shape())));
                }
                res
            }
            Op::Div(a, b) => {
                let den = guarded_denominator(val(*b), self.epsilon_guard);
                let mut res = Vec::new();
                if needs(*a) {
                    let ga = broadcast_binary(g, &den, |x, y| x / y);
                    res.push((*a, sum_to_shape(&ga, val(*a).shape())));
                }
                if needs(*b) {
                    // d(a/b)/db = -(a/b)/b = -out/b
                    let q = broadcast_binary(out, &den, |o, d| -o / d);
                    let gb = broadcast_binary(g, &q, |x, y| x * y);
                    res.push((*b, sum_to_shape(&gb, val(*b).shape())));
                }
                res
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let mut res = Vec::new();
                if needs(*a) {
                    let d = matmul_a_bt(g.data(), tb.data(), m, n, k);
                    res.push((*a, Tensor::new(vec![m, k], d)?));
                }
                if needs(*b) {
                    let d = matmul_at_b(ta.data(), g.data(), m, k, n);
                    res.push((*b, Tensor::new(vec![k, n], d)?));
                }
                res
            }
            Op::Sum { input, axis } => vec![(*input, expand_reduced(g, val(*input).shape(), *axis, 1.0))],
            Op::Mean { input, axis } => {
                let shape = val(*input).shape();
                let count = match axis {
                    None => shape.iter().product::<usize>(),
                    Some(a) => shape[*a],
                };
                vec![(*input, expand_reduced(g, shape, *axis, 1.0 / count.max(1) as f64))]
            }
            Op::Exp(x) => vec![(*x, zip(g, out, |g, y| g * y))],
            Op::Log(x) => {
                let eps = self.epsilon_guard;
                vec![(
                    *x,
                    zip(g, val(*x), |g, x| match eps {
                        Some(e) if x < e => 0.0,
                        _ => g / x,
                    }),
                )]
            }
            Op::Softplus(x) => vec![(*x, zip(g, val(*x), |g, x| g * sigmoid(x)))],
            Op::Sigmoid(x) => vec![(*x, zip(g, out, |g, y| g * y * (1.0 - y)))],
            Op::Relu(x) => vec![(*x, zip(g, val(*x), |g, x| if x > 0.0 { g } else { 0.0 }))],
            Op::Power { input, exponent } => {
                let p = *exponent;
                vec![(
                    *input,
                    zip(
                        g,
                        val(*input),
                        |g, x| {
                            if p == 0.0 {
                                0.0
                            } else {
                                g * p * x.powf(p - 1.0)
                            }
                        },
                    ),
                )]
            }
            Op::Concat { inputs, axis } => {
                let mut offset = 0;
                let mut res = Vec::new();
                for &i in inputs {
                    let len = val(i).shape()[*axis];
                    if needs(i) {
                        res.push((i, slice_kernel(g, *axis, offset, offset + len)?));
                    }
                    offset += len;
                }
                res
            }
            Op::Slice {
                input,
                axis,
                start,
                end,
            } => {
                let shape = val(*input).shape();
                let (outer, len, inner) = axis_extents(shape, *axis);
                let width = end - start;
                let mut d = vec![0.0; shape.iter().product()];
                let gd = g.data();
                for o in 0..outer {
                    let src = o * width * inner;
                    let dst = (o * len + start) * inner;
                    d[dst..dst + width * inner].copy_from_slice(&gd[src..src + width * inner]);
                }
                vec![(*input, Tensor::new(shape.to_vec(), d)?)]
            }
            Op::Gather { table, indices } => {
                let shape = val(*table).shape();
                let cols = shape[1];
                let mut d = vec![0.0; shape[0] * cols];
                let gd = g.data();
                for (row, &idx) in indices.iter().enumerate() {
                    let dst = &mut d[idx * cols..(idx + 1) * cols];
                    for (c, v) in dst.iter_mut().enumerate() {
                        *v += gd[row * cols + c];
                    }
                }
                vec![(*table, Tensor::new(shape.to_vec(), d)?)]
            }
            Op::GatherWeighted {
                table,
                indices,
                weights,
                group,
            } => {
                let shape = val(*table).shape();
                let cols = shape[1];
                let mut d = vec![0.0; shape[0] * cols];
                let gd = g.data();
                for (k, (&idx, &w)) in indices.iter().zip(weights.iter()).enumerate() {
                    let row = k / group;
                    let src = &gd[row * cols..(row + 1) * cols];
                    for (v, &gv) in d[idx * cols..(idx + 1) * cols].iter_mut().zip(src) {
                        *v += w * gv;
                    }
                }
                vec![(*table, Tensor::new(shape.to_vec(), d)?)]
            }
            Op::CumprodExclusive(x) => {
                let xs = val(*x);
                let len = *xs.shape().last().unwrap_or(&1);
                let rows = xs.numel() / len.max(1);
                let (xd, yd, gd) = (xs.data(), out.data(), g.data());
                let mut d = vec![0.0; xs.numel()];
                for r in 0..rows {
                    let base = r * len;
                    // acc_k = sum_{i>k} g_i prod_{k<j<i} x_j, built from the back
                    let mut acc = 0.0;
                    for k in (0..len).rev() {
                        d[base + k] = yd[base + k] * acc;
                        acc = gd[base + k] + xd[base + k] * acc;
                    }
                }
                vec![(*x, Tensor::new(xs.shape().to_vec(), d)?)]
            }
            Op::Broadcast { input, .. } => vec![(*input, sum_to_shape(g, val(*input).shape()))],
            Op::Reshape { input, .. } => vec![(*input, g.reshape(val(*input).shape().to_vec())?)],
        })
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    graph: u64,
    leaves: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.graph != self.graph {
            return None;
        }
        self.leaves.get(&v.index)
    }

    /// Gradient for `v`; fails if `v` is not a grad-requiring leaf of this graph.
    pub fn wrt(&self, v: Var) -> Result<Tensor> {
        self.get(v)
            .cloned()
            .ok_or_else(|| Error::Detached(format!("no gradient recorded for variable {}", v.index)))
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}

fn accumulate(slot: &mut Option<Tensor>, grad: Tensor) -> Result<()> {
    match slot {
        None => *slot = Some(grad),
        Some(existing) => {
            if existing.shape() != grad.shape() {
                return Err(Error::shape(
                    "backward",
                    format!("gradient {:?} vs {:?}", existing.shape(), grad.shape()),
                ));
            }
            for (e, g) in existing.data_mut().iter_mut().zip(grad.data()) {
                *e += g;
            }
        }
    }
    Ok(())
}

pub(crate) fn kind_name(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Leaf => "leaf",
        OpKind::Add => "add",
        OpKind::Sub => "sub",
        OpKind::Mul => "mul",
        OpKind::Div => "div",
        OpKind::MatMul => "matmul",
        OpKind::Sum => "sum",
        OpKind::Mean => "mean",
        OpKind::Exp => "exp",
        OpKind::Log => "log",
        OpKind::Softplus => "softplus",
        OpKind::Sigmoid => "sigmoid",
        OpKind::Relu => "relu",
        OpKind::Power => "power",
        OpKind::Concat => "concat",
        OpKind::Slice => "slice",
        OpKind::Gather => "gather",
        OpKind::GatherWeighted => "gather_weighted",
        OpKind::CumprodExclusive => "cumprod_exclusive",
        OpKind::Broadcast => "broadcast",
        OpKind::Reshape => "reshape",
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let d = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), d).expect("zip of equal shapes")
}

/// Broadcast binary kernel; shapes must already be compatible.
fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        return zip(a, b, f);
    }
    let shape = broadcast_shape("broadcast", a.shape(), b.shape()).expect("compatible shapes");
    let mut out = vec![0.0; shape.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&shape, a.shape(), b.shape(), |o, i, j| {
        out[o] = f(ad[i], bd[j]);
    });
    Tensor::new(shape, out).expect("broadcast output")
}

fn checked_binary(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    broadcast_shape(op, a.shape(), b.shape())?;
    Ok(broadcast_binary(a, b, f))
}

fn guarded_denominator(b: &Tensor, guard: Option<f64>) -> Tensor {
    match guard {
        Some(eps) => b.map(|v| if v == 0.0 { eps } else { v }),
        None => b.clone(),
    }
}

/// Gradient of a reduction, expanded back to the input shape.
fn expand_reduced(g: &Tensor, shape: &[usize], axis: Option<usize>, factor: f64) -> Tensor {
    match axis {
        None => Tensor::full(shape.to_vec(), g.data()[0] * factor),
        Some(axis) => {
            let (outer, len, inner) = axis_extents(shape, axis);
            let gd = g.data();
            let mut d = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        d[(o * len + l) * inner + i] = gd[o * inner + i] * factor;
                    }
                }
            }
            Tensor::new(shape.to_vec(), d).expect("expand")
        }
    }
}

fn slice_kernel(x: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() || start > end || end > shape[axis] {
        return Err(Error::shape(
            "slice",
            format!("range {start}..{end} on axis {axis} of {shape:?}"),
        ));
    }
    let (outer, len, inner) = axis_extents(shape, axis);
    let width = end - start;
    let mut d = Vec::with_capacity(outer * width * inner);
    for o in 0..outer {
        let src = (o * len + start) * inner;
        d.extend_from_slice(&x.data()[src..src + width * inner]);
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = width;
    Tensor::new(out_shape, d)
}

pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `G · Bᵀ` for `G: [m, n]`, `B: [k, n]`.
fn matmul_a_bt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `Aᵀ · G` for `A: [m, k]`, `G: [m, n]`.
fn matmul_at_b(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

fn eval_op<'a>(op: &Op, val: impl Fn(usize) -> &'a Tensor, guard: Option<f64>) -> Result<Tensor> {
    match op {
        Op::Leaf => unreachable!("leaves are not evaluated"),
        Op::Add(a, b) => checked_binary("add", val(*a), val(*b), |x, y| x + y),
        Op::Sub(a, b) => checked_binary("sub", val(*a), val(*b), |x, y| x - y),
        Op::Mul(a, b) => checked_binary("mul", val(*a), val(*b), |x, y| x * y),
        Op::Div(a, b) => {
            let den = val(*b);
            if guard.is_none() {
                if let Some(i) = den.data().iter().position(|&v| v == 0.0) {
                    return Err(Error::Domain {
                        op: "div",
                        detail: format!("zero denominator at flat index {i}"),
                    });
                }
            }
            let den = guarded_denominator(den, guard);
            checked_binary("div", val(*a), &den, |x, y| x / y)
        }
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
                return Err(Error::shape(
                    "matmul",
                    format!("cannot contract {:?} with {:?}", ta.shape(), tb.shape()),
                ));
            }
            let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            Tensor::new(vec![m, n], matmul_kernel(ta.data(), tb.data(), m, k, n))
        }
        Op::Sum { input, axis } => reduce("sum", val(*input), *axis, 1.0),
        Op::Mean { input, axis } => {
            let x = val(*input);
            let count = match axis {
                None => x.numel(),
                Some(a) if *a < x.rank() => x.shape()[*a],
                Some(_) => 1,
            };
            if count == 0 {
                return Err(Error::shape("mean", "mean of an empty tensor"));
            }
            reduce("mean", x, *axis, 1.0 / count as f64)
        }
        Op::Exp(x) => Ok(val(*x).map(f64::exp)),
        Op::Log(x) => {
            let x = val(*x);
            match guard {
                Some(eps) => Ok(x.map(|v| v.max(eps).ln())),
                None => {
                    if let Some(i) = x.data().iter().position(|&v| v <= 0.0) {
                        return Err(Error::Domain {
                            op: "log",
                            detail: format!("non-positive input {} at flat index {i}", x.data()[i]),
                        });
                    }
                    Ok(x.map(f64::ln))
                }
            }
        }
        Op::Softplus(x) => Ok(val(*x).map(softplus)),
        Op::Sigmoid(x) => Ok(val(*x).map(sigmoid)),
        Op::Relu(x) => Ok(val(*x).map(|v| v.max(0.0))),
        Op::Power { input, exponent } => Ok(val(*input).map(|v| v.powf(*exponent))),
        Op::Concat { inputs, axis } => {
            let first = inputs
                .first()
                .map(|&i| val(i))
                .ok_or_else(|| Error::shape("concat", "no inputs"))?;
            let rank = first.rank();
            if *axis >= rank {
                return Err(Error::shape(
                    "concat",
                    format!("axis {axis} out of range for rank {rank}"),
                ));
            }
            let mut out_shape = first.shape().to_vec();
            out_shape[*axis] = 0;
            for &i in inputs {
                let s = val(i).shape();
                let compatible = s.len() == rank
                    && s.iter()
                        .zip(first.shape())
                        .enumerate()
                        .all(|(d, (x, y))| d == *axis || x == y);
                if !compatible {
                    return Err(Error::shape(
                        "concat",
                        format!("{:?} incompatible with {:?} on axis {axis}", s, first.shape()),
                    ));
                }
                out_shape[*axis] += s[*axis];
            }
            let (outer, _, inner) = axis_extents(&out_shape, *axis);
            let mut d = Vec::with_capacity(out_shape.iter().product());
            for o in 0..outer {
                for &i in inputs {
                    let t = val(i);
                    let w = t.shape()[*axis] * inner;
                    d.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
                }
            }
            Tensor::new(out_shape, d)
        }
        Op::Slice {
            input,
            axis,
            start,
            end,
        } => slice_kernel(val(*input), *axis, *start, *end),
        Op::Gather { table, indices } => {
            let t = val(*table);
            if t.rank() != 2 {
                return Err(Error::shape(
                    "gather",
                    format!("table must be rank 2, got {:?}", t.shape()),
                ));
            }
            let (rows, cols) = (t.shape()[0], t.shape()[1]);
            let mut d = Vec::with_capacity(indices.len() * cols);
            for &idx in indices.iter() {
                if idx >= rows {
                    return Err(Error::shape(
                        "gather",
                        format!("index {idx} out of range for {rows} rows"),
                    ));
                }
                d.extend_from_slice(&t.data()[idx * cols..(idx + 1) * cols]);
            }
            Tensor::new(vec![indices.len(), cols], d)
        }
        Op::GatherWeighted {
            table,
            indices,
            weights,
            group,
        } => {
            let t = val(*table);
            if t.rank() != 2 {
                return Err(Error::shape(
                    "gather_weighted",
                    format!("table must be rank 2, got {:?}", t.shape()),
                ));
            }
            let (rows, cols) = (t.shape()[0], t.shape()[1]);
            let mut d = vec![0.0; indices.len() / group * cols];
            for (k, (&idx, &w)) in indices.iter().zip(weights.iter()).enumerate() {
                if idx >= rows {
                    return Err(Error::shape(
                        "gather_weighted",
                        format!("index {idx} out of range for {rows} rows"),
                    ));
                }
                let row = k / group;
                for (o, &v) in d[row * cols..(row + 1) * cols]
                    .iter_mut()
                    .zip(&t.data()[idx * cols..(idx + 1) * cols])
                {
                    *o += w * v;
                }
            }
            Tensor::new(vec![indices.len() / group, cols], d)
        }
        Op::CumprodExclusive(x) => {
            let x = val(*x);
            let len = *x
                .shape()
                .last()
                .ok_or_else(|| Error::shape("cumprod_exclusive", "input must have at least one axis"))?;
            let mut d = vec![0.0; x.numel()];
            if len > 0 {
                for (src, dst) in x.data().chunks(len).zip(d.chunks_mut(len)) {
                    let mut acc = 1.0;
                    for (s, o) in src.iter().zip(dst.iter_mut()) {
                        *o = acc;
                        acc *= s;
                    }
                }
            }
            Tensor::new(x.shape().to_vec(), d)
        }
        Op::Broadcast { input, shape } => {
            let x = val(*input);
            let out = broadcast_shape("broadcast", x.shape(), shape)?;
            if &out != shape {
                return Err(Error::shape(
                    "broadcast",
                    format!("{:?} does not broadcast to {shape:?}", x.shape()),
                ));
            }
            let mut d = vec![0.0; out.iter().product()];
            let xd = x.data();
            for_each_broadcast(&out, x.shape(), &out, |o, i, _| d[o] = xd[i]);
            Tensor::new(out, d)
        }
        Op::Reshape { input, shape } => val(*input).reshape(shape.clone()),
    }
}

fn reduce(op: &'static str, x: &Tensor, axis: Option<usize>, factor: f64) -> Result<Tensor> {
    match axis {
        None => Ok(Tensor::scalar(x.sum() * factor)),
        Some(axis) => {
            if axis >= x.rank() {
                return Err(Error::shape(
                    op,
                    format!("axis {axis} out of range for {:?}", x.shape()),
                ));
            }
            let (outer, len, inner) = axis_extents(x.shape(), axis);
            let xd = x.data();
            let mut d = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    let src = &xd[(o * len + l) * inner..(o * len + l + 1) * inner];
                    for (acc, v) in d[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *acc += v;
                    }
                }
            }
            if factor != 1.0 {
                d.iter_mut().for_each(|v| *v *= factor);
            }
            let mut shape = x.shape().to_vec();
            shape.remove(axis);
            Tensor::new(shape, d)
        }
    }
}
