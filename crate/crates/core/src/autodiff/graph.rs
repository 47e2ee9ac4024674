use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use super::AutodiffError;
use crate::tensor::{dims2, Tensor};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds. Matrix ops take rank-1 or rank-2 inputs; reductions
/// produce a shape-`[1]` scalar.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Leaf,
    /// `[n, k] x [k, m]`.
    MatMul,
    /// Elementwise; the right operand may be a single row broadcast over rows.
    Add,
    /// Elementwise; same broadcasting rule as `Add`.
    Mul,
    Relu,
    /// Tanh approximation.
    Gelu,
    Tanh,
    /// Rows of a `[V, d]` table.
    EmbeddingLookup { ids: Vec<usize> },
    /// Each output row is the weighted sum of the listed table rows.
    EmbeddingBag { bags: Vec<Vec<(usize, f64)>> },
    /// Row-wise normalization; inputs `(x, gain, bias)`.
    LayerNorm { eps: f64 },
    /// Row-wise.
    Softmax,
    /// Mean over rows whose target is `Some`.
    CrossEntropyWithLogits { targets: Vec<Option<usize>> },
    /// Mean squared error over all elements; inputs `(prediction, target)`.
    Mse,
    /// Row-wise Euclidean norm, `[n, d] -> [n, 1]`.
    L2Norm,
    /// Row-wise absolute sum, `[n, d] -> [n, 1]`.
    L1Norm,
    ConcatRows,
    SliceRows { start: usize, end: usize },
    ConcatCols,
    SliceCols { start: usize, end: usize },
    Scale(f64),
    Transpose,
    Sum,
    Mean,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Relu => "relu",
            Op::Gelu => "gelu",
            Op::Tanh => "tanh",
            Op::EmbeddingLookup { .. } => "embedding_lookup",
            Op::EmbeddingBag { .. } => "embedding_bag",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax => "softmax",
            Op::CrossEntropyWithLogits { .. } => "cross_entropy_with_logits",
            Op::Mse => "mse",
            Op::L2Norm => "l2_norm",
            Op::L1Norm => "l1_norm",
            Op::ConcatRows => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::ConcatCols => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::Scale(_) => "scale",
            Op::Transpose => "transpose",
            Op::Sum => "sum",
            Op::Mean => "mean",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    inputs: Vec<usize>,
    shape: Vec<usize>,
    value: Vec<f64>,
    needs_grad: bool,
}

impl Node {
    fn dims(&self) -> (usize, usize) {
        dims2(&self.shape).unwrap_or((1, self.value.len()))
    }
}

/// Append-only computation graph. Inputs of node `i` always have ids `< i`.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Copies `t` into the graph. Gradients are tracked when
    /// `t.requires_grad()` is set.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    /// Untracked input.
    pub fn constant(&mut self, t: &Tensor) -> NodeId {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), false)
    }

    fn push_leaf(&mut self, shape: Vec<usize>, value: Vec<f64>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            shape,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Forward value as a fresh (untracked) tensor.
    pub fn tensor(&self, id: NodeId) -> Tensor {
        let n = &self.nodes[id.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("graph values are finite")
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    /// Gradient of the last `backward` loss with respect to `id`.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `id` into `target`'s gradient buffer.
    pub fn accumulate_into(&self, id: NodeId, target: &mut Tensor) -> Result<(), AutodiffError> {
        match self.grad(id) {
            Some(g) => target.accumulate_grad(g),
            None => target.accumulate_grad(&vec![0.0; target.len()]),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Add, &[a, b])
    }
    /// `a - b` as `a + (-1) * b`.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Mul, &[a, b])
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Relu, &[a])
    }
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Gelu, &[a])
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Tanh, &[a])
    }
    pub fn embedding_lookup(
        &mut self,
        table: NodeId,
        ids: Vec<usize>,
    ) -> Result<NodeId, AutodiffError> {
        self.apply(Op::EmbeddingLookup { ids }, &[table])
    }
    pub fn embedding_bag(
        &mut self,
        table: NodeId,
        bags: Vec<Vec<(usize, f64)>>,
    ) -> Result<NodeId, AutodiffError> {
        self.apply(Op::EmbeddingBag { bags }, &[table])
    }
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        self.apply(Op::LayerNorm { eps: 1e-5 }, &[x, gain, bias])
    }
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Softmax, &[a])
    }
    pub fn cross_entropy_with_logits(
        &mut self,
        logits: NodeId,
        targets: Vec<Option<usize>>,
    ) -> Result<NodeId, AutodiffError> {
        self.apply(Op::CrossEntropyWithLogits { targets }, &[logits])
    }
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Mse, &[pred, target])
    }
    pub fn l2_norm(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::L2Norm, &[a])
    }
    pub fn l1_norm(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::L1Norm, &[a])
    }
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, AutodiffError> {
        self.apply(Op::ConcatRows, parts)
    }
    pub fn slice_rows(
        &mut self,
        a: NodeId,
        start: usize,
        end: usize,
    ) -> Result<NodeId, AutodiffError> {
        self.apply(Op::SliceRows { start, end }, &[a])
    }
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, AutodiffError> {
        self.apply(Op::ConcatCols, parts)
    }
    pub fn slice_cols(
        &mut self,
        a: NodeId,
        start: usize,
        end: usize,
    ) -> Result<NodeId, AutodiffError> {
        self.apply(Op::SliceCols { start, end }, &[a])
    }
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Scale(c), &[a])
    }
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Transpose, &[a])
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Sum, &[a])
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Mean, &[a])
    }

    /// Appends a node of kind `op` over `inputs`, evaluating it eagerly.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        for id in inputs {
            if id.0 >= self.nodes.len() {
                return Err(AutodiffError::UnknownNode(id.0));
            }
        }
        let (shape, value) = self.forward(&op, inputs)?;
        if value.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: op.name() });
        }
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            inputs: inputs.iter().map(|i| i.0).collect(),
            shape,
            value,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn dims_of(&self, op: &Op, id: NodeId) -> Result<(usize, usize), AutodiffError> {
        let n = &self.nodes[id.0];
        dims2(&n.shape).ok_or_else(|| AutodiffError::ShapeMismatch {
            op: op.name(),
            shapes: vec![n.shape.clone()],
        })
    }

    fn mismatch(&self, op: &Op, ids: &[NodeId]) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            op: op.name(),
            shapes: ids.iter().map(|i| self.nodes[i.0].shape.clone()).collect(),
        }
    }

    fn arity(op: &Op, inputs: &[NodeId], n: usize) -> Result<(), AutodiffError> {
        if inputs.len() != n {
            return Err(AutodiffError::Arity {
                op: op.name(),
                got: inputs.len(),
            });
        }
        Ok(())
    }

    fn forward(&self, op: &Op, inputs: &[NodeId]) -> Result<(Vec<usize>, Vec<f64>), AutodiffError> {
        match op {
            Op::Leaf => Err(AutodiffError::Arity {
                op: "leaf",
                got: inputs.len(),
            }),
            Op::MatMul => {
                Self::arity(op, inputs, 2)?;
                let (n, k) = self.dims_of(op, inputs[0])?;
                let (k2, m) = self.dims_of(op, inputs[1])?;
                if k != k2 {
                    return Err(self.mismatch(op, inputs));
                }
                let mut out = vec![0.0; n * m];
                matmul_nn(self.value(inputs[0]), self.value(inputs[1]), &mut out, n, k, m);
                Ok((vec![n, m], out))
            }
            Op::Add | Op::Mul => {
                Self::arity(op, inputs, 2)?;
                let (r, c) = self.dims_of(op, inputs[0])?;
                let (r2, c2) = self.dims_of(op, inputs[1])?;
                if c != c2 || (r2 != r && r2 != 1) {
                    return Err(self.mismatch(op, inputs));
                }
                let a = self.value(inputs[0]);
                let b = self.value(inputs[1]);
                let add = matches!(op, Op::Add);
                let out = (0..r * c)
                    .map(|i| {
                        let bj = if r2 == 1 { b[i % c] } else { b[i] };
                        if add {
                            a[i] + bj
                        } else {
                            a[i] * bj
                        }
                    })
                    .collect();
                Ok((self.nodes[inputs[0].0].shape.clone(), out))
            }
            Op::Relu | Op::Gelu | Op::Tanh | Op::Scale(_) => {
                Self::arity(op, inputs, 1)?;
                let a = &self.nodes[inputs[0].0];
                let f = |x: f64| match op {
                    Op::Relu => x.max(0.0),
                    Op::Gelu => 0.5 * x * (1.0 + libm::tanh(GELU_C * (x + GELU_A * x * x * x))),
                    Op::Tanh => libm::tanh(x),
                    Op::Scale(s) => s * x,
                    _ => unreachable!(),
                };
                Ok((a.shape.clone(), a.value.iter().map(|&x| f(x)).collect()))
            }
            Op::EmbeddingLookup { ids } => {
                Self::arity(op, inputs, 1)?;
                let (v, d) = self.dims_of(op, inputs[0])?;
                if ids.is_empty() {
                    return Err(self.mismatch(op, inputs));
                }
                let table = self.value(inputs[0]);
                let mut out = Vec::with_capacity(ids.len() * d);
                for &id in ids {
                    if id >= v {
                        return Err(AutodiffError::IndexOutOfRange {
                            op: op.name(),
                            index: id,
                            extent: v,
                        });
                    }
                    out.extend_from_slice(&table[id * d..(id + 1) * d]);
                }
                Ok((vec![ids.len(), d], out))
            }
            Op::EmbeddingBag { bags } => {
                Self::arity(op, inputs, 1)?;
                let (v, d) = self.dims_of(op, inputs[0])?;
                if bags.is_empty() {
                    return Err(self.mismatch(op, inputs));
                }
                let table = self.value(inputs[0]);
                let mut out = vec![0.0; bags.len() * d];
                for (row, bag) in bags.iter().enumerate() {
                    let dst = &mut out[row * d..(row + 1) * d];
                    for &(id, w) in bag {
                        if id >= v {
                            return Err(AutodiffError::IndexOutOfRange {
                                op: op.name(),
                                index: id,
                                extent: v,
                            });
                        }
                        let src = &table[id * d..(id + 1) * d];
                        dst.iter_mut().zip(src).for_each(|(o, s)| *o += w * s);
                    }
                }
                Ok((vec![bags.len(), d], out))
            }
            Op::LayerNorm { eps } => {
                Self::arity(op, inputs, 3)?;
                let (r, c) = self.dims_of(op, inputs[0])?;
                let (gr, gc) = self.dims_of(op, inputs[1])?;
                let (br, bc) = self.dims_of(op, inputs[2])?;
                if gr != 1 || br != 1 || gc != c || bc != c {
                    return Err(self.mismatch(op, inputs));
                }
                let x = self.value(inputs[0]);
                let gain = self.value(inputs[1]);
                let bias = self.value(inputs[2]);
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    let row = &x[i * c..(i + 1) * c];
                    let (mean, rstd) = row_moments(row, *eps);
                    for j in 0..c {
                        out[i * c + j] = (row[j] - mean) * rstd * gain[j] + bias[j];
                    }
                }
                Ok((vec![r, c], out))
            }
            Op::Softmax => {
                Self::arity(op, inputs, 1)?;
                let (r, c) = self.dims_of(op, inputs[0])?;
                let x = self.value(inputs[0]);
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    softmax_row(&x[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
                }
                Ok((vec![r, c], out))
            }
            Op::CrossEntropyWithLogits { targets } => {
                Self::arity(op, inputs, 1)?;
                let (r, c) = self.dims_of(op, inputs[0])?;
                if targets.len() != r {
                    return Err(self.mismatch(op, inputs));
                }
                let x = self.value(inputs[0]);
                let mut total = 0.0;
                let mut count = 0usize;
                for (i, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        if t >= c {
                            return Err(AutodiffError::IndexOutOfRange {
                                op: op.name(),
                                index: t,
                                extent: c,
                            });
                        }
                        let row = &x[i * c..(i + 1) * c];
                        total += log_sum_exp(row) - row[t];
                        count += 1;
                    }
                }
                if count == 0 {
                    return Err(self.mismatch(op, inputs));
                }
                Ok((vec![1], vec![total / count as f64]))
            }
            Op::Mse => {
                Self::arity(op, inputs, 2)?;
                let a = &self.nodes[inputs[0].0];
                let b = &self.nodes[inputs[1].0];
                if a.value.len() != b.value.len() || a.dims() != b.dims() {
                    return Err(self.mismatch(op, inputs));
                }
                let n = a.value.len() as f64;
                let s: f64 = a
                    .value
                    .iter()
                    .zip(&b.value)
                    .map(|(p, t)| (p - t) * (p - t))
                    .sum();
                Ok((vec![1], vec![s / n]))
            }
            Op::L2Norm | Op::L1Norm => {
                Self::arity(op, inputs, 1)?;
                let (r, c) = self.dims_of(op, inputs[0])?;
                let x = self.value(inputs[0]);
                let out = (0..r)
                    .map(|i| {
                        let row = &x[i * c..(i + 1) * c];
                        if matches!(op, Op::L2Norm) {
                            libm::sqrt(row.iter().map(|v| v * v).sum())
                        } else {
                            row.iter().map(|v| v.abs()).sum()
                        }
                    })
                    .collect();
                Ok((vec![r, 1], out))
            }
            Op::ConcatRows => {
                if inputs.is_empty() {
                    return Err(AutodiffError::Arity { op: op.name(), got: 0 });
                }
                let (_, c) = self.dims_of(op, inputs[0])?;
                let mut rows = 0;
                let mut out = Vec::new();
                for &id in inputs {
                    let (r, ci) = self.dims_of(op, id)?;
                    if ci != c {
                        return Err(self.mismatch(op, inputs));
                    }
                    rows += r;
                    out.extend_from_slice(self.value(id));
                }
                Ok((vec![rows, c], out))
            }
            Op::SliceRows { start, end } => {
                Self::arity(op, inputs, 1)?;
                let (r, c) = self.dims_of(op, inputs[0])?;
                if start >= end || *end > r {
                    return Err(self.mismatch(op, inputs));
                }
                Ok((
                    vec![end - start, c],
                    self.value(inputs[0])[start * c..end * c].to_vec(),
                ))
            }
            Op::ConcatCols => {
                if inputs.is_empty() {
                    return Err(AutodiffError::Arity { op: op.name(), got: 0 });
                }
                let (r, _) = self.dims_of(op, inputs[0])?;
                let mut widths = Vec::with_capacity(inputs.len());
                for &id in inputs {
                    let (ri, ci) = self.dims_of(op, id)?;
                    if ri != r {
                        return Err(self.mismatch(op, inputs));
                    }
                    widths.push(ci);
                }
                let total: usize = widths.iter().sum();
                let mut out = Vec::with_capacity(r * total);
                for i in 0..r {
                    for (&id, &w) in inputs.iter().zip(&widths) {
                        out.extend_from_slice(&self.value(id)[i * w..(i + 1) * w]);
                    }
                }
                Ok((vec![r, total], out))
            }
            Op::SliceCols { start, end } => {
                Self::arity(op, inputs, 1)?;
                let (r, c) = self.dims_of(op, inputs[0])?;
                if start >= end || *end > c {
                    return Err(self.mismatch(op, inputs));
                }
                let x = self.value(inputs[0]);
                let mut out = Vec::with_capacity(r * (end - start));
                for i in 0..r {
                    out.extend_from_slice(&x[i * c + start..i * c + end]);
                }
                Ok((vec![r, end - start], out))
            }
            Op::Transpose => {
                Self::arity(op, inputs, 1)?;
                let (r, c) = self.dims_of(op, inputs[0])?;
                let x = self.value(inputs[0]);
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = x[i * c + j];
                    }
                }
                Ok((vec![c, r], out))
            }
            Op::Sum | Op::Mean => {
                Self::arity(op, inputs, 1)?;
                let x = self.value(inputs[0]);
                let s: f64 = x.iter().sum();
                let v = if matches!(op, Op::Mean) {
                    s / x.len() as f64
                } else {
                    s
                };
                Ok((vec![1], vec![v]))
            }
        }
    }

    /// Back-propagates from the scalar node `loss`. Every tracked leaf ends
    /// up with a gradient, zero when it does not influence the loss.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), AutodiffError> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or(AutodiffError::UnknownNode(loss.0))?;
        if node.value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: node.shape.clone(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad && !self.nodes[i].inputs.is_empty() {
                self.backprop_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.needs_grad && matches!(n.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(vec![0.0; n.value.len()]);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let ins = &node.inputs;
        let wants = |k: usize| self.nodes[ins[k]].needs_grad;
        let value = |k: usize| self.nodes[ins[k]].value.as_slice();
        let dims = |k: usize| self.nodes[ins[k]].dims();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul => {
                let (n, k) = dims(0);
                let (_, m) = dims(1);
                if wants(0) {
                    let mut da = vec![0.0; n * k];
                    matmul_nt(g, value(1), &mut da, n, m, k);
                    add_into(grads, ins[0], &da);
                }
                if wants(1) {
                    let mut db = vec![0.0; k * m];
                    matmul_tn(value(0), g, &mut db, n, k, m);
                    add_into(grads, ins[1], &db);
                }
            }
            Op::Add | Op::Mul => {
                let (r, c) = dims(0);
                let (r2, _) = dims(1);
                let a = value(0);
                let b = value(1);
                let add = matches!(node.op, Op::Add);
                if wants(0) {
                    let da: Vec<f64> = if add {
                        g.to_vec()
                    } else {
                        (0..r * c)
                            .map(|i| g[i] * if r2 == 1 { b[i % c] } else { b[i] })
                            .collect()
                    };
                    add_into(grads, ins[0], &da);
                }
                if wants(1) {
                    let mut db = vec![0.0; r2 * c];
                    for idx in 0..r * c {
                        let j = if r2 == 1 { idx % c } else { idx };
                        db[j] += if add { g[idx] } else { g[idx] * a[idx] };
                    }
                    add_into(grads, ins[1], &db);
                }
            }
            Op::Relu => {
                let d: Vec<f64> = value(0)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| if x > 0.0 { gi } else { 0.0 })
                    .collect();
                add_into(grads, ins[0], &d);
            }
            Op::Gelu => {
                let d: Vec<f64> = value(0)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| {
                        let t = libm::tanh(GELU_C * (x + GELU_A * x * x * x));
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        gi * (0.5 * (1.0 + t) + 0.5 * x * dt)
                    })
                    .collect();
                add_into(grads, ins[0], &d);
            }
            Op::Tanh => {
                let d: Vec<f64> = node
                    .value
                    .iter()
                    .zip(g)
                    .map(|(&y, &gi)| gi * (1.0 - y * y))
                    .collect();
                add_into(grads, ins[0], &d);
            }
            Op::Scale(s) => {
                let d: Vec<f64> = g.iter().map(|gi| gi * s).collect();
                add_into(grads, ins[0], &d);
            }
            Op::EmbeddingLookup { ids } => {
                let (v, d) = dims(0);
                let mut dt = vec![0.0; v * d];
                for (row, &id) in ids.iter().enumerate() {
                    let src = &g[row * d..(row + 1) * d];
                    dt[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(o, s)| *o += s);
                }
                add_into(grads, ins[0], &dt);
            }
            Op::EmbeddingBag { bags } => {
                let (v, d) = dims(0);
                let mut dt = vec![0.0; v * d];
                for (row, bag) in bags.iter().enumerate() {
                    let src = &g[row * d..(row + 1) * d];
                    for &(id, w) in bag {
                        dt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(o, s)| *o += w * s);
                    }
                }
                add_into(grads, ins[0], &dt);
            }
            Op::LayerNorm { eps } => {
                let (r, c) = dims(0);
                let x = value(0);
                let gain = value(1);
                let mut dx = vec![0.0; r * c];
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                let mut xhat = vec![0.0; c];
                let mut dxhat = vec![0.0; c];
                for i in 0..r {
                    let row = &x[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let (mean, rstd) = row_moments(row, *eps);
                    for j in 0..c {
                        xhat[j] = (row[j] - mean) * rstd;
                        dxhat[j] = gr[j] * gain[j];
                        dgain[j] += gr[j] * xhat[j];
                        dbias[j] += gr[j];
                    }
                    let m1 = dxhat.iter().sum::<f64>() / c as f64;
                    let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dx[i * c + j] = rstd * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                if wants(0) {
                    add_into(grads, ins[0], &dx);
                }
                if wants(1) {
                    add_into(grads, ins[1], &dgain);
                }
                if wants(2) {
                    add_into(grads, ins[2], &dbias);
                }
            }
            Op::Softmax => {
                let (r, c) = dims(0);
                let y = &node.value;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                add_into(grads, ins[0], &dx);
            }
            Op::CrossEntropyWithLogits { targets } => {
                let (r, c) = dims(0);
                let x = value(0);
                let count = targets.iter().filter(|t| t.is_some()).count() as f64;
                let scale = g[0] / count;
                let mut dx = vec![0.0; r * c];
                for (i, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        let out = &mut dx[i * c..(i + 1) * c];
                        softmax_row(&x[i * c..(i + 1) * c], out);
                        out[t] -= 1.0;
                        out.iter_mut().for_each(|v| *v *= scale);
                    }
                }
                add_into(grads, ins[0], &dx);
            }
            Op::Mse => {
                let a = value(0);
                let b = value(1);
                let k = 2.0 * g[0] / a.len() as f64;
                let da: Vec<f64> = a.iter().zip(b).map(|(p, t)| k * (p - t)).collect();
                if wants(0) {
                    add_into(grads, ins[0], &da);
                }
                if wants(1) {
                    let db: Vec<f64> = da.iter().map(|v| -v).collect();
                    add_into(grads, ins[1], &db);
                }
            }
            Op::L2Norm | Op::L1Norm => {
                let (r, c) = dims(0);
                let x = value(0);
                let l2 = matches!(node.op, Op::L2Norm);
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let norm = node.value[i];
                    for j in 0..c {
                        let xv = x[i * c + j];
                        let local = if l2 {
                            if norm > 0.0 {
                                xv / norm
                            } else {
                                0.0
                            }
                        } else if xv > 0.0 {
                            1.0
                        } else if xv < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        dx[i * c + j] = g[i] * local;
                    }
                }
                add_into(grads, ins[0], &dx);
            }
            Op::ConcatRows => {
                let mut offset = 0;
                for (k, &id) in ins.iter().enumerate() {
                    let len = self.nodes[id].value.len();
                    if wants(k) {
                        add_into(grads, id, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceRows { start, end } => {
                let (_, c) = dims(0);
                let mut dx = vec![0.0; self.nodes[ins[0]].value.len()];
                dx[start * c..end * c].copy_from_slice(g);
                add_into(grads, ins[0], &dx);
            }
            Op::ConcatCols => {
                let (r, total) = node.dims();
                let mut col = 0;
                for (k, &id) in ins.iter().enumerate() {
                    let (_, w) = self.nodes[id].dims();
                    if wants(k) {
                        let mut d = Vec::with_capacity(r * w);
                        for i in 0..r {
                            d.extend_from_slice(&g[i * total + col..i * total + col + w]);
                        }
                        add_into(grads, id, &d);
                    }
                    col += w;
                }
            }
            Op::SliceCols { start, end } => {
                let (r, c) = dims(0);
                let w = end - start;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                add_into(grads, ins[0], &dx);
            }
            Op::Transpose => {
                let (r, c) = dims(0);
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = g[j * r + i];
                    }
                }
                add_into(grads, ins[0], &dx);
            }
            Op::Sum | Op::Mean => {
                let n = self.nodes[ins[0]].value.len();
                let v = if matches!(node.op, Op::Mean) {
                    g[0] / n as f64
                } else {
                    g[0]
                };
                add_into(grads, ins[0], &vec![v; n]);
            }
        }
    }

    /// Text listing of all nodes, one per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(
                out,
                "%{i} = {}({}) shape={:?}{}",
                n.op.name(),
                n.inputs
                    .iter()
                    .map(|j| format!("%{j}"))
                    .collect::<Vec<_>>()
                    .join(", "),
                n.shape,
                if n.needs_grad { " grad" } else { "" }
            );
        }
        out
    }
}

fn add_into(grads: &mut [Option<Vec<f64>>], id: usize, d: &[f64]) {
    match &mut grads[id] {
        Some(buf) => buf.iter_mut().zip(d).for_each(|(b, x)| *b += x),
        slot @ None => *slot = Some(d.to_vec()),
    }
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / libm::sqrt(var + eps))
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>())
}

pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = libm::exp(v - max);
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// `out[n, m] += a[n, k] * b[k, m]`
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let dst = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let src = &b[p * m..(p + 1) * m];
            dst.iter_mut().zip(src).for_each(|(o, s)| *o += av * s);
        }
    }
}

/// `out[n, k] += g[n, m] * b[k, m]^T`
fn matmul_nt(g: &[f64], b: &[f64], out: &mut [f64], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let gr = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let br = &b[p * m..(p + 1) * m];
            out[i * k + p] += gr.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k, m] += a[n, k]^T * g[n, m]`
fn matmul_tn(a: &[f64], g: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let gr = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            out[p * m..(p + 1) * m]
                .iter_mut()
                .zip(gr)
                .for_each(|(o, s)| *o += av * s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let i2 = g.constant(&Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let x = g.constant(&Tensor::matrix(2, 1, vec![3.0, 4.0]));
        let y = g.matmul(i2, x).unwrap();
        assert_eq!(g.value(y), &[3.0, 4.0]);
        assert_eq!(g.shape(y), &[2, 1]);
    }

    #[test]
    fn mse_of_equal_inputs_is_zero() {
        let mut g = Graph::new();
        let a = g.constant(&Tensor::row(vec![1.0, 2.0]));
        let b = g.constant(&Tensor::row(vec![1.0, 2.0]));
        let l = g.mse(a, b).unwrap();
        assert_eq!(g.scalar(l), 0.0);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_classes() {
        let mut g = Graph::new();
        let a = g.constant(&Tensor::row(vec![0.0; 4]));
        let l = g.cross_entropy_with_logits(a, vec![Some(2)]).unwrap();
        assert!((g.scalar(l) - libm::log(4.0)).abs() < 1e-12);
    }

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::scalar(3.0).trainable());
        let y = g.mul(x, x).unwrap();
        let l = g.sum(y).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn dead_branch_gets_zero_grad() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::row(vec![1.0, 2.0]).trainable());
        let y = g.leaf(&Tensor::row(vec![5.0, 6.0]).trainable());
        let _unused = g.scale(y, 2.0).unwrap();
        let l = g.sum(x).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(y).unwrap(), &[0.0, 0.0]);
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.constant(&Tensor::zeros(&[2, 3]));
        let b = g.constant(&Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(AutodiffError::ShapeMismatch { op, shapes }) => {
                assert_eq!(op, "matmul");
                assert_eq!(shapes, vec![vec![2, 3], vec![2, 3]]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::zeros(&[2, 2]).trainable());
        assert!(matches!(
            g.backward(a),
            Err(AutodiffError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn non_finite_forward_rejected() {
        let mut g = Graph::new();
        let a = g.constant(&Tensor::scalar(1e300));
        let b = g.constant(&Tensor::scalar(1e300));
        assert!(matches!(
            g.mul(a, b),
            Err(AutodiffError::NonFinite { op: "mul" })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let a = g.constant(&Tensor::matrix(2, 3, vec![1.0, -2.0, 30.0, 0.5, 0.5, 0.5]));
        let s = g.softmax(a).unwrap();
        for r in g.value(s).chunks(3) {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dump_lists_every_node() {
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::scalar(2.0).trainable());
        let b = g.scale(a, 3.0).unwrap();
        g.sum(b).unwrap();
        let text = g.dump();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("%1 = scale(%0)"));
    }
}
