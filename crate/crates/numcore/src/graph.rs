//! Define-then-run computation graphs with reverse-mode differentiation.
//!
//! Nodes are appended in topological order, so the tape is acyclic by
//! construction. `forward` evaluates every node and caches the values that
//! `backward` needs; a graph instance is single-threaded, but separate graphs
//! share nothing and can be evaluated on different threads.

use crate::error::NumError;
use crate::params::{ParamId, ParamSet};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Declared input shape; `None` leaves a dimension free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputShape {
    pub rows: Option<usize>,
    pub cols: Option<usize>,
}

impl InputShape {
    pub fn exact(rows: usize, cols: usize) -> Self {
        InputShape {
            rows: Some(rows),
            cols: Some(cols),
        }
    }

    pub fn cols(cols: usize) -> Self {
        InputShape {
            rows: None,
            cols: Some(cols),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input { slot: usize, shape: InputShape },
    Param(ParamId),
    Const(Tensor),
    MatMul(NodeId, NodeId),
    /// `a @ b^T`
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `a + b` with `b` a single row broadcast over the rows of `a`.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    Gelu(NodeId),
    Sigmoid(NodeId),
    Square(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    ColSlice {
        x: NodeId,
        start: usize,
        end: usize,
    },
    ConcatCols(Vec<NodeId>),
    RowSlice {
        x: NodeId,
        start: usize,
        end: usize,
    },
    ConcatRows(Vec<NodeId>),
    Sum(NodeId),
    Mean(NodeId),
    /// Mean binary cross-entropy of sigmoid(logits) against targets in [0, 1].
    BceWithLogits { logits: NodeId, targets: NodeId },
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Input { .. } | Param(_) | Const(_) => vec![],
            MatMul(a, b) | MatMulNt(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) => {
                vec![*a, *b]
            }
            Scale(a, _) | Relu(a) | Tanh(a) | Gelu(a) | Sigmoid(a) | Square(a)
            | SoftmaxRows(a) | Sum(a) | Mean(a) => vec![*a],
            LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            ColSlice { x, .. } | RowSlice { x, .. } => vec![*x],
            ConcatCols(xs) | ConcatRows(xs) => xs.clone(),
            BceWithLogits { logits, targets } => vec![*logits, *targets],
        }
    }
}

/// Per-row statistics cached by layer normalization.
#[derive(Debug, Clone)]
struct NormCache {
    xhat: Tensor,
    rstd: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Graph {
    ops: Vec<Op>,
    n_inputs: usize,
    values: Vec<Tensor>,
    norm_cache: Vec<Option<NormCache>>,
    n_params: usize,
    evaluated: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<Tensor>,
    nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for each parameter of the `ParamSet` used in forward; zeros
    /// for parameters unreachable from the output.
    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Tensor> {
        self.params
    }

    /// Gradient with respect to any node; `None` if it was not reached.
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor> {
        self.nodes.get(node.0).and_then(Option::as_ref)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.evaluated = false;
        self.ops.push(op);
        NodeId(self.ops.len() - 1)
    }

    /// Declares the next positional input.
    pub fn input(&mut self, shape: InputShape) -> NodeId {
        let slot = self.n_inputs;
        self.n_inputs += 1;
        self.push(Op::Input { slot, shape })
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.push(Op::Param(id))
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const(value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    /// `a @ b^T`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        self.push(Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> NodeId {
        self.push(Op::LayerNorm { x, gain, bias, eps })
    }

    pub fn col_slice(&mut self, x: NodeId, start: usize, end: usize) -> NodeId {
        self.push(Op::ColSlice { x, start, end })
    }

    pub fn concat_cols(&mut self, xs: Vec<NodeId>) -> NodeId {
        self.push(Op::ConcatCols(xs))
    }

    pub fn row_slice(&mut self, x: NodeId, start: usize, end: usize) -> NodeId {
        self.push(Op::RowSlice { x, start, end })
    }

    pub fn concat_rows(&mut self, xs: Vec<NodeId>) -> NodeId {
        self.push(Op::ConcatRows(xs))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }

    pub fn bce_with_logits(&mut self, logits: NodeId, targets: NodeId) -> NodeId {
        self.push(Op::BceWithLogits { logits, targets })
    }

    /// Cached value of a node after `forward`.
    pub fn value(&self, node: NodeId) -> Option<&Tensor> {
        if self.evaluated {
            self.values.get(node.0)
        } else {
            None
        }
    }

    /// Evaluates every node and returns the value of the last one.
    pub fn forward(&mut self, params: &ParamSet, inputs: &[Tensor]) -> Result<Tensor, NumError> {
        if inputs.len() != self.n_inputs {
            return Err(NumError::InputCount {
                expected: self.n_inputs,
                actual: inputs.len(),
            });
        }
        self.evaluated = false;
        self.values.clear();
        self.norm_cache.clear();
        self.n_params = params.len();
        for i in 0..self.ops.len() {
            let (value, cache) = self.eval_node(i, params, inputs)?;
            if !value.is_finite() {
                return Err(NumError::NonFinite { node: i });
            }
            self.values.push(value);
            self.norm_cache.push(cache);
        }
        self.evaluated = true;
        self.values
            .last()
            .cloned()
            .ok_or_else(|| NumError::Shape {
                node: None,
                detail: "empty graph".into(),
            })
    }

    fn shape_err(node: usize, detail: String) -> NumError {
        NumError::Shape {
            node: Some(node),
            detail,
        }
    }

    fn eval_node(
        &self,
        i: usize,
        params: &ParamSet,
        inputs: &[Tensor],
    ) -> Result<(Tensor, Option<NormCache>), NumError> {
        let v = |n: &NodeId| &self.values[n.0];
        let out = match &self.ops[i] {
            Op::Input { slot, shape } => {
                let t = &inputs[*slot];
                let ok_rows = shape.rows.is_none_or(|r| r == t.rows());
                let ok_cols = shape.cols.is_none_or(|c| c == t.cols());
                if !ok_rows || !ok_cols {
                    return Err(Self::shape_err(
                        i,
                        format!("input {slot} declared {shape:?}, got {:?}", t.shape()),
                    ));
                }
                t.clone()
            }
            Op::Param(id) => params
                .get(*id)
                .ok_or_else(|| Self::shape_err(i, format!("unknown parameter {}", id.index())))?
                .clone(),
            Op::Const(t) => t.clone(),
            Op::MatMul(a, b) => {
                let (a, b) = (v(a), v(b));
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                if b.rows() != k {
                    return Err(Self::shape_err(
                        i,
                        format!("matmul {:?} @ {:?}", a.shape(), b.shape()),
                    ));
                }
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, 1.0, a.data(), false, b.data(), false, 0.0, &mut out);
                Tensor::matrix(m, n, out)?
            }
            Op::MatMulNt(a, b) => {
                let (a, b) = (v(a), v(b));
                let (m, k, n) = (a.rows(), a.cols(), b.rows());
                if b.cols() != k {
                    return Err(Self::shape_err(
                        i,
                        format!("matmul_nt {:?} @ {:?}^T", a.shape(), b.shape()),
                    ));
                }
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, 1.0, a.data(), false, b.data(), true, 0.0, &mut out);
                Tensor::matrix(m, n, out)?
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (x, y) = (v(a), v(b));
                if x.shape() != y.shape() {
                    return Err(Self::shape_err(
                        i,
                        format!("elementwise {:?} vs {:?}", x.shape(), y.shape()),
                    ));
                }
                let f: fn(f64, f64) -> f64 = match &self.ops[i] {
                    Op::Add(..) => |p, q| p + q,
                    Op::Sub(..) => |p, q| p - q,
                    _ => |p, q| p * q,
                };
                let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            Op::AddRow(a, b) => {
                let (x, r) = (v(a), v(b));
                if r.len() != x.cols() {
                    return Err(Self::shape_err(
                        i,
                        format!("add_row {:?} + {:?}", x.shape(), r.shape()),
                    ));
                }
                let mut out = x.clone();
                let c = x.cols();
                for (j, val) in out.data_mut().iter_mut().enumerate() {
                    *val += r.data()[j % c];
                }
                out
            }
            Op::Scale(a, f) => v(a).map(|x| x * f),
            Op::Relu(a) => v(a).map(|x| x.max(0.0)),
            Op::Tanh(a) => v(a).map(f64::tanh),
            Op::Gelu(a) => v(a).map(gelu),
            Op::Sigmoid(a) => v(a).map(sigmoid),
            Op::Square(a) => v(a).map(|x| x * x),
            Op::SoftmaxRows(a) => {
                let mut out = v(a).clone();
                let rows = out.rows();
                for r in 0..rows {
                    softmax_row(out.row_mut(r));
                }
                out
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (x, g, b) = (v(x), v(gain), v(bias));
                let c = x.cols();
                if g.len() != c || b.len() != c {
                    return Err(Self::shape_err(
                        i,
                        format!("layer_norm {:?} gain {:?} bias {:?}", x.shape(), g.shape(), b.shape()),
                    ));
                }
                let mut xhat = x.clone();
                let mut out = x.clone();
                let mut rstd = Vec::with_capacity(x.rows());
                for r in 0..x.rows() {
                    let row = x.row(r);
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let s = 1.0 / (var + eps).sqrt();
                    rstd.push(s);
                    let xh = xhat.row_mut(r);
                    for j in 0..c {
                        xh[j] = (row[j] - mean) * s;
                    }
                    let o = out.row_mut(r);
                    for j in 0..c {
                        o[j] = xh[j] * g.data()[j] + b.data()[j];
                    }
                }
                return Ok((out, Some(NormCache { xhat, rstd })));
            }
            Op::ColSlice { x, start, end } => {
                let x = v(x);
                if start > end || *end > x.cols() {
                    return Err(Self::shape_err(
                        i,
                        format!("col_slice {start}..{end} of {:?}", x.shape()),
                    ));
                }
                let w = end - start;
                let mut data = Vec::with_capacity(x.rows() * w);
                for r in 0..x.rows() {
                    data.extend_from_slice(&x.row(r)[*start..*end]);
                }
                Tensor::matrix(x.rows(), w, data)?
            }
            Op::ConcatCols(xs) => {
                let rows = v(&xs[0]).rows();
                if xs.iter().any(|n| v(n).rows() != rows) {
                    return Err(Self::shape_err(i, "concat_cols row mismatch".into()));
                }
                let total: usize = xs.iter().map(|n| v(n).cols()).sum();
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for n in xs {
                        data.extend_from_slice(v(n).row(r));
                    }
                }
                Tensor::matrix(rows, total, data)?
            }
            Op::RowSlice { x, start, end } => {
                let x = v(x);
                if start > end || *end > x.rows() {
                    return Err(Self::shape_err(
                        i,
                        format!("row_slice {start}..{end} of {:?}", x.shape()),
                    ));
                }
                x.slice_rows(*start, *end)
            }
            Op::ConcatRows(xs) => {
                let cols = v(&xs[0]).cols();
                if xs.iter().any(|n| v(n).cols() != cols) {
                    return Err(Self::shape_err(i, "concat_rows column mismatch".into()));
                }
                let rows: usize = xs.iter().map(|n| v(n).rows()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for n in xs {
                    data.extend_from_slice(v(n).data());
                }
                Tensor::matrix(rows, cols, data)?
            }
            Op::Sum(a) => Tensor::scalar(v(a).sum()),
            Op::Mean(a) => {
                let t = v(a);
                Tensor::scalar(t.sum() / t.len().max(1) as f64)
            }
            Op::BceWithLogits { logits, targets } => {
                let (z, t) = (v(logits), v(targets));
                if z.len() != t.len() {
                    return Err(Self::shape_err(
                        i,
                        format!("bce logits {:?} targets {:?}", z.shape(), t.shape()),
                    ));
                }
                let n = z.len().max(1) as f64;
                let loss: f64 = z
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&z, &y)| softplus(z) - z * y)
                    .sum();
                Tensor::scalar(loss / n)
            }
        };
        Ok((out, None))
    }

    /// Propagates `upstream` (the gradient of some scalar with respect to the
    /// output node) back through the tape.
    pub fn backward(&self, upstream: &Tensor) -> Result<Gradients, NumError> {
        if !self.evaluated {
            return Err(NumError::BackwardBeforeForward);
        }
        let last = self.ops.len() - 1;
        let out_shape = self.values[last].shape();
        if upstream.shape() != out_shape {
            return Err(NumError::UpstreamShape {
                expected: out_shape.to_vec(),
                actual: upstream.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.ops.len()];
        grads[last] = Some(upstream.clone());

        for i in (0..self.ops.len()).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }

        let mut params: Vec<Tensor> = Vec::with_capacity(self.n_params);
        let mut param_grads: Vec<Option<Tensor>> = vec![None; self.n_params];
        for (i, op) in self.ops.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (op, &grads[i]) {
                match &mut param_grads[id.index()] {
                    Some(acc) => acc.add_assign(g),
                    slot => *slot = Some(g.clone()),
                }
            }
        }
        for (k, g) in param_grads.into_iter().enumerate() {
            params.push(g.unwrap_or_else(|| Tensor::zeros(self.param_shape(k))));
        }
        // Constants are treated as having zero gradient.
        for (i, op) in self.ops.iter().enumerate() {
            if matches!(op, Op::Const(_)) {
                grads[i] = Some(Tensor::zeros(self.values[i].shape()));
            }
        }
        Ok(Gradients {
            params,
            nodes: grads,
        })
    }

    fn param_shape(&self, k: usize) -> &[usize] {
        self.ops
            .iter()
            .enumerate()
            .find_map(|(i, op)| match op {
                Op::Param(id) if id.index() == k => Some(self.values[i].shape()),
                _ => None,
            })
            .unwrap_or(&[0, 0])
    }

    fn backprop_node(&self, i: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |n: &NodeId| &self.values[n.0];
        let acc = |grads: &mut [Option<Tensor>], n: NodeId, g: Tensor| match &mut grads[n.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        };
        match &self.ops[i] {
            Op::Input { .. } | Op::Param(_) | Op::Const(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, 1.0, dy.data(), false, bv.data(), true, 0.0, &mut da);
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, 1.0, av.data(), true, dy.data(), false, 0.0, &mut db);
                acc(grads, *a, Tensor::new(av.shape().to_vec(), da).unwrap());
                acc(grads, *b, Tensor::new(bv.shape().to_vec(), db).unwrap());
            }
            Op::MatMulNt(a, b) => {
                // out (m x n) = A (m x k) B^T, B is n x k
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, 1.0, dy.data(), false, bv.data(), false, 0.0, &mut da);
                let mut db = vec![0.0; n * k];
                gemm(n, m, k, 1.0, dy.data(), true, av.data(), false, 0.0, &mut db);
                acc(grads, *a, Tensor::new(av.shape().to_vec(), da).unwrap());
                acc(grads, *b, Tensor::new(bv.shape().to_vec(), db).unwrap());
            }
            Op::Add(a, b) => {
                acc(grads, *a, dy.clone());
                acc(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, dy.clone());
                acc(grads, *b, dy.map(|g| -g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let da: Vec<f64> = dy.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = dy.data().iter().zip(av.data()).map(|(g, x)| g * x).collect();
                acc(grads, *a, Tensor::new(av.shape().to_vec(), da).unwrap());
                acc(grads, *b, Tensor::new(bv.shape().to_vec(), db).unwrap());
            }
            Op::AddRow(a, b) => {
                let bv = val(b);
                let c = bv.len();
                let mut db = vec![0.0; c];
                for (j, g) in dy.data().iter().enumerate() {
                    db[j % c] += g;
                }
                acc(grads, *a, dy.clone());
                acc(grads, *b, Tensor::new(bv.shape().to_vec(), db).unwrap());
            }
            Op::Scale(a, f) => acc(grads, *a, dy.map(|g| g * f)),
            Op::Relu(a) => {
                let x = val(a);
                let d = dy.data().iter().zip(x.data()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 });
                acc(grads, *a, Tensor::new(x.shape().to_vec(), d.collect()).unwrap());
            }
            Op::Tanh(a) => {
                let y = &self.values[i];
                let d = dy.data().iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y));
                acc(grads, *a, Tensor::new(y.shape().to_vec(), d.collect()).unwrap());
            }
            Op::Gelu(a) => {
                let x = val(a);
                let d = dy.data().iter().zip(x.data()).map(|(g, &x)| g * gelu_grad(x));
                acc(grads, *a, Tensor::new(x.shape().to_vec(), d.collect()).unwrap());
            }
            Op::Sigmoid(a) => {
                let y = &self.values[i];
                let d = dy.data().iter().zip(y.data()).map(|(g, y)| g * y * (1.0 - y));
                acc(grads, *a, Tensor::new(y.shape().to_vec(), d.collect()).unwrap());
            }
            Op::Square(a) => {
                let x = val(a);
                let d = dy.data().iter().zip(x.data()).map(|(g, x)| 2.0 * g * x);
                acc(grads, *a, Tensor::new(x.shape().to_vec(), d.collect()).unwrap());
            }
            Op::SoftmaxRows(a) => {
                let y = &self.values[i];
                let mut dx = y.clone();
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), dy.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    let out = dx.row_mut(r);
                    for j in 0..out.len() {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(grads, *a, dx);
            }
            Op::LayerNorm { x, gain, bias, .. } => {
                let cache = self.norm_cache[i].as_ref().expect("layer norm cache");
                let g = val(gain);
                let c = g.len();
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                let mut dx = cache.xhat.clone();
                for r in 0..dy.rows() {
                    let (gr, xh) = (dy.row(r), cache.xhat.row(r));
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..c {
                        dgain[j] += gr[j] * xh[j];
                        dbias[j] += gr[j];
                        let dxh = gr[j] * g.data()[j];
                        mean_d += dxh;
                        mean_dx += dxh * xh[j];
                    }
                    mean_d /= c as f64;
                    mean_dx /= c as f64;
                    let s = cache.rstd[r];
                    let out = dx.row_mut(r);
                    for j in 0..c {
                        let dxh = gr[j] * g.data()[j];
                        out[j] = s * (dxh - mean_d - xh[j] * mean_dx);
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *gain, Tensor::new(g.shape().to_vec(), dgain).unwrap());
                acc(grads, *bias, Tensor::new(val(bias).shape().to_vec(), dbias).unwrap());
            }
            Op::ColSlice { x, start, end } => {
                let xv = val(x);
                let mut dx = Tensor::zeros(xv.shape());
                for r in 0..xv.rows() {
                    dx.row_mut(r)[*start..*end].copy_from_slice(dy.row(r));
                }
                acc(grads, *x, dx);
            }
            Op::ConcatCols(xs) => {
                let mut offset = 0;
                for n in xs {
                    let w = val(n).cols();
                    let mut part = Vec::with_capacity(dy.rows() * w);
                    for r in 0..dy.rows() {
                        part.extend_from_slice(&dy.row(r)[offset..offset + w]);
                    }
                    acc(grads, *n, Tensor::new(val(n).shape().to_vec(), part).unwrap());
                    offset += w;
                }
            }
            Op::RowSlice { x, start, .. } => {
                let xv = val(x);
                let mut dx = Tensor::zeros(xv.shape());
                let c = xv.cols();
                dx.data_mut()[start * c..start * c + dy.len()].copy_from_slice(dy.data());
                acc(grads, *x, dx);
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for n in xs {
                    let len = val(n).len();
                    let part = dy.data()[offset..offset + len].to_vec();
                    acc(grads, *n, Tensor::new(val(n).shape().to_vec(), part).unwrap());
                    offset += len;
                }
            }
            Op::Sum(a) => {
                let g = dy.data()[0];
                acc(grads, *a, Tensor::filled(val(a).shape(), g));
            }
            Op::Mean(a) => {
                let t = val(a);
                let g = dy.data()[0] / t.len().max(1) as f64;
                acc(grads, *a, Tensor::filled(t.shape(), g));
            }
            Op::BceWithLogits { logits, targets } => {
                let (z, t) = (val(logits), val(targets));
                let scale = dy.data()[0] / z.len().max(1) as f64;
                let d = z
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&z, &y)| (sigmoid(z) - y) * scale)
                    .collect();
                acc(grads, *logits, Tensor::new(z.shape().to_vec(), d).unwrap());
                let dt = z.data().iter().map(|&z| -z * scale).collect();
                acc(grads, *targets, Tensor::new(t.shape().to_vec(), dt).unwrap());
            }
        }
    }

    /// Parents of a node, for inspection and tests.
    pub fn parents(&self, node: NodeId) -> Vec<NodeId> {
        self.ops[node.0].parents()
    }
}
