//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! A [`Graph`] is built fresh for every loss evaluation. Nodes are appended in
//! evaluation order, so the node list is already topologically sorted and
//! [`Graph::backward`] is a single reverse sweep.

mod gradcheck;

pub use gradcheck::{finite_difference_check, finite_difference_check_floored, GradCheck};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

/// Backward rule of a user-supplied elementwise-or-not unary op:
/// `(input, output, grad_output, grad_input_accumulator)`.
pub type CustomBackward = fn(&Tensor, &Tensor, &[f64], &mut [f64]);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Min(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    AddColumn(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    SoftmaxColumns(NodeId),
    Conv1d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        window: usize,
    },
    Embed {
        table: NodeId,
        ids: Vec<usize>,
    },
    ConcatRows(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    StackCols(Vec<NodeId>),
    SliceRows {
        input: NodeId,
        start: usize,
    },
    Column {
        input: NodeId,
        col: usize,
    },
    Gather {
        input: NodeId,
        indices: Vec<usize>,
    },
    Sum(NodeId),
    Pick {
        input: NodeId,
        index: usize,
    },
    CopyMerge {
        gen: NodeId,
        copy: NodeId,
        gate: NodeId,
        source: Vec<usize>,
    },
    SoftmaxNll {
        logits: NodeId,
        target: usize,
    },
    CopyNll {
        logits: NodeId,
        gate_logit: NodeId,
        copy_scores: NodeId,
        source: Vec<usize>,
        target: usize,
    },
    Custom {
        input: NodeId,
        backward: CustomBackward,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// The tape: an append-only list of nodes.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: Vec<(ParamId, NodeId)>,
}

/// Result of a backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    param_nodes: Vec<(ParamId, NodeId)>,
}

impl Gradients {
    pub fn get(&self, node: NodeId) -> Option<&[f64]> {
        self.grads[node.0].as_deref()
    }

    /// Gradients of every parameter that took part in the graph.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, Option<&[f64]>)> {
        self.param_nodes
            .iter()
            .map(move |&(p, n)| (p, self.grads[n.0].as_deref()))
    }

    /// Adds `scale · dLoss/dParam` into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore, scale: f64) {
        for (pid, grad) in self.params() {
            if let Some(g) = grad {
                store.accumulate_grad(pid, g, scale);
            }
        }
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        id
    }

    fn unary_grad(&self, a: NodeId) -> bool {
        self.nodes[a.0].needs_grad
    }

    fn binary_grad(&self, a: NodeId, b: NodeId) -> bool {
        self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    /// Leaf node for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&(_, node)) = self.param_nodes.iter().find(|(p, _)| *p == id) {
            return node;
        }
        let node = self.push(store.value(id).clone(), Op::Param, true);
        self.param_nodes.push((id, node));
        node
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        let g = self.binary_grad(a, b);
        Ok(self.push(value, Op::MatMul(a, b), g))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transpose();
        let g = self.unary_grad(a);
        self.push(value, Op::Transpose(a), g)
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(ta.shape(), data)?;
        let g = self.binary_grad(a, b);
        Ok(self.push(value, op, g))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum. Ties send the gradient to `a`.
    pub fn min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("min", a, b, f64::min, Op::Min(a, b))
    }

    fn map(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(ta.shape(), data).expect("map keeps shape");
        let g = self.unary_grad(a);
        self.push(value, op, g)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.map(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, math::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, libm::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Adds the column vector `v` (length r) to every column of `m` (r×c).
    pub fn add_column(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tv.cols() != 1 || tv.rows() != tm.rows() {
            return Err(mismatch("add_column", tm, tv));
        }
        let c = tm.cols();
        let mut data = tm.data().to_vec();
        for (i, row) in data.chunks_mut(c).enumerate() {
            let b = tv.data()[i];
            row.iter_mut().for_each(|x| *x += b);
        }
        let value = Tensor::new(tm.shape(), data)?;
        let g = self.binary_grad(m, v);
        Ok(self.push(value, Op::AddColumn(m, v), g))
    }

    /// Column-wise softmax with per-column max subtraction.
    pub fn softmax_columns(&mut self, a: NodeId) -> NodeId {
        let value = softmax_columns(self.value(a));
        let g = self.unary_grad(a);
        self.push(value, Op::SoftmaxColumns(a), g)
    }

    /// One linear map per window of `window` consecutive columns:
    /// `out[:, j] = kernel · vec(input[:, j..j+window]) + bias`, where `vec`
    /// stacks the window's columns.
    pub fn conv1d_windows(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        window: usize,
    ) -> Result<NodeId> {
        let (ti, tk, tb) = (self.value(input), self.value(kernel), self.value(bias));
        let (rows, n) = (ti.rows(), ti.cols());
        if window == 0 || n < window {
            return Err(Error::InputTooShort { len: n, window });
        }
        let out_rows = tk.rows();
        if tk.cols() != rows * window {
            return Err(mismatch("conv1d_windows", ti, tk));
        }
        if tb.len() != out_rows {
            return Err(mismatch("conv1d_windows", tk, tb));
        }
        let width = n - window + 1;
        let patches = im2col(ti.data(), rows, n, window);
        // out (out_rows × width) = kernel (out_rows × rows·window) · patches (rows·window × width)
        let mut out = vec![0.0; out_rows * width];
        matmul_into(tk.data(), &patches, &mut out, out_rows, rows * window, width);
        for (o, row) in out.chunks_mut(width).enumerate() {
            let b = tb.data()[o];
            row.iter_mut().for_each(|x| *x += b);
        }
        let value = Tensor::matrix(out_rows, width, out)?;
        let g = self.nodes[input.0].needs_grad
            || self.nodes[kernel.0].needs_grad
            || self.nodes[bias.0].needs_grad;
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                kernel,
                bias,
                window,
            },
            g,
        ))
    }

    /// Looks up rows of `table` (|V|×e); column i of the result is row `ids[i]`.
    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tt = self.value(table);
        let (size, dim) = (tt.rows(), tt.cols());
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= size) {
            return Err(Error::TokenOutOfRange { id: bad, size });
        }
        let n = ids.len();
        let mut out = vec![0.0; dim * n];
        for (i, &id) in ids.iter().enumerate() {
            for r in 0..dim {
                out[r * n + i] = tt.data()[id * dim + r];
            }
        }
        let value = Tensor::matrix(dim, n, out)?;
        let g = self.unary_grad(table);
        Ok(self.push(
            value,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            g,
        ))
    }

    /// Stacks `a` on top of `b` (equal column counts).
    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(mismatch("concat_rows", ta, tb));
        }
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        let rows = ta.rows() + tb.rows();
        let value = if ta.shape().len() == 1 && tb.shape().len() == 1 {
            Tensor::vector(data)
        } else {
            Tensor::matrix(rows, ta.cols(), data)?
        };
        let g = self.binary_grad(a, b);
        Ok(self.push(value, Op::ConcatRows(a, b), g))
    }

    /// Places the columns of `b` after the columns of `a` (equal row counts).
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(mismatch("concat_cols", ta, tb));
        }
        let (ca, cb) = (ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&tb.data()[r * cb..(r + 1) * cb]);
        }
        let value = Tensor::matrix(ta.rows(), ca + cb, data)?;
        let g = self.binary_grad(a, b);
        Ok(self.push(value, Op::ConcatCols(a, b), g))
    }

    /// Matrix whose column j is the vector `columns[j]` (all of equal length).
    pub fn stack_columns(&mut self, columns: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = columns.first() else {
            return Err(Error::EmptyInput);
        };
        let rows = self.value(first).len();
        let n = columns.len();
        let mut data = vec![0.0; rows * n];
        let mut g = false;
        for (j, &c) in columns.iter().enumerate() {
            let tc = self.value(c);
            if tc.len() != rows {
                return Err(mismatch("stack_columns", self.value(first), tc));
            }
            for (r, v) in tc.data().iter().enumerate() {
                data[r * n + j] = *v;
            }
            g |= self.nodes[c.0].needs_grad;
        }
        let value = Tensor::matrix(rows, n, data)?;
        Ok(self.push(value, Op::StackCols(columns.to_vec()), g))
    }

    /// Rows `start..start+len` of a vector or matrix.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let ta = self.value(a);
        if len == 0 || start + len > ta.rows() {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                left: ta.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let c = ta.cols();
        let data = ta.data()[start * c..(start + len) * c].to_vec();
        let value = if ta.shape().len() == 1 {
            Tensor::vector(data)
        } else {
            Tensor::matrix(len, c, data)?
        };
        let g = self.unary_grad(a);
        Ok(self.push(value, Op::SliceRows { input: a, start }, g))
    }

    /// Column `col` of a matrix, as a vector.
    pub fn column(&mut self, a: NodeId, col: usize) -> Result<NodeId> {
        let ta = self.value(a);
        if col >= ta.cols() {
            return Err(Error::ShapeMismatch {
                op: "column",
                left: ta.shape().to_vec(),
                right: vec![col],
            });
        }
        let value = Tensor::vector(ta.column(col));
        let g = self.unary_grad(a);
        Ok(self.push(value, Op::Column { input: a, col }, g))
    }

    /// Selects flat elements `indices` into a new vector.
    pub fn gather(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let ta = self.value(a);
        if indices.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= ta.len()) {
            return Err(Error::ShapeMismatch {
                op: "gather",
                left: ta.shape().to_vec(),
                right: vec![bad],
            });
        }
        let value = Tensor::vector(indices.iter().map(|&i| ta.data()[i]).collect());
        let g = self.unary_grad(a);
        Ok(self.push(
            value,
            Op::Gather {
                input: a,
                indices: indices.to_vec(),
            },
            g,
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).sum());
        let g = self.unary_grad(a);
        self.push(value, Op::Sum(a), g)
    }

    /// Sums a list of same-shape nodes; `None` for an empty list.
    pub fn add_all(&mut self, nodes: &[NodeId]) -> Result<Option<NodeId>> {
        let mut iter = nodes.iter();
        let Some(&first) = iter.next() else {
            return Ok(None);
        };
        let mut acc = first;
        for &n in iter {
            acc = self.add(acc, n)?;
        }
        Ok(Some(acc))
    }

    /// Flat element `index` as a scalar.
    pub fn pick(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let ta = self.value(a);
        if index >= ta.len() {
            return Err(Error::ShapeMismatch {
                op: "pick",
                left: ta.shape().to_vec(),
                right: vec![index],
            });
        }
        let value = Tensor::scalar(ta.data()[index]);
        let g = self.unary_grad(a);
        Ok(self.push(value, Op::Pick { input: a, index }, g))
    }

    /// Mixes a generation distribution with a copy distribution over source
    /// positions: `y[w] = gate·gen[w] + (1−gate)·Σ_{i: source[i]=w} copy[i]`.
    ///
    /// The output has length `out_len ≥ |gen|`; ids past `|gen|` only receive
    /// copy mass (out-of-vocabulary source words).
    pub fn copy_merge(
        &mut self,
        gen: NodeId,
        copy: NodeId,
        gate: NodeId,
        source: &[usize],
        out_len: usize,
    ) -> Result<NodeId> {
        let (tg, tc, tgate) = (self.value(gen), self.value(copy), self.value(gate));
        if tc.len() != source.len() || tgate.len() != 1 || out_len < tg.len() {
            return Err(mismatch("copy_merge", tg, tc));
        }
        if let Some(&bad) = source.iter().find(|&&w| w >= out_len) {
            return Err(Error::TokenOutOfRange {
                id: bad,
                size: out_len,
            });
        }
        let gate_v = tgate.item();
        let mut out = vec![0.0; out_len];
        for (o, &p) in out.iter_mut().zip(tg.data()) {
            *o = gate_v * p;
        }
        for (&w, &c) in source.iter().zip(tc.data()) {
            out[w] += (1.0 - gate_v) * c;
        }
        let g = self.nodes[gen.0].needs_grad
            || self.nodes[copy.0].needs_grad
            || self.nodes[gate.0].needs_grad;
        Ok(self.push(
            Tensor::vector(out),
            Op::CopyMerge {
                gen,
                copy,
                gate,
                source: source.to_vec(),
            },
            g,
        ))
    }

    /// `−log softmax(logits)[target]`, computed with log-sum-exp.
    pub fn softmax_nll(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let tl = self.value(logits);
        if target >= tl.len() {
            return Err(Error::TokenOutOfRange {
                id: target,
                size: tl.len(),
            });
        }
        let lse = math::logsumexp(tl.data());
        let value = Tensor::scalar(lse - tl.data()[target]);
        let g = self.unary_grad(logits);
        Ok(self.push(value, Op::SoftmaxNll { logits, target }, g))
    }

    /// `−log y[target]` for the copy mixture
    /// `y = σ(g)·softmax(logits) + (1−σ(g))·Σ_{source[i]=·} softmax(copy_scores)[i]`,
    /// evaluated entirely in log space so it is finite whenever the inputs are.
    pub fn copy_nll(
        &mut self,
        logits: NodeId,
        gate_logit: NodeId,
        copy_scores: NodeId,
        source: &[usize],
        target: usize,
    ) -> Result<NodeId> {
        let (tl, tg, ts) = (
            self.value(logits),
            self.value(gate_logit),
            self.value(copy_scores),
        );
        if ts.len() != source.len() || tg.len() != 1 {
            return Err(mismatch("copy_nll", tl, ts));
        }
        let parts = CopyNllParts::compute(tl.data(), tg.item(), ts.data(), source, target);
        let value = Tensor::scalar(-parts.log_y);
        let g = self.nodes[logits.0].needs_grad
            || self.nodes[gate_logit.0].needs_grad
            || self.nodes[copy_scores.0].needs_grad;
        Ok(self.push(
            value,
            Op::CopyNll {
                logits,
                gate_logit,
                copy_scores,
                source: source.to_vec(),
                target,
            },
            g,
        ))
    }

    /// A unary op with caller-provided forward value and backward rule.
    pub fn custom(&mut self, input: NodeId, output: Tensor, backward: CustomBackward) -> NodeId {
        let g = self.unary_grad(input);
        self.push(output, Op::Custom { input, backward }, g)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            param_nodes: self.param_nodes.clone(),
        })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], id: NodeId) -> Option<&'a mut Vec<f64>> {
        let node = &self.nodes[id.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[id.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (p, q, r) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    // dA = G · Bᵀ
                    matmul_nt_into(g, tb.data(), ga, p, r, q);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    // dB = Aᵀ · G
                    matmul_tn_into(ta.data(), g, gb, p, q, r);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (out.rows(), out.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] += g[i * c + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).clone(), self.value(*b).clone());
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *d += s * y;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((d, s), x) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *d += s * x;
                    }
                }
            }
            Op::Min(a, b) => {
                let mask: Vec<bool> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(x, y)| x <= y)
                    .collect();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, s), &m) in ga.iter_mut().zip(g).zip(&mask) {
                        if m {
                            *d += s;
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((d, s), &m) in gb.iter_mut().zip(g).zip(&mask) {
                        if !m {
                            *d += s;
                        }
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, s)| *d += f * s);
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
            }
            Op::AddColumn(m, v) => {
                let c = out.cols();
                if let Some(gm) = self.acc(grads, *m) {
                    add_into(gm, g);
                }
                if let Some(gv) = self.acc(grads, *v) {
                    for (i, row) in g.chunks(c).enumerate() {
                        gv[i] += row.iter().sum::<f64>();
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(out.data()) {
                        *d += s * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(out.data()) {
                        *d += s * (1.0 - y * y);
                    }
                }
            }
            Op::Relu(a) => {
                let input = self.value(*a).data().to_vec();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, s), x) in ga.iter_mut().zip(g).zip(&input) {
                        if *x > 0.0 {
                            *d += s;
                        }
                    }
                }
            }
            Op::SoftmaxColumns(a) => {
                let (r, c) = (out.rows(), out.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    for j in 0..c {
                        let dot: f64 = (0..r).map(|i| g[i * c + j] * out.data()[i * c + j]).sum();
                        for i in 0..r {
                            let y = out.data()[i * c + j];
                            ga[i * c + j] += y * (g[i * c + j] - dot);
                        }
                    }
                }
            }
            Op::Conv1d {
                input,
                kernel,
                bias,
                window,
            } => {
                let ti = self.value(*input);
                let tk = self.value(*kernel);
                let (rows, n) = (ti.rows(), ti.cols());
                let (out_rows, width) = (out.rows(), out.cols());
                let depth = rows * window;
                if self.nodes[kernel.0].needs_grad {
                    let patches = im2col(ti.data(), rows, n, *window);
                    let gk = self.acc(grads, *kernel).expect("kernel needs grad");
                    // dK = G · patchesᵀ
                    matmul_nt_into(g, &patches, gk, out_rows, width, depth);
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for (o, row) in g.chunks(width).enumerate() {
                        gb[o] += row.iter().sum::<f64>();
                    }
                }
                if self.nodes[input.0].needs_grad {
                    // dPatches = Kᵀ · G, then fold back onto the input columns.
                    let mut dp = vec![0.0; depth * width];
                    matmul_tn_into(tk.data(), g, &mut dp, out_rows, depth, width);
                    let gi = self.acc(grads, *input).expect("input needs grad");
                    for j in 0..width {
                        for c in 0..*window {
                            for r in 0..rows {
                                gi[r * n + j + c] += dp[(c * rows + r) * width + j];
                            }
                        }
                    }
                }
            }
            Op::Embed { table, ids } => {
                let n = ids.len();
                let dim = out.rows();
                if let Some(gt) = self.acc(grads, *table) {
                    for (i, &id) in ids.iter().enumerate() {
                        for r in 0..dim {
                            gt[id * dim + r] += g[r * n + i];
                        }
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let la = self.value(*a).len();
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, &g[..la]);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    add_into(gb, &g[la..]);
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let rows = out.rows();
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..rows {
                        add_into(
                            &mut ga[r * ca..(r + 1) * ca],
                            &g[r * (ca + cb)..r * (ca + cb) + ca],
                        );
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for r in 0..rows {
                        add_into(
                            &mut gb[r * cb..(r + 1) * cb],
                            &g[r * (ca + cb) + ca..(r + 1) * (ca + cb)],
                        );
                    }
                }
            }
            Op::StackCols(columns) => {
                let n = columns.len();
                for (j, &c) in columns.iter().enumerate() {
                    if let Some(gc) = self.acc(grads, c) {
                        for (r, d) in gc.iter_mut().enumerate() {
                            *d += g[r * n + j];
                        }
                    }
                }
            }
            Op::SliceRows { input, start } => {
                let c = out.cols();
                if let Some(ga) = self.acc(grads, *input) {
                    add_into(&mut ga[start * c..start * c + g.len()], g);
                }
            }
            Op::Column { input, col } => {
                let c = self.value(*input).cols();
                if let Some(ga) = self.acc(grads, *input) {
                    for (r, s) in g.iter().enumerate() {
                        ga[r * c + col] += s;
                    }
                }
            }
            Op::Gather { input, indices } => {
                if let Some(ga) = self.acc(grads, *input) {
                    for (&i, s) in indices.iter().zip(g) {
                        ga[i] += s;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Pick { input, index } => {
                if let Some(ga) = self.acc(grads, *input) {
                    ga[*index] += g[0];
                }
            }
            Op::CopyMerge {
                gen,
                copy,
                gate,
                source,
            } => {
                let gate_v = self.value(*gate).item();
                let gen_v = self.value(*gen).data().to_vec();
                let copy_v = self.value(*copy).data().to_vec();
                if let Some(gg) = self.acc(grads, *gen) {
                    for (d, s) in gg.iter_mut().zip(g) {
                        *d += gate_v * s;
                    }
                }
                if let Some(gc) = self.acc(grads, *copy) {
                    for (d, &w) in gc.iter_mut().zip(source) {
                        *d += (1.0 - gate_v) * g[w];
                    }
                }
                if let Some(ggate) = self.acc(grads, *gate) {
                    let from_gen: f64 = gen_v.iter().zip(g).map(|(p, s)| p * s).sum();
                    let from_copy: f64 = source.iter().zip(&copy_v).map(|(&w, c)| c * g[w]).sum();
                    ggate[0] += from_gen - from_copy;
                }
            }
            Op::SoftmaxNll { logits, target } => {
                let tl = self.value(*logits);
                let p = softmax_vec(tl.data());
                if let Some(gl) = self.acc(grads, *logits) {
                    for (j, (d, pj)) in gl.iter_mut().zip(&p).enumerate() {
                        let delta = if j == *target { 1.0 } else { 0.0 };
                        *d += g[0] * (pj - delta);
                    }
                }
            }
            Op::CopyNll {
                logits,
                gate_logit,
                copy_scores,
                source,
                target,
            } => {
                let parts = CopyNllParts::compute(
                    self.value(*logits).data(),
                    self.value(*gate_logit).item(),
                    self.value(*copy_scores).data(),
                    source,
                    *target,
                );
                let upstream = g[0];
                // With A = σ·p_s, B = (1−σ)·c_s, y = A + B and L = −log y.
                let a_frac = parts.a_over_y;
                let b_frac = parts.b_over_y;
                if let Some(gl) = self.acc(grads, *logits) {
                    for (j, (d, pj)) in gl.iter_mut().zip(&parts.gen).enumerate() {
                        let delta = if j == *target { 1.0 } else { 0.0 };
                        *d -= upstream * a_frac * (delta - pj);
                    }
                }
                if let Some(gg) = self.acc(grads, *gate_logit) {
                    // dy/dg = σ(1−σ)(p_s − c_s) ⇒ dL/dg = −[(1−σ)·A/y − σ·B/y]
                    gg[0] -= upstream * ((1.0 - parts.gate) * a_frac - parts.gate * b_frac);
                }
                if let Some(gs) = self.acc(grads, *copy_scores) {
                    for (i, d) in gs.iter_mut().enumerate() {
                        let hit = if source[i] == *target { 1.0 } else { 0.0 };
                        // dB/ds_i = (1−σ)·q_i·(hit_i − c_s)
                        *d -= upstream * parts.one_minus_gate_q_over_y[i] * (hit - parts.copy_at_target);
                    }
                }
            }
            Op::Custom { input, backward } => {
                let tin = self.value(*input).clone();
                if let Some(ga) = self.acc(grads, *input) {
                    backward(&tin, out, g, ga);
                }
            }
        }
    }
}

/// Cached intermediate quantities of the fused copy NLL.
struct CopyNllParts {
    log_y: f64,
    gate: f64,
    gen: Vec<f64>,
    copy_at_target: f64,
    a_over_y: f64,
    b_over_y: f64,
    one_minus_gate_q_over_y: Vec<f64>,
}

impl CopyNllParts {
    fn compute(logits: &[f64], gate_logit: f64, scores: &[f64], source: &[usize], target: usize) -> Self {
        let log_gate = math::log_sigmoid(gate_logit);
        let log_one_minus = math::log_sigmoid(-gate_logit);
        let gate = math::sigmoid(gate_logit);

        let lse_gen = math::logsumexp(logits);
        let log_p_target = if target < logits.len() {
            logits[target] - lse_gen
        } else {
            f64::NEG_INFINITY
        };
        let gen = logits.iter().map(|l| libm::exp(l - lse_gen)).collect();

        let lse_copy = if scores.is_empty() {
            0.0
        } else {
            math::logsumexp(scores)
        };
        let log_q: Vec<f64> = scores.iter().map(|s| s - lse_copy).collect();
        let hits: Vec<f64> = source
            .iter()
            .zip(&log_q)
            .filter(|(&w, _)| w == target)
            .map(|(_, &lq)| lq)
            .collect();
        let log_c_target = if hits.is_empty() {
            f64::NEG_INFINITY
        } else {
            math::logsumexp(&hits)
        };

        let log_a = log_gate + log_p_target;
        let log_b = log_one_minus + log_c_target;
        let log_y = math::logaddexp(log_a, log_b);
        let one_minus_gate_q_over_y = log_q
            .iter()
            .map(|lq| libm::exp(log_one_minus + lq - log_y))
            .collect();
        CopyNllParts {
            log_y,
            gate,
            gen,
            copy_at_target: libm::exp(log_c_target),
            a_over_y: libm::exp(log_a - log_y),
            b_over_y: libm::exp(log_b - log_y),
            one_minus_gate_q_over_y,
        }
    }
}

/// Window patches as a `(rows·window) × (n−window+1)` matrix; row `c·rows + r`
/// holds `input[r, j + c]` in column `j`.
fn im2col(input: &[f64], rows: usize, n: usize, window: usize) -> Vec<f64> {
    let width = n - window + 1;
    let mut patches = vec![0.0; rows * window * width];
    for c in 0..window {
        for r in 0..rows {
            let dst = &mut patches[(c * rows + r) * width..(c * rows + r + 1) * width];
            dst.copy_from_slice(&input[r * n + c..r * n + c + width]);
        }
    }
    patches
}

/// Softmax of a flat slice.
pub fn softmax_vec(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Column-wise softmax of a matrix (or of a vector treated as one column).
pub fn softmax_columns(m: &Tensor) -> Tensor {
    let (r, c) = (m.rows(), m.cols());
    let mut out = vec![0.0; r * c];
    for j in 0..c {
        let max = (0..r).map(|i| m.data()[i * c + j]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for i in 0..r {
            let e = libm::exp(m.data()[i * c + j] - max);
            out[i * c + j] = e;
            total += e;
        }
        for i in 0..r {
            out[i * c + j] /= total;
        }
    }
    Tensor::new(m.shape(), out).expect("softmax keeps shape")
}

#[cfg(test)]
mod tests;
