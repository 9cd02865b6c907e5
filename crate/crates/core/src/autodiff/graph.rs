use std::collections::BTreeMap;
use std::fmt;

use super::tensor::{invert, matmul_raw, Tensor};
use super::GraphError;

/// Inverses whose 1-norm condition estimate exceeds this are refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation defined outside the engine (e.g. a fused loss) that supplies
/// its own backward rule.
pub trait CustomOp: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, given the upstream gradient of
    /// the output.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Dot(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulScalarVar(Var, Var),
    AddRowBroadcast(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    Sum(Var),
    MeanRows(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    Slice { input: Var, start: usize },
    Row { input: Var, row: usize },
    GatherRows { input: Var, rows: Vec<usize> },
    Select { input: Var, index: usize },
    Transpose(Var),
    Outer(Var, Var),
    Trace(Var),
    Inverse(Var),
    Conv1d { signal: Var, kernels: Var },
    Custom { op: Box<dyn CustomOp>, inputs: Vec<Var> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation graph for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// valid topological order. `backward` may be run once per graph; a second
/// call fails with [`GraphError::AlreadyBackpropagated`] until
/// [`Graph::zero_grad`] is called, after which gradients are recomputed from
/// scratch (they never accumulate across calls).
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    backpropagated: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, Var>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a named parameter; `None` if it was unreachable from the loss.
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|v| self.get(*v))
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> GraphError {
    GraphError::ShapeMismatch { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(c) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

fn log_sum_exp_slice(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn scalar_value(&self, var: Var) -> f64 {
        self.nodes[var.0].value.item()
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A named trainable leaf.
    pub fn param(&mut self, name: &str, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    /// Matrix product. Supports `m×k · k×n`, `m×k · k` (matrix-vector) and
    /// `k · k×n` (vector-matrix).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = match (ta.ndim(), tb.ndim()) {
            (2, 2) if ta.cols() == tb.rows() => {
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                Tensor::from_parts(vec![m, n], matmul_raw(ta.data(), tb.data(), m, k, n))
            }
            (2, 1) if ta.cols() == tb.len() => {
                let (m, k) = (ta.rows(), ta.cols());
                Tensor::from_parts(vec![m], matmul_raw(ta.data(), tb.data(), m, k, 1))
            }
            (1, 2) if ta.len() == tb.rows() => {
                let (k, n) = (tb.rows(), tb.cols());
                Tensor::from_parts(vec![n], matmul_raw(ta.data(), tb.data(), 1, k, n))
            }
            _ => return Err(mismatch("matmul", ta, tb)),
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.ndim() != 1 || ta.shape() != tb.shape() {
            return Err(mismatch("dot", ta, tb));
        }
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), rg))
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, GraphError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.zip_op("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|v| v * factor);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v + c);
        let rg = self.rg(&[a]);
        self.push(value, Op::AddScalar(a), rg)
    }

    /// Multiplies every entry of `a` by the scalar node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var, GraphError> {
        let ts = self.value(s);
        if !ts.is_scalar() {
            return Err(mismatch("mul_scalar", self.value(a), ts));
        }
        let sv = ts.item();
        let value = self.value(a).map(|v| v * sv);
        let rg = self.rg(&[a, s]);
        Ok(self.push(value, Op::MulScalarVar(a, s), rg))
    }

    /// Adds vector `v` to every row of matrix `m`.
    pub fn add_row_broadcast(&mut self, m: Var, v: Var) -> Result<Var, GraphError> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tm.ndim() != 2 || tv.ndim() != 1 || tm.cols() != tv.len() {
            return Err(mismatch("add_row_broadcast", tm, tv));
        }
        let c = tm.cols();
        let mut data = tm.data().to_vec();
        for row in data.chunks_mut(c) {
            for (x, y) in row.iter_mut().zip(tv.data()) {
                *x += y;
            }
        }
        let value = Tensor::from_parts(tm.shape().to_vec(), data);
        let rg = self.rg(&[m, v]);
        Ok(self.push(value, Op::AddRowBroadcast(m, v), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| if x >= 0.0 { 1.0 / (1.0 + (-x).exp()) } else { x.exp() / (1.0 + x.exp()) },
            Op::Sigmoid(a),
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, Op::Softmax(a), rg)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.cols();
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(c) {
            let lse = log_sum_exp_slice(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        let rg = self.rg(&[a]);
        self.push(value, Op::LogSoftmax(a), rg)
    }

    /// Log-sum-exp over the last axis: a vector reduces to a scalar, a matrix
    /// to one value per row.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.cols();
        let data: Vec<f64> = x.data().chunks(c).map(log_sum_exp_slice).collect();
        let shape = if x.ndim() <= 1 { vec![] } else { x.shape()[..x.ndim() - 1].to_vec() };
        let value = Tensor::from_parts(shape, data);
        let rg = self.rg(&[a]);
        self.push(value, Op::LogSumExp(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Column-wise mean of a matrix (average of its rows).
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, GraphError> {
        let x = self.value(a);
        if x.ndim() != 2 {
            return Err(GraphError::Invalid {
                op: "mean_rows",
                msg: format!("expected a matrix, got shape {:?}", x.shape()),
            });
        }
        let (r, c) = (x.rows(), x.cols());
        let mut out = vec![0.0; c];
        for row in x.data().chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= r as f64;
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(vec![c], out), Op::MeanRows(a), rg))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, GraphError> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.ndim() != 1 {
                return Err(GraphError::Invalid {
                    op: "concat",
                    msg: format!("expected vectors, got shape {:?}", t.shape()),
                });
            }
            data.extend_from_slice(t.data());
        }
        if data.is_empty() {
            return Err(GraphError::Invalid { op: "concat", msg: "nothing to concatenate".into() });
        }
        let rg = self.rg(parts);
        let n = data.len();
        Ok(self.push(Tensor::from_parts(vec![n], data), Op::Concat(parts.to_vec()), rg))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var, GraphError> {
        let Some(&first) = rows.first() else {
            return Err(GraphError::Invalid { op: "stack_rows", msg: "no rows".into() });
        };
        let c = self.value(first).len();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            let t = self.value(r);
            if t.ndim() != 1 || t.len() != c {
                return Err(mismatch("stack_rows", self.value(first), t));
            }
            data.extend_from_slice(t.data());
        }
        let rg = self.rg(rows);
        Ok(self.push(Tensor::from_parts(vec![rows.len(), c], data), Op::StackRows(rows.to_vec()), rg))
    }

    /// `len` consecutive entries of a vector starting at `start`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, GraphError> {
        let x = self.value(a);
        if x.ndim() != 1 || len == 0 || start + len > x.len() {
            return Err(GraphError::IndexOutOfRange {
                op: "slice",
                index: start + len,
                len: x.len(),
            });
        }
        let value = Tensor::from_parts(vec![len], x.data()[start..start + len].to_vec());
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Slice { input: a, start }, rg))
    }

    pub fn row(&mut self, a: Var, row: usize) -> Result<Var, GraphError> {
        let x = self.value(a);
        if x.ndim() != 2 || row >= x.rows() {
            return Err(GraphError::IndexOutOfRange { op: "row", index: row, len: x.rows() });
        }
        let value = Tensor::from_parts(vec![x.cols()], x.row(row).to_vec());
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Row { input: a, row }, rg))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, GraphError> {
        let x = self.value(a);
        if x.ndim() != 2 || rows.is_empty() {
            return Err(GraphError::Invalid {
                op: "gather_rows",
                msg: format!("cannot gather {} rows from shape {:?}", rows.len(), x.shape()),
            });
        }
        let c = x.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= x.rows() {
                return Err(GraphError::IndexOutOfRange { op: "gather_rows", index: r, len: x.rows() });
            }
            data.extend_from_slice(x.row(r));
        }
        let rg = self.rg(&[a]);
        let value = Tensor::from_parts(vec![rows.len(), c], data);
        Ok(self.push(value, Op::GatherRows { input: a, rows: rows.to_vec() }, rg))
    }

    /// Single entry (flat row-major index) as a scalar.
    pub fn select(&mut self, a: Var, index: usize) -> Result<Var, GraphError> {
        let x = self.value(a);
        if index >= x.len() {
            return Err(GraphError::IndexOutOfRange { op: "select", index, len: x.len() });
        }
        let value = Tensor::scalar(x.data()[index]);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Select { input: a, index }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, GraphError> {
        let x = self.value(a);
        if x.ndim() != 2 {
            return Err(GraphError::Invalid {
                op: "transpose",
                msg: format!("expected a matrix, got shape {:?}", x.shape()),
            });
        }
        let value = x.transpose();
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    /// Outer product `a bᵀ` of two vectors.
    pub fn outer(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.ndim() != 1 || tb.ndim() != 1 {
            return Err(mismatch("outer", ta, tb));
        }
        let (m, n) = (ta.len(), tb.len());
        let value = Tensor::from_parts(vec![m, n], matmul_raw(ta.data(), tb.data(), m, 1, n));
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Outer(a, b), rg))
    }

    pub fn trace(&mut self, a: Var) -> Result<Var, GraphError> {
        let x = self.value(a);
        if x.ndim() != 2 || x.rows() != x.cols() {
            return Err(GraphError::Invalid {
                op: "trace",
                msg: format!("expected a square matrix, got shape {:?}", x.shape()),
            });
        }
        let n = x.rows();
        let t = (0..n).map(|i| x.at(i, i)).sum();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(t), Op::Trace(a), rg))
    }

    /// Square matrix inverse. Refuses matrices whose condition estimate
    /// exceeds [`MAX_CONDITION`].
    pub fn inverse(&mut self, a: Var) -> Result<Var, GraphError> {
        let (inv, condition) = invert(self.value(a))?;
        if !(condition <= MAX_CONDITION) {
            return Err(GraphError::Singular { condition });
        }
        let rg = self.rg(&[a]);
        Ok(self.push(inv, Op::Inverse(a), rg))
    }

    /// Zero-padded "same" convolution of a vector with each row of `kernels`
    /// (`channels × width`, odd width). Output is `len × channels`.
    pub fn conv1d(&mut self, signal: Var, kernels: Var) -> Result<Var, GraphError> {
        let (x, k) = (self.value(signal), self.value(kernels));
        if x.ndim() != 1 || k.ndim() != 2 || k.cols() % 2 == 0 {
            return Err(mismatch("conv1d", x, k));
        }
        let (n, ch, w) = (x.len(), k.rows(), k.cols());
        let pad = w / 2;
        let mut out = vec![0.0; n * ch];
        for j in 0..n {
            for c in 0..ch {
                let mut s = 0.0;
                for i in 0..w {
                    let pos = j + i;
                    if pos >= pad && pos - pad < n {
                        s += k.at(c, i) * x.data()[pos - pad];
                    }
                }
                out[j * ch + c] = s;
            }
        }
        let rg = self.rg(&[signal, kernels]);
        Ok(self.push(Tensor::from_parts(vec![n, ch], out), Op::Conv1d { signal, kernels }, rg))
    }

    /// Appends a node computed outside the engine. `value` must already hold
    /// the forward result.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var], value: Tensor) -> Var {
        let rg = self.rg(inputs);
        self.push(value, Op::Custom { op, inputs: inputs.to_vec() }, rg)
    }

    /// Allows [`Graph::backward`] to run again.
    pub fn zero_grad(&mut self) {
        self.backpropagated = false;
    }

    /// Reverse-mode pass from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, GraphError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(GraphError::NonScalarLoss(lv.shape().to_vec()));
        }
        if self.backpropagated {
            return Err(GraphError::AlreadyBackpropagated);
        }
        self.backpropagated = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            for (input, contrib) in self.local_grads(node, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: Var| &self.nodes[v.0].value;
        let y = &node.value;
        let shaped = |like: &Tensor, data: Vec<f64>| Tensor::from_parts(like.shape().to_vec(), data);
        let gd = g.data();
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                match (ta.ndim(), tb.ndim()) {
                    (2, 2) => {
                        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                        let bt = tb.transpose();
                        let at = ta.transpose();
                        vec![
                            (*a, shaped(ta, matmul_raw(gd, bt.data(), m, n, k))),
                            (*b, shaped(tb, matmul_raw(at.data(), gd, k, m, n))),
                        ]
                    }
                    (2, 1) => {
                        let (m, k) = (ta.rows(), ta.cols());
                        vec![
                            (*a, shaped(ta, matmul_raw(gd, tb.data(), m, 1, k))),
                            (*b, shaped(tb, matmul_raw(gd, ta.data(), 1, m, k))),
                        ]
                    }
                    _ => {
                        let (k, n) = (tb.rows(), tb.cols());
                        vec![
                            (*a, shaped(ta, matmul_raw(tb.data(), gd, k, n, 1))),
                            (*b, shaped(tb, matmul_raw(ta.data(), gd, k, 1, n))),
                        ]
                    }
                }
            }
            Op::Dot(a, b) => {
                let s = gd[0];
                vec![(*a, val(*b).map(|v| v * s)), (*b, val(*a).map(|v| v * s))]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let ga = gd.iter().zip(tb.data()).map(|(g, y)| g * y).collect();
                let gb = gd.iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                vec![(*a, shaped(ta, ga)), (*b, shaped(tb, gb))]
            }
            Op::Div(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let ga = gd.iter().zip(tb.data()).map(|(g, d)| g / d).collect();
                let gb = gd
                    .iter()
                    .zip(ta.data().iter().zip(tb.data()))
                    .map(|(g, (n, d))| -g * n / (d * d))
                    .collect();
                vec![(*a, shaped(ta, ga)), (*b, shaped(tb, gb))]
            }
            Op::Scale(a, f) => vec![(*a, g.map(|v| v * f))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::MulScalarVar(a, s) => {
                let sv = val(*s).item();
                let ds: f64 = gd.iter().zip(val(*a).data()).map(|(g, x)| g * x).sum();
                vec![(*a, g.map(|v| v * sv)), (*s, Tensor::scalar(ds))]
            }
            Op::AddRowBroadcast(m, v) => {
                let c = g.cols();
                let mut gv = vec![0.0; c];
                for row in gd.chunks(c) {
                    for (o, x) in gv.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                vec![(*m, g.clone()), (*v, Tensor::from_parts(vec![c], gv))]
            }
            Op::Tanh(a) => {
                vec![(*a, shaped(y, gd.iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect()))]
            }
            Op::Sigmoid(a) => {
                vec![(*a, shaped(y, gd.iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect()))]
            }
            Op::Exp(a) => vec![(*a, shaped(y, gd.iter().zip(y.data()).map(|(g, e)| g * e).collect()))],
            Op::Log(a) => {
                vec![(*a, shaped(y, gd.iter().zip(val(*a).data()).map(|(g, x)| g / x).collect()))]
            }
            Op::Sqrt(a) => {
                vec![(*a, shaped(y, gd.iter().zip(y.data()).map(|(g, r)| g / (2.0 * r)).collect()))]
            }
            Op::Softmax(a) => {
                let c = y.cols();
                let mut out = vec![0.0; y.len()];
                for ((o, yr), gr) in out.chunks_mut(c).zip(y.data().chunks(c)).zip(gd.chunks(c)) {
                    let dotp: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dotp);
                    }
                }
                vec![(*a, shaped(y, out))]
            }
            Op::LogSoftmax(a) => {
                let c = y.cols();
                let mut out = vec![0.0; y.len()];
                for ((o, yr), gr) in out.chunks_mut(c).zip(y.data().chunks(c)).zip(gd.chunks(c)) {
                    let gs: f64 = gr.iter().sum();
                    for ((o, &ly), &gv) in o.iter_mut().zip(yr).zip(gr) {
                        *o = gv - ly.exp() * gs;
                    }
                }
                vec![(*a, shaped(y, out))]
            }
            Op::LogSumExp(a) => {
                let x = val(*a);
                let c = x.cols();
                let mut out = vec![0.0; x.len()];
                for (r, (o, xr)) in out.chunks_mut(c).zip(x.data().chunks(c)).enumerate() {
                    let lse = y.data()[r];
                    for (o, &xv) in o.iter_mut().zip(xr) {
                        *o = gd[r] * (xv - lse).exp();
                    }
                }
                vec![(*a, shaped(x, out))]
            }
            Op::Sum(a) => vec![(*a, Tensor::filled(val(*a).shape(), gd[0]))],
            Op::MeanRows(a) => {
                let x = val(*a);
                let r = x.rows() as f64;
                let data = (0..x.rows()).flat_map(|_| gd.iter().map(move |v| v / r)).collect();
                vec![(*a, shaped(x, data))]
            }
            Op::Concat(parts) => {
                let mut off = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let n = val(p).len();
                        let piece = Tensor::from_parts(vec![n], gd[off..off + n].to_vec());
                        off += n;
                        (p, piece)
                    })
                    .collect()
            }
            Op::StackRows(rows) => {
                let c = g.cols();
                rows.iter()
                    .enumerate()
                    .map(|(i, &r)| (r, Tensor::from_parts(vec![c], gd[i * c..(i + 1) * c].to_vec())))
                    .collect()
            }
            Op::Slice { input, start } => {
                let x = val(*input);
                let mut out = vec![0.0; x.len()];
                out[*start..*start + gd.len()].copy_from_slice(gd);
                vec![(*input, shaped(x, out))]
            }
            Op::Row { input, row } => {
                let x = val(*input);
                let c = x.cols();
                let mut out = vec![0.0; x.len()];
                out[row * c..(row + 1) * c].copy_from_slice(gd);
                vec![(*input, shaped(x, out))]
            }
            Op::GatherRows { input, rows } => {
                let x = val(*input);
                let c = x.cols();
                let mut out = vec![0.0; x.len()];
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..c {
                        out[r * c + j] += gd[i * c + j];
                    }
                }
                vec![(*input, shaped(x, out))]
            }
            Op::Select { input, index } => {
                let x = val(*input);
                let mut out = vec![0.0; x.len()];
                out[*index] = gd[0];
                vec![(*input, shaped(x, out))]
            }
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::Outer(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, n) = (ta.len(), tb.len());
                let gt = g.transpose();
                vec![
                    (*a, shaped(ta, matmul_raw(gd, tb.data(), m, n, 1))),
                    (*b, shaped(tb, matmul_raw(gt.data(), ta.data(), n, m, 1))),
                ]
            }
            Op::Trace(a) => {
                let n = val(*a).rows();
                let mut t = Tensor::identity(n);
                t.data_mut().iter_mut().for_each(|v| *v *= gd[0]);
                vec![(*a, t)]
            }
            Op::Inverse(a) => {
                // d(A⁻¹) = −A⁻¹ dA A⁻¹  ⇒  ∂L/∂A = −A⁻ᵀ G A⁻ᵀ
                let n = y.rows();
                let yt = y.transpose();
                let tmp = matmul_raw(yt.data(), gd, n, n, n);
                let out = matmul_raw(&tmp, yt.data(), n, n, n);
                vec![(*a, Tensor::from_parts(vec![n, n], out.into_iter().map(|v| -v).collect()))]
            }
            Op::Conv1d { signal, kernels } => {
                let (x, k) = (val(*signal), val(*kernels));
                let (n, ch, w) = (x.len(), k.rows(), k.cols());
                let pad = w / 2;
                let mut gx = vec![0.0; n];
                let mut gk = vec![0.0; ch * w];
                for j in 0..n {
                    for c in 0..ch {
                        let go = gd[j * ch + c];
                        for i in 0..w {
                            let pos = j + i;
                            if pos >= pad && pos - pad < n {
                                gx[pos - pad] += go * k.at(c, i);
                                gk[c * w + i] += go * x.data()[pos - pad];
                            }
                        }
                    }
                }
                vec![(*signal, shaped(x, gx)), (*kernels, shaped(k, gk))]
            }
            Op::Custom { op, inputs } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                inputs.iter().copied().zip(op.backward(&ins, y, g)).collect()
            }
        }
    }
}
