//! Define-by-run reverse-mode differentiation.
//!
//! Every forward op appends a node to a [`Tape`]; nodes only reference
//! earlier nodes, so the tape is topologically ordered by construction and a
//! single reverse sweep visits each node once. A tape belongs to one worker;
//! parallel work uses one tape per micro-batch.
//!
//! Shape rules:
//!
//! | op | inputs | output |
//! |----|--------|--------|
//! | `matmul` | `[m,k]`, `[k,n]` | `[m,n]` |
//! | `add`, `sub`, `mul` | equal shapes | same |
//! | `add_bias` | `[b,n]`, `[n]` | `[b,n]` |
//! | elementwise unary | any | same |
//! | `sum`, `mean`, `logsumexp` | any | scalar |
//! | `row_sum` | `[b,n]` | `[b]` |
//! | `concat_cols` | `[b,n_i]`... | `[b,Σn_i]` |
//! | `concat_rows` | `[b_i,n]`... | `[Σb_i,n]` |
//! | `slice_cols`, `slice_rows` | `[b,n]` | sub-block |
//! | `transpose` | `[m,n]` | `[n,m]` |

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Neg(Var),
    Square(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    LogSumExp(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "broadcast-add",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add-scalar",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Neg(..) => "negate",
            Op::Square(..) => "square",
            Op::Softplus(..) => "softplus",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowSum(..) => "row-sum",
            Op::LogSumExp(..) => "logsumexp",
            Op::ConcatCols(..) => "concat",
            Op::ConcatRows(..) => "concat-rows",
            Op::SliceCols(..) => "slice",
            Op::SliceRows(..) => "slice-rows",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation graph for one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    debug: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`, zero when the loss does not reach it.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.grads[v.0].take() {
            Some(g) => Tensor::from_parts(shape, g),
            None => Tensor::zeros(&shape),
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable `log Σ exp(v)`.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::invalid("logsumexp of an empty vector"));
    }
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Ok(m);
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("logsumexp input".into()));
    }
    let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::with_capacity(256), debug: false }
    }

    /// Tape that checks every op output for NaN/Inf and fails at the first.
    pub fn with_debug() -> Self {
        Tape { nodes: Vec::with_capacity(256), debug: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.debug && !value.all_finite() {
            return Err(Error::NonFinite(format!("op `{}` at node {}", op.name(), self.nodes.len())));
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => {
                self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
            }
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.iter().any(|v| self.nodes[v.0].requires_grad),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Neg(a)
            | Op::Square(a)
            | Op::Softplus(a)
            | Op::Clamp(a, ..)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSum(a)
            | Op::LogSumExp(a)
            | Op::SliceCols(a, ..)
            | Op::SliceRows(a, ..)
            | Op::Transpose(a)
            | Op::Reshape(a) => self.nodes[a.0].requires_grad,
        };
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let (ta, tb) = (self.value(a), self.value(b));
            ta.matmul(tb).map_err(|_| shape_err("matmul", ta, tb))?
        };
        self.push(out, Op::MatMul(a, b))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        Ok(ta.zip_map(tb, f).expect("shapes checked"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b))
    }

    /// Adds a length-`n` bias to every row of a `[b,n]` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let out = {
            let (ta, tb) = (self.value(a), self.value(bias));
            if ta.rank() != 2 || tb.rank() != 1 || ta.shape()[1] != tb.shape()[0] {
                return Err(shape_err("broadcast-add", ta, tb));
            }
            let n = tb.len();
            let bd = tb.data();
            let data: Vec<f64> = ta.data().iter().enumerate().map(|(i, &x)| x + bd[i % n]).collect();
            Tensor::from_parts(ta.shape().to_vec(), data)
        };
        self.push(out, Op::AddBias(a, bias))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| c * x);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| -x);
        self.push(out, Op::Neg(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// `log(1 + exp(x))`, computed without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a))
    }

    /// Projects onto `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(out, Op::Mean(a))
    }

    /// Sums each row of a `[b,n]` matrix into a length-`b` vector.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let out = {
            let t = self.value(a);
            if t.rank() != 2 {
                return Err(shape_err("row-sum", t, t));
            }
            let c = t.cols();
            let data: Vec<f64> = t.data().chunks(c).map(|r| r.iter().sum()).collect();
            Tensor::from_parts(vec![t.rows()], data)
        };
        self.push(out, Op::RowSum(a))
    }

    /// `log Σ exp` over every element.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(logsumexp(self.value(a).data())?);
        self.push(out, Op::LogSumExp(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let out = {
            let first = self.value(*parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?);
            let rows = first.rows();
            for p in parts {
                let t = self.value(*p);
                if t.rank() != 2 || t.rows() != rows {
                    return Err(shape_err("concat", first, t));
                }
            }
            let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(self.value(*p).row(r));
                }
            }
            Tensor::from_parts(vec![rows, total], data)
        };
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let out = {
            let first = self.value(*parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?);
            let cols = first.cols();
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let t = self.value(*p);
                if t.rank() != 2 || t.cols() != cols {
                    return Err(shape_err("concat-rows", first, t));
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::from_parts(vec![rows, cols], data)
        };
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = {
            let t = self.value(a);
            if t.rank() != 2 || start >= end || end > t.cols() {
                return Err(Error::Shape { op: "slice", lhs: t.shape().to_vec(), rhs: vec![start, end] });
            }
            let mut data = Vec::with_capacity(t.rows() * (end - start));
            for r in 0..t.rows() {
                data.extend_from_slice(&t.row(r)[start..end]);
            }
            Tensor::from_parts(vec![t.rows(), end - start], data)
        };
        self.push(out, Op::SliceCols(a, start, end))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(a).slice_rows(start, end)?;
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        self.push(out, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        self.push(out, Op::Reshape(a))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::invalid(format!("backward needs a scalar loss, got shape {:?}", lt.shape())));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let needs = |v: &Var| self.nodes[v.0].requires_grad;

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        }
        fn acc_map(grads: &mut [Option<Vec<f64>>], v: Var, contrib: impl Iterator<Item = f64>, len: usize) {
            acc(grads, v, len, |s| s.iter_mut().zip(contrib).for_each(|(d, c)| *d += c));
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, nn) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if needs(a) {
                    // dA = dC · Bᵀ
                    acc(grads, *a, m * k, |s| gemm(m, nn, k, g, false, tb.data(), true, s, true));
                }
                if needs(b) {
                    // dB = Aᵀ · dC
                    acc(grads, *b, k * nn, |s| gemm(k, m, nn, ta.data(), true, g, false, s, true));
                }
            }
            Op::Add(a, b) => {
                if needs(a) {
                    acc_map(grads, *a, g.iter().cloned(), g.len());
                }
                if needs(b) {
                    acc_map(grads, *b, g.iter().cloned(), g.len());
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    acc_map(grads, *a, g.iter().cloned(), g.len());
                }
                if needs(b) {
                    acc_map(grads, *b, g.iter().map(|x| -x), g.len());
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if needs(a) {
                    acc_map(grads, *a, g.iter().zip(db).map(|(x, y)| x * y), g.len());
                }
                if needs(b) {
                    acc_map(grads, *b, g.iter().zip(da).map(|(x, y)| x * y), g.len());
                }
            }
            Op::AddBias(a, bias) => {
                if needs(a) {
                    acc_map(grads, *a, g.iter().cloned(), g.len());
                }
                if needs(bias) {
                    let nb = self.value(*bias).len();
                    acc(grads, *bias, nb, |s| {
                        for row in g.chunks(nb) {
                            s.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                        }
                    });
                }
            }
            Op::Scale(a, c) => acc_map(grads, *a, g.iter().map(|x| c * x), g.len()),
            Op::AddScalar(a) => acc_map(grads, *a, g.iter().cloned(), g.len()),
            Op::Sigmoid(a) => acc_map(grads, *a, g.iter().zip(out).map(|(x, y)| x * y * (1.0 - y)), g.len()),
            Op::Tanh(a) => acc_map(grads, *a, g.iter().zip(out).map(|(x, y)| x * (1.0 - y * y)), g.len()),
            Op::Relu(a) => {
                let din = self.value(*a).data();
                acc_map(grads, *a, g.iter().zip(din).map(|(x, y)| if *y > 0.0 { *x } else { 0.0 }), g.len())
            }
            Op::Exp(a) => acc_map(grads, *a, g.iter().zip(out).map(|(x, y)| x * y), g.len()),
            Op::Log(a) => {
                let din = self.value(*a).data();
                acc_map(grads, *a, g.iter().zip(din).map(|(x, y)| x / y), g.len())
            }
            Op::Neg(a) => acc_map(grads, *a, g.iter().map(|x| -x), g.len()),
            Op::Square(a) => {
                let din = self.value(*a).data();
                acc_map(grads, *a, g.iter().zip(din).map(|(x, y)| 2.0 * x * y), g.len())
            }
            Op::Softplus(a) => {
                let din = self.value(*a).data();
                acc_map(grads, *a, g.iter().zip(din).map(|(x, y)| x * sigmoid(*y)), g.len())
            }
            Op::Clamp(a, lo, hi) => {
                let din = self.value(*a).data();
                acc_map(
                    grads,
                    *a,
                    g.iter().zip(din).map(|(x, y)| if *y >= *lo && *y <= *hi { *x } else { 0.0 }),
                    g.len(),
                )
            }
            Op::Sum(a) => {
                let len = self.value(*a).len();
                acc(grads, *a, len, |s| s.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::Mean(a) => {
                let len = self.value(*a).len();
                let c = g[0] / len as f64;
                acc(grads, *a, len, |s| s.iter_mut().for_each(|d| *d += c));
            }
            Op::RowSum(a) => {
                let t = self.value(*a);
                let cols = t.cols();
                acc(grads, *a, t.len(), |s| {
                    for (r, row) in s.chunks_mut(cols).enumerate() {
                        row.iter_mut().for_each(|d| *d += g[r]);
                    }
                });
            }
            Op::LogSumExp(a) => {
                let din = self.value(*a).data();
                let lse = out[0];
                acc_map(grads, *a, din.iter().map(|x| g[0] * (x - lse).exp()), din.len());
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let t = self.value(*p);
                    let w = t.cols();
                    if needs(p) {
                        acc(grads, *p, t.len(), |s| {
                            for (r, row) in s.chunks_mut(w).enumerate() {
                                let src = &g[r * total + offset..r * total + offset + w];
                                row.iter_mut().zip(src).for_each(|(d, x)| *d += x);
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if needs(p) {
                        acc_map(grads, *p, g[offset..offset + len].iter().cloned(), len);
                    }
                    offset += len;
                }
            }
            Op::SliceCols(a, start, end) => {
                let t = self.value(*a);
                let (cols, w) = (t.cols(), end - start);
                acc(grads, *a, t.len(), |s| {
                    for (r, row) in g.chunks(w).enumerate() {
                        s[r * cols + start..r * cols + end].iter_mut().zip(row).for_each(|(d, x)| *d += x);
                    }
                });
            }
            Op::SliceRows(a, start) => {
                let t = self.value(*a);
                let cols = t.cols();
                acc(grads, *a, t.len(), |s| {
                    s[start * cols..start * cols + g.len()].iter_mut().zip(g).for_each(|(d, x)| *d += x);
                });
            }
            Op::Transpose(a) => {
                let t = self.value(*a);
                let (r, c) = (t.shape()[0], t.shape()[1]);
                acc(grads, *a, t.len(), |s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Reshape(a) => acc_map(grads, *a, g.iter().cloned(), g.len()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_of_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).item(), 0.5);
    }

    #[test]
    fn sum_of_ones() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[2, 3]));
        let y = tape.sum(x).unwrap();
        assert_eq!(tape.value(y).item(), 6.0);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn unreached_leaf_gets_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let w = tape.leaf(Tensor::ones(&[2, 2]));
        let y = tape.square(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(w), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::ones(&[2, 3]));
        let b = tape.constant(Tensor::ones(&[2, 3]));
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
        let c = tape.constant(Tensor::ones(&[3]));
        let msg = tape.add(a, c).unwrap_err().to_string();
        assert!(msg.contains("add") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn logsumexp_examples() {
        assert!((logsumexp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(logsumexp(&[1000.0, 1000.0]).unwrap(), 1000.0 + 2f64.ln());
        let v = [0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()];
        assert!(logsumexp(&v).unwrap().abs() < 1e-15);
        assert!(logsumexp(&[]).is_err());
        assert!(logsumexp(&[1e300, -1e300]).unwrap().is_finite());
    }

    #[test]
    fn debug_mode_surfaces_nan() {
        let mut tape = Tape::with_debug();
        let x = tape.constant(Tensor::scalar(-1.0));
        let err = tape.log(x).unwrap_err();
        assert!(err.to_string().contains("log"));

        let mut quiet = Tape::new();
        let x = quiet.constant(Tensor::scalar(-1.0));
        let y = quiet.log(x).unwrap();
        assert!(quiet.value(y).item().is_nan());
    }
}
