use std::collections::BTreeMap;

use super::kernels;
use super::tensor::{Tensor, TensorId};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

/// How the second operand lines up with the first in a binary op.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    /// `a` has one element.
    ScalarA,
    ScalarB,
    /// `a` is `1×D` against a `B×D` operand.
    RowA,
    RowB,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Exp,
    Log,
    Sigmoid,
    LogSigmoid,
    Softplus,
    Silu,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Binary {
        kind: Binary,
        a: Var,
        b: Var,
        bcast: Bcast,
    },
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Unary, Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    ConcatCols(Vec<Var>),
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    RowProduct(Var),
    Expand {
        x: Var,
        width: usize,
        deriv: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation for one forward pass.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward simply walks it in reverse. A graph is
/// built per batch and dropped afterwards; parameters are copied in as
/// leaves and never mutated while recorded.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<TensorId, Var>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: BTreeMap<TensorId, Var>,
}

impl Gradients {
    /// Gradient of the loss with respect to a recorded value, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for a tensor bound with [`Graph::param`].
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.params.get(&t.id()).and_then(|v| self.wrt(*v))
    }

    /// Adds this pass's gradient into `t.grad`. Tensors that did not take
    /// part in the pass are left untouched.
    pub fn accumulate_into(&self, t: &mut Tensor) -> Result<()> {
        if !t.requires_grad() {
            return Ok(());
        }
        if let Some(g) = self.get(t) {
            t.accumulate_grad(g)?;
        }
        Ok(())
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    stable_sigmoid(x)
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        debug_assert!(
            value.iter().all(|v| v.is_finite()),
            "non-finite value produced by {op:?}"
        );
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Copies a recorded value out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf, false)
    }

    pub fn input(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::shape("input", &shape, &[values.len()]));
        }
        Ok(self.push(shape, values, Op::Leaf, false))
    }

    /// Binds a tensor as a leaf. Binding the same tensor twice returns the
    /// same handle, so shared parameters accumulate into one gradient.
    pub fn param(&mut self, t: &Tensor) -> Var {
        if let Some(v) = self.params.get(&t.id()) {
            return *v;
        }
        let v = self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        );
        self.params.insert(t.id(), v);
        v
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, s, &[0, 0])),
        }
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let out = kernels::gemm_nn(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_t")?;
        let (n, k2) = self.dims2(b, "matmul_t")?;
        if k != k2 {
            return Err(Error::shape("matmul_t", self.shape(a), self.shape(b)));
        }
        let out = kernels::gemm_nt(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMulT(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "transpose")?;
        let out = kernels::transpose(self.value(x), r, c);
        let rg = self.rg(&[x]);
        Ok(self.push(vec![c, r], out, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() {
            return Err(Error::shape("reshape", self.shape(x), &shape));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::Reshape(x), rg))
    }

    fn bcast(&self, a: Var, b: Var, op: &'static str) -> Result<(Bcast, Vec<usize>)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok((Bcast::Same, sa.to_vec()));
        }
        let (na, nb) = (self.value(a).len(), self.value(b).len());
        if nb == 1 {
            return Ok((Bcast::ScalarB, sa.to_vec()));
        }
        if na == 1 {
            return Ok((Bcast::ScalarA, sb.to_vec()));
        }
        if let ([ra, ca], [rb, cb]) = (sa, sb) {
            if ca == cb && *rb == 1 {
                return Ok((Bcast::RowB, sa.to_vec()));
            }
            if ca == cb && *ra == 1 {
                return Ok((Bcast::RowA, sb.to_vec()));
            }
        }
        Err(Error::shape(op, sa, sb))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let (bcast, shape) = self.bcast(a, b, name)?;
        let (va, vb) = (self.value(a), self.value(b));
        let n: usize = shape.iter().product();
        let cols = *shape.last().unwrap_or(&1);
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let out: Vec<f64> = (0..n)
            .map(|i| {
                let (ia, ib) = match bcast {
                    Bcast::Same => (i, i),
                    Bcast::ScalarA => (0, i),
                    Bcast::ScalarB => (i, 0),
                    Bcast::RowA => (i % cols, i),
                    Bcast::RowB => (i, i % cols),
                };
                f(va[ia], vb[ib])
            })
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::Binary { kind, a, b, bcast }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// Scales each row of `x[B×D]` by the matching entry of `s[B×1]`.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var> {
        let (b, d) = self.dims2(x, "mul_col")?;
        if self.shape(s) != [b, 1] {
            return Err(Error::shape("mul_col", self.shape(x), self.shape(s)));
        }
        let (vx, vs) = (self.value(x), self.value(s));
        let out = (0..b * d).map(|i| vx[i] * vs[i / d]).collect();
        let rg = self.rg(&[x, s]);
        Ok(self.push(vec![b, d], out, Op::MulCol(x, s), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * c).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v + c).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::AddScalar(x), rg)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -1.0);
        self.add_scalar(neg, 1.0)
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let out = self
            .value(x)
            .iter()
            .map(|&v| match kind {
                Unary::Exp => v.exp(),
                Unary::Log => v.ln(),
                Unary::Sigmoid => stable_sigmoid(v),
                Unary::LogSigmoid => -softplus(-v),
                Unary::Softplus => softplus(v),
                Unary::Silu => v * stable_sigmoid(v),
            })
            .collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Unary(kind, x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).iter().find(|v| **v <= 0.0 || v.is_nan()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("argument {bad} is not positive"),
            });
        }
        Ok(self.unary(Unary::Log, x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    /// `ln σ(x)`, evaluated without forming `σ(x)`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::LogSigmoid, x)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Unary::Softplus, x)
    }

    /// `x · σ(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(Unary::Silu, x)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).iter().map(|v| v.clamp(lo, hi)).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Clamp { x, lo, hi }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(vec![1], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let s: f64 = self.value(x).iter().sum();
        let rg = self.rg(&[x]);
        Ok(self.push(vec![1], vec![s / n as f64], Op::Mean(x), rg))
    }

    /// Row sums: `B×D → B×1`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let (b, d) = self.dims2(x, "sum_rows")?;
        let v = self.value(x);
        let out = (0..b).map(|r| v[r * d..(r + 1) * d].iter().sum()).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(vec![b, 1], out, Op::SumRows(x), rg))
    }

    /// Row products: `B×D → B×1`.
    pub fn row_product(&mut self, x: Var) -> Result<Var> {
        let (b, d) = self.dims2(x, "row_product")?;
        let v = self.value(x);
        let out = (0..b)
            .map(|r| v[r * d..(r + 1) * d].iter().product())
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(vec![b, 1], out, Op::RowProduct(x), rg))
    }

    /// Concatenates rank-2 operands with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero operands".into()))?;
        let (rows, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != rows {
                return Err(Error::shape(
                    "concat_cols",
                    self.shape(first),
                    self.shape(p),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(vec![rows, total], out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Selects rows of `table` (a one-hot product realized as a lookup).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims2(table, "gather_rows")?;
        let t = self.value(table);
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(Error::Lookup(format!(
                    "row {i} out of range for {rows} rows"
                )));
            }
            out.extend_from_slice(&t[i * cols..(i + 1) * cols]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            vec![idx.len(), cols],
            out,
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Expands every scalar of `x` into `width` values through `f`, which
    /// writes the values and their derivatives with respect to the scalar.
    /// The result has shape `x.shape ++ [width]`.
    pub fn expand<F>(&mut self, x: Var, width: usize, f: F) -> Var
    where
        F: Fn(f64, &mut [f64], &mut [f64]),
    {
        let v = self.value(x);
        let mut out = vec![0.0; v.len() * width];
        let mut deriv = vec![0.0; v.len() * width];
        for (i, &xi) in v.iter().enumerate() {
            let span = i * width..(i + 1) * width;
            f(xi, &mut out[span.clone()], &mut deriv[span]);
        }
        let mut shape = self.shape(x).to_vec();
        shape.push(width);
        let rg = self.rg(&[x]);
        self.push(shape, out, Op::Expand { x, width, deriv }, rg)
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            nodes: grads,
            params: self.params.clone(),
        })
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.node(*a).requires_grad {
                    self.acc(grads, *a, kernels::gemm_nt(g, self.value(*b), m, n, k));
                }
                if self.node(*b).requires_grad {
                    self.acc(grads, *b, kernels::gemm_tn(self.value(*a), g, k, m, n));
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                if self.node(*a).requires_grad {
                    self.acc(grads, *a, kernels::gemm_nn(g, self.value(*b), m, n, k));
                }
                if self.node(*b).requires_grad {
                    self.acc(grads, *b, kernels::gemm_tn(g, self.value(*a), n, m, k));
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                self.acc(grads, *x, kernels::transpose(g, c, r));
            }
            Op::Reshape(x) => self.acc(grads, *x, g.to_vec()),
            Op::Binary { kind, a, b, bcast } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let cols = *node.shape.last().unwrap_or(&1);
                let mut ga = vec![0.0; va.len()];
                let mut gb = vec![0.0; vb.len()];
                for (i, gi) in g.iter().enumerate() {
                    let (ia, ib) = match bcast {
                        Bcast::Same => (i, i),
                        Bcast::ScalarA => (0, i),
                        Bcast::ScalarB => (i, 0),
                        Bcast::RowA => (i % cols, i),
                        Bcast::RowB => (i, i % cols),
                    };
                    let (da, db) = match kind {
                        Binary::Add => (1.0, 1.0),
                        Binary::Sub => (1.0, -1.0),
                        Binary::Mul => (vb[ib], va[ia]),
                    };
                    ga[ia] += gi * da;
                    gb[ib] += gi * db;
                }
                self.acc(grads, *a, ga);
                self.acc(grads, *b, gb);
            }
            Op::MulCol(x, s) => {
                let d = self.shape(*x)[1];
                let (vx, vs) = (self.value(*x), self.value(*s));
                let gx = g.iter().enumerate().map(|(i, gi)| gi * vs[i / d]).collect();
                let mut gs = vec![0.0; vs.len()];
                for (i, gi) in g.iter().enumerate() {
                    gs[i / d] += gi * vx[i];
                }
                self.acc(grads, *x, gx);
                self.acc(grads, *s, gs);
            }
            Op::Scale(x, c) => self.acc(grads, *x, g.iter().map(|v| v * c).collect()),
            Op::AddScalar(x) => self.acc(grads, *x, g.to_vec()),
            Op::Unary(kind, x) => {
                let vx = self.value(*x);
                let y = &node.value;
                let gx = g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| {
                        let d = match kind {
                            Unary::Exp => y[i],
                            Unary::Log => 1.0 / vx[i],
                            Unary::Sigmoid => y[i] * (1.0 - y[i]),
                            Unary::LogSigmoid => stable_sigmoid(-vx[i]),
                            Unary::Softplus => stable_sigmoid(vx[i]),
                            Unary::Silu => {
                                let s = stable_sigmoid(vx[i]);
                                s * (1.0 + vx[i] * (1.0 - s))
                            }
                        };
                        gi * d
                    })
                    .collect();
                self.acc(grads, *x, gx);
            }
            Op::Clamp { x, lo, hi } => {
                let vx = self.value(*x);
                let gx = g
                    .iter()
                    .zip(vx)
                    .map(|(gi, v)| if *v >= *lo && *v <= *hi { *gi } else { 0.0 })
                    .collect();
                self.acc(grads, *x, gx);
            }
            Op::Sum(x) => self.acc(grads, *x, vec![g[0]; self.value(*x).len()]),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.acc(grads, *x, vec![g[0] / n as f64; n]);
            }
            Op::SumRows(x) => {
                let d = self.shape(*x)[1];
                let n = self.value(*x).len();
                self.acc(grads, *x, (0..n).map(|i| g[i / d]).collect());
            }
            Op::RowProduct(x) => {
                let d = self.shape(*x)[1];
                let vx = self.value(*x);
                let mut gx = vec![0.0; vx.len()];
                for (r, gr) in g.iter().enumerate() {
                    let row = &vx[r * d..(r + 1) * d];
                    // prefix/suffix products keep this exact when entries are zero
                    let mut prefix = vec![1.0; d + 1];
                    for j in 0..d {
                        prefix[j + 1] = prefix[j] * row[j];
                    }
                    let mut suffix = 1.0;
                    for j in (0..d).rev() {
                        gx[r * d + j] = gr * prefix[j] * suffix;
                        suffix *= row[j];
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.node(p).requires_grad {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        self.acc(grads, p, gp);
                    }
                    offset += w;
                }
            }
            Op::GatherRows { table, idx } => {
                let cols = self.shape(*table)[1];
                let mut gt = vec![0.0; self.value(*table).len()];
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..cols {
                        gt[i * cols + c] += g[r * cols + c];
                    }
                }
                self.acc(grads, *table, gt);
            }
            Op::Expand { x, width, deriv } => {
                let n = self.value(*x).len();
                let gx = (0..n)
                    .map(|i| {
                        let span = i * width..(i + 1) * width;
                        g[span.clone()]
                            .iter()
                            .zip(&deriv[span])
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect();
                self.acc(grads, *x, gx);
            }
        }
    }
}
