use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use super::random::RngStream;
use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum UnaryKind {
    Neg,
    Tanh,
    Sigmoid,
    Elu,
    Exp,
    Log,
    Softplus,
    Square,
    Scale(f64),
    AddConst(f64),
    ClampMin(f64),
}

pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryKind, Var, Var),
    AddBias(Var, Var),
    Unary(UnaryKind, Var),
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize, usize),
    GaussianSample { mean: Var, std: Var, eps: Tensor },
}

/// Elementwise op selector for [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Div,
    Negate,
    Tanh,
    Sigmoid,
    Elu,
    Exp,
    Log,
    Softplus,
    Square,
    Scale(f64),
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

impl UnaryKind {
    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryKind::Neg => -x,
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Elu => elu(x),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Log => x.ln(),
            UnaryKind::Softplus => softplus(x),
            UnaryKind::Square => x * x,
            UnaryKind::Scale(c) => c * x,
            UnaryKind::AddConst(c) => x + c,
            UnaryKind::ClampMin(c) => x.max(c),
        }
    }

    /// d(out)/d(in) given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryKind::Neg => -1.0,
            UnaryKind::Tanh => 1.0 - y * y,
            UnaryKind::Sigmoid => y * (1.0 - y),
            UnaryKind::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            UnaryKind::Exp => y,
            UnaryKind::Log => 1.0 / x,
            UnaryKind::Softplus => sigmoid(x),
            UnaryKind::Square => 2.0 * x,
            UnaryKind::Scale(c) => c,
            UnaryKind::AddConst(_) => 1.0,
            UnaryKind::ClampMin(c) => {
                if x >= c {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `c = a·b` (+ `beta`·c) for strided views, via `matrixmultiply`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    debug_assert!(a.len() >= m * k && b.len() >= k * n);
    // SAFETY: the views described by the strides lie inside `a` (m×k),
    // `b` (k×n) and `c` (m×n, row-major), as checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn broadcast_shape(a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if b.len() == 1 {
        Ok(a.shape().to_vec())
    } else if a.len() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::dim(format!(
            "incompatible shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

impl Tape {
    fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let value = self.value(x).map(|v| kind.apply(v));
        let rg = self.requires_grad(x);
        self.push(Arc::new(value), Op::Unary(kind, x), rg)
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(ta, tb)?;
        let n: usize = shape.iter().product();
        let at = |t: &Tensor, i: usize| {
            if t.len() == 1 {
                t.data()[0]
            } else {
                t.data()[i]
            }
        };
        let f = match kind {
            BinaryKind::Add => |x: f64, y: f64| x + y,
            BinaryKind::Sub => |x: f64, y: f64| x - y,
            BinaryKind::Mul => |x: f64, y: f64| x * y,
            BinaryKind::Div => |x: f64, y: f64| x / y,
        };
        let data = (0..n).map(|i| f(at(ta, i), at(tb, i))).collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(Arc::new(value), Op::Binary(kind, a, b), rg))
    }

    pub fn elementwise(&mut self, op: Elementwise, inputs: &[Var]) -> Result<Var> {
        let want = match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul | Elementwise::Div => 2,
            _ => 1,
        };
        if inputs.len() != want {
            return Err(Error::Input(format!(
                "{op:?} takes {want} inputs, got {}",
                inputs.len()
            )));
        }
        let x = inputs[0];
        Ok(match op {
            Elementwise::Add => self.add(x, inputs[1])?,
            Elementwise::Sub => self.sub(x, inputs[1])?,
            Elementwise::Mul => self.mul(x, inputs[1])?,
            Elementwise::Div => self.div(x, inputs[1])?,
            Elementwise::Negate => self.neg(x),
            Elementwise::Tanh => self.tanh(x),
            Elementwise::Sigmoid => self.sigmoid(x),
            Elementwise::Elu => self.elu(x),
            Elementwise::Exp => self.exp(x),
            Elementwise::Log => self.log(x),
            Elementwise::Softplus => self.softplus(x),
            Elementwise::Square => self.square(x),
            Elementwise::Scale(c) => self.scale(x, c),
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Neg, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Elu, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Log, x)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Softplus, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Square, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(UnaryKind::Scale(c), x)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        self.unary(UnaryKind::AddConst(c), x)
    }

    /// `max(x, floor)` elementwise; no gradient where the floor is active.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        self.unary(UnaryKind::ClampMin(floor), x)
    }

    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2()?;
        let (k2, n) = tb.dims2()?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul of {:?} by {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            ta.data(),
            (k as isize, 1),
            tb.data(),
            (n as isize, 1),
            &mut out,
        );
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Arc::new(value), Op::MatMul(a, b), rg))
    }

    /// Adds a bias row (`[n]` or `[1,n]`) to every row of `[m,n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (m, n) = tx.dims2()?;
        if tb.len() != n || tb.shape().len() > 2 || (tb.shape().len() == 2 && tb.shape()[0] != 1) {
            return Err(Error::dim(format!(
                "bias {:?} for input {:?}",
                tb.shape(),
                tx.shape()
            )));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let rg = self.requires_grad(x) || self.requires_grad(bias);
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Arc::new(value), Op::AddBias(x, bias), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.requires_grad(x);
        self.push(Arc::new(Tensor::scalar(s)), Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x).mean();
        let rg = self.requires_grad(x);
        self.push(Arc::new(Tensor::scalar(m)), Op::MeanAll(x), rg)
    }

    /// Row sums: `[m,n] → [m,1]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.dims2()?;
        let data = if n == 0 {
            vec![0.0; m]
        } else {
            t.data().chunks(n).map(|r| r.iter().sum()).collect()
        };
        let rg = self.requires_grad(x);
        let value = Tensor::new(vec![m, 1], data)?;
        Ok(self.push(Arc::new(value), Op::SumCols(x), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Input("concat of nothing".into()));
        }
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            dims.push(self.value(p).dims2()?);
        }
        let m = dims[0].0;
        if dims.iter().any(|d| d.0 != m) {
            return Err(Error::dim(format!("concat_cols row counts {dims:?}")));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &(_, c)) in parts.iter().zip(&dims) {
                data.extend_from_slice(&self.value(p).data()[r * c..(r + 1) * c]);
            }
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        let value = Tensor::new(vec![m, total], data)?;
        Ok(self.push(Arc::new(value), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.dims2()?;
        if start > end || end > n {
            return Err(Error::dim(format!(
                "column range {start}..{end} of {:?}",
                t.shape()
            )));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for r in 0..m {
            data.extend_from_slice(&t.data()[r * n + start..r * n + end]);
        }
        let rg = self.requires_grad(x);
        let value = Tensor::new(vec![m, w], data)?;
        Ok(self.push(Arc::new(value), Op::SliceCols(x, start, end), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Input("concat of nothing".into()));
        }
        let (_, n) = self.value(parts[0]).dims2()?;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != n {
                return Err(Error::dim(format!("concat_rows widths {n} and {c}")));
            }
            rows += r;
        }
        let mut data = Vec::with_capacity(rows * n);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        let value = Tensor::new(vec![rows, n], data)?;
        Ok(self.push(Arc::new(value), Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.value(x).rows(start, end)?;
        let rg = self.requires_grad(x);
        Ok(self.push(Arc::new(value), Op::SliceRows(x, start, end), rg))
    }

    /// Reparameterized draw `mean + std ⊙ ε`, `ε ~ N(0, I)` from `rng`.
    ///
    /// Zero standard deviations are allowed and return the mean exactly;
    /// negative or non-finite ones are rejected.
    pub fn gaussian_sample(&mut self, mean: Var, std: Var, rng: &mut RngStream) -> Result<Var> {
        let (tm, ts) = (self.value(mean), self.value(std));
        if tm.shape() != ts.shape() {
            return Err(Error::dim(format!(
                "gaussian mean {:?} vs std {:?}",
                tm.shape(),
                ts.shape()
            )));
        }
        if let Some(bad) = ts.data().iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
            return Err(Error::Domain(format!(
                "standard deviation {bad} is not >= 0"
            )));
        }
        let eps: Vec<f64> = (0..tm.len()).map(|_| StandardNormal.sample(rng)).collect();
        let data = tm
            .data()
            .iter()
            .zip(ts.data())
            .zip(&eps)
            .map(|((m, s), e)| m + s * e)
            .collect();
        let value = Tensor::new(tm.shape().to_vec(), data)?;
        let eps = Tensor::new(tm.shape().to_vec(), eps)?;
        let rg = self.requires_grad(mean) || self.requires_grad(std);
        Ok(self.push(Arc::new(value), Op::GaussianSample { mean, std, eps }, rg))
    }

    /// Noise drawn by a [`Tape::gaussian_sample`] node.
    pub fn sample_noise(&self, v: Var) -> Option<&Tensor> {
        match &self.nodes[v.0].op {
            Op::GaussianSample { eps, .. } => Some(eps),
            _ => None,
        }
    }

    pub(crate) fn backward_op(&self, id: usize, grad: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(
                        m,
                        n,
                        k,
                        grad.data(),
                        (n as isize, 1),
                        tb.data(),
                        (1, n as isize),
                        &mut da,
                    );
                    self.accumulate(grads, *a, tensor(ta.shape(), da));
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(
                        k,
                        m,
                        n,
                        ta.data(),
                        (1, k as isize),
                        grad.data(),
                        (n as isize, 1),
                        &mut db,
                    );
                    self.accumulate(grads, *b, tensor(tb.shape(), db));
                }
            }
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let at = |t: &Tensor, i: usize| {
                    if t.len() == 1 {
                        t.data()[0]
                    } else {
                        t.data()[i]
                    }
                };
                let g = grad.data();
                let (mut ga, mut gb) = (Vec::with_capacity(g.len()), Vec::with_capacity(g.len()));
                for (i, gi) in g.iter().enumerate() {
                    let (x, y) = (at(ta, i), at(tb, i));
                    let (dx, dy) = match kind {
                        BinaryKind::Add => (1.0, 1.0),
                        BinaryKind::Sub => (1.0, -1.0),
                        BinaryKind::Mul => (y, x),
                        BinaryKind::Div => (1.0 / y, -x / (y * y)),
                    };
                    ga.push(gi * dx);
                    gb.push(gi * dy);
                }
                self.accumulate(grads, *a, reduce_to(ta, ga));
                self.accumulate(grads, *b, reduce_to(tb, gb));
            }
            Op::AddBias(x, bias) => {
                let tb = self.value(*bias);
                self.accumulate(grads, *x, grad.clone());
                if self.requires_grad(*bias) {
                    let n = tb.len();
                    let mut db = vec![0.0; n];
                    for row in grad.data().chunks(n) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    self.accumulate(grads, *bias, tensor(tb.shape(), db));
                }
            }
            Op::Unary(kind, x) => {
                let tx = self.value(*x);
                let data = grad
                    .data()
                    .iter()
                    .zip(tx.data().iter().zip(out.data()))
                    .map(|(g, (xi, yi))| g * kind.derivative(*xi, *yi))
                    .collect();
                self.accumulate(grads, *x, tensor(tx.shape(), data));
            }
            Op::SumAll(x) => {
                let g = grad.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), g));
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).len().max(1) as f64;
                let g = grad.data()[0] / n;
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), g));
            }
            Op::SumCols(x) => {
                let shape = self.shape(*x).to_vec();
                let n = shape[1];
                let data = grad
                    .data()
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g, n))
                    .collect();
                self.accumulate(grads, *x, tensor(&shape, data));
            }
            Op::ConcatCols(parts) => {
                let total = out.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let (m, c) = (self.shape(p)[0], self.shape(p)[1]);
                    if self.requires_grad(p) {
                        let mut data = Vec::with_capacity(m * c);
                        for r in 0..m {
                            data.extend_from_slice(
                                &grad.data()[r * total + offset..r * total + offset + c],
                            );
                        }
                        self.accumulate(grads, p, tensor(&[m, c], data));
                    }
                    offset += c;
                }
            }
            Op::SliceCols(x, start, end) => {
                let shape = self.shape(*x).to_vec();
                let (m, n) = (shape[0], shape[1]);
                let w = end - start;
                let mut data = vec![0.0; m * n];
                for r in 0..m {
                    data[r * n + start..r * n + end]
                        .copy_from_slice(&grad.data()[r * w..(r + 1) * w]);
                }
                self.accumulate(grads, *x, tensor(&shape, data));
            }
            Op::ConcatRows(parts) => {
                let n = out.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let rows = self.shape(p)[0];
                    if self.requires_grad(p) {
                        let data = grad.data()[offset * n..(offset + rows) * n].to_vec();
                        self.accumulate(grads, p, tensor(&[rows, n], data));
                    }
                    offset += rows;
                }
            }
            Op::SliceRows(x, start, end) => {
                let shape = self.shape(*x).to_vec();
                let n = shape[1];
                let mut data = vec![0.0; shape[0] * n];
                data[start * n..end * n].copy_from_slice(grad.data());
                self.accumulate(grads, *x, tensor(&shape, data));
            }
            Op::GaussianSample { mean, std, eps } => {
                self.accumulate(grads, *mean, grad.clone());
                if self.requires_grad(*std) {
                    let data = grad
                        .data()
                        .iter()
                        .zip(eps.data())
                        .map(|(g, e)| g * e)
                        .collect();
                    self.accumulate(grads, *std, tensor(eps.shape(), data));
                }
            }
        }
    }
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).expect("gradient shape matches its value")
}

/// Sums a broadcast gradient back down to a one-element operand.
fn reduce_to(target: &Tensor, grad: Vec<f64>) -> Tensor {
    if target.len() == grad.len() {
        tensor(target.shape(), grad)
    } else {
        tensor(target.shape(), vec![grad.iter().sum()])
    }
}
