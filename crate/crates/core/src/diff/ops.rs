//! Elementwise, linear-algebra and shape primitives.

use super::tensor::gemm;
use super::{Op, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Scalar,
    /// `b` is one row repeated over every row of `a`.
    Row,
    /// `b` is one column repeated over every column of `a`.
    Col,
}

fn broadcast_mode(a: &Tensor, b: &Tensor, context: &'static str) -> Result<Bcast> {
    if a.shape() == b.shape() {
        Ok(Bcast::Same)
    } else if b.len() == 1 {
        Ok(Bcast::Scalar)
    } else if a.shape().len() >= 2 && b.len() == a.cols() && b.cols() == a.cols() && b.rows() == 1 {
        Ok(Bcast::Row)
    } else if a.shape().len() == 2 && b.shape() == [a.rows(), 1] {
        Ok(Bcast::Col)
    } else {
        Err(Error::shape(context, a.shape(), b.shape()))
    }
}

#[inline]
fn b_index(mode: Bcast, i: usize, cols: usize) -> usize {
    match mode {
        Bcast::Same => i,
        Bcast::Scalar => 0,
        Bcast::Row => i % cols,
        Bcast::Col => i / cols,
    }
}

/// Sums a full-size adjoint down to the broadcast operand's shape.
fn reduce_to(mode: Bcast, g: &[f64], b: &Tensor, cols: usize) -> Tensor {
    let mut out = vec![0.0; b.len()];
    match mode {
        Bcast::Same => out.copy_from_slice(g),
        Bcast::Scalar => out[0] = g.iter().sum(),
        Bcast::Row => {
            for row in g.chunks_exact(cols) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        Bcast::Col => {
            for (o, row) in out.iter_mut().zip(g.chunks_exact(cols)) {
                *o = row.iter().sum();
            }
        }
    }
    Tensor::from_parts(b.shape().to_vec(), out)
}

fn combine(mode: Bcast, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let bd = b.data();
    let cols = a.cols().max(1);
    let mut out = Vec::with_capacity(a.len());
    match mode {
        Bcast::Same => out.extend(a.data().iter().zip(bd).map(|(&x, &y)| f(x, y))),
        Bcast::Scalar => out.extend(a.data().iter().map(|&x| f(x, bd[0]))),
        Bcast::Row => {
            for row in a.data().chunks_exact(cols) {
                out.extend(row.iter().zip(bd).map(|(&x, &y)| f(x, y)));
            }
        }
        Bcast::Col => {
            for (row, &y) in a.data().chunks_exact(cols).zip(bd) {
                out.extend(row.iter().map(|&x| f(x, y)));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// `a ∘ b` where `b` may broadcast as a scalar, a row or a column.
#[derive(Clone, Copy, Debug)]
pub struct Binary(pub BinaryKind);

impl Op for Binary {
    fn name(&self) -> &'static str {
        match self.0 {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (a, b) = (inputs[0], inputs[1]);
        let mode = broadcast_mode(a, b, self.name())?;
        let data = match self.0 {
            BinaryKind::Add => combine(mode, a, b, |x, y| x + y),
            BinaryKind::Sub => combine(mode, a, b, |x, y| x - y),
            BinaryKind::Mul => combine(mode, a, b, |x, y| x * y),
            BinaryKind::Div => combine(mode, a, b, |x, y| x / y),
        };
        Ok(Tensor::from_parts(a.shape().to_vec(), data))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let mode = broadcast_mode(a, b, "binary backward").expect("checked in forward");
        let cols = a.cols().max(1);
        let g = grad.data();
        let bd = b.data();
        let bv = |i: usize| bd[b_index(mode, i, cols)];
        let ga = needs[0].then(|| {
            let data: Vec<f64> = match self.0 {
                BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                BinaryKind::Mul => g.iter().enumerate().map(|(i, gi)| gi * bv(i)).collect(),
                BinaryKind::Div => g.iter().enumerate().map(|(i, gi)| gi / bv(i)).collect(),
            };
            Tensor::from_parts(a.shape().to_vec(), data)
        });
        let gb = needs[1].then(|| {
            let full: Vec<f64> = match self.0 {
                BinaryKind::Add => g.to_vec(),
                BinaryKind::Sub => g.iter().map(|v| -v).collect(),
                BinaryKind::Mul => g.iter().zip(a.data()).map(|(gi, ai)| gi * ai).collect(),
                BinaryKind::Div => g
                    .iter()
                    .zip(a.data())
                    .enumerate()
                    .map(|(i, (gi, ai))| {
                        let y = bv(i);
                        -gi * ai / (y * y)
                    })
                    .collect(),
            };
            reduce_to(mode, &full, b, cols)
        });
        vec![ga, gb]
    }
}

/// Elementwise maps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    /// Square root with a zero subgradient at the origin.
    Sqrt,
    Square,
    Sigmoid,
    Softplus,
    /// `(x + sqrt(x² + 4)) / 2`, a smooth algebraic softplus.
    Squareplus,
    Relu,
    /// `a·x + b`
    Affine(f64, f64),
    Clamp(f64, f64),
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn squareplus(x: f64) -> f64 {
    let s = (x * x + 4.0).sqrt();
    if x >= 0.0 {
        0.5 * (x + s)
    } else {
        2.0 / (s - x)
    }
}

impl Unary {
    fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus => softplus(x),
            Unary::Squareplus => squareplus(x),
            Unary::Relu => x.max(0.0),
            Unary::Affine(a, b) => a * x + b,
            Unary::Clamp(lo, hi) => x.clamp(lo, hi),
        }
    }

    /// Derivative at `x` given the forward value `y`.
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Sqrt => {
                if y > 0.0 {
                    0.5 / y
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
            Unary::Sigmoid => y * (1.0 - y),
            // sigmoid(x) = 1 - exp(-softplus(x))
            Unary::Softplus => -(-y).exp_m1(),
            // sqrt(x² + 4) = 2y - x
            Unary::Squareplus => y / (2.0 * y - x),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Affine(a, _) => a,
            Unary::Clamp(lo, hi) => {
                if x > lo && x < hi {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl Op for Unary {
    fn name(&self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Sin => "sin",
            Unary::Cos => "cos",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Sqrt => "sqrt",
            Unary::Square => "square",
            Unary::Sigmoid => "sigmoid",
            Unary::Softplus => "softplus",
            Unary::Squareplus => "squareplus",
            Unary::Relu => "relu",
            Unary::Affine(..) => "affine",
            Unary::Clamp(..) => "clamp",
        }
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let k = *self;
        Ok(inputs[0].map(|x| k.eval(x)))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let k = *self;
        let data = inputs[0]
            .data()
            .iter()
            .zip(output.data())
            .zip(grad.data())
            .map(|((&x, &y), &g)| g * k.deriv(x, y))
            .collect();
        vec![Some(Tensor::from_parts(output.shape().to_vec(), data))]
    }
}

/// `[m, k] × [k, n] → [m, n]`
#[derive(Clone, Copy, Debug)]
pub struct MatMul;

impl Op for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (a, b) = (inputs[0], inputs[1]);
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::shape("matmul", a.shape(), b.shape()));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, &mut out, 0.0);
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let ga = needs[0].then(|| {
            let mut out = vec![0.0; m * k];
            gemm(m, n, k, grad.data(), false, b.data(), true, &mut out, 0.0);
            Tensor::from_parts(vec![m, k], out)
        });
        let gb = needs[1].then(|| {
            let mut out = vec![0.0; k * n];
            gemm(k, m, n, a.data(), true, grad.data(), false, &mut out, 0.0);
            Tensor::from_parts(vec![k, n], out)
        });
        vec![ga, gb]
    }
}

/// Sum of every element, shape `[1]`.
#[derive(Clone, Copy, Debug)]
pub struct SumAll;

impl Op for SumAll {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(Tensor::scalar(inputs[0].data().iter().sum()))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(inputs[0].shape().to_vec(), grad.item()))]
    }
}

/// Sum along axis 0 (`[m, n] → [1, n]`) or axis 1 (`[m, n] → [m, 1]`).
#[derive(Clone, Copy, Debug)]
pub struct SumAxis(pub usize);

impl Op for SumAxis {
    fn name(&self) -> &'static str {
        "sum_axis"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let a = inputs[0];
        if a.shape().len() != 2 || self.0 > 1 {
            return Err(Error::shape("sum_axis", &[0, 0], a.shape()));
        }
        let (m, n) = (a.shape()[0], a.shape()[1]);
        Ok(if self.0 == 0 {
            let mut out = vec![0.0; n];
            for row in a.data().chunks_exact(n.max(1)) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            Tensor::from_parts(vec![1, n], out)
        } else {
            let out = if n == 0 {
                vec![0.0; m]
            } else {
                a.data().chunks_exact(n).map(|r| r.iter().sum()).collect()
            };
            Tensor::from_parts(vec![m, 1], out)
        })
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let a = inputs[0];
        let (m, n) = (a.shape()[0], a.shape()[1]);
        let g = grad.data();
        let mut out = vec![0.0; m * n];
        for (i, v) in out.iter_mut().enumerate() {
            *v = if self.0 == 0 { g[i % n] } else { g[i / n] };
        }
        vec![Some(Tensor::from_parts(vec![m, n], out))]
    }
}

/// Concatenation of rank-2 tensors along columns (axis 1) or rows (axis 0).
#[derive(Clone, Copy, Debug)]
pub struct Concat(pub usize);

impl Op for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        for t in inputs {
            if t.shape().len() != 2 {
                return Err(Error::shape("concat", &[0, 0], t.shape()));
            }
        }
        if self.0 == 0 {
            let n = inputs[0].shape()[1];
            let mut m = 0;
            let mut data = Vec::new();
            for t in inputs {
                if t.shape()[1] != n {
                    return Err(Error::shape("concat rows", &[t.shape()[0], n], t.shape()));
                }
                m += t.shape()[0];
                data.extend_from_slice(t.data());
            }
            Ok(Tensor::from_parts(vec![m, n], data))
        } else {
            let m = inputs[0].shape()[0];
            for t in inputs {
                if t.shape()[0] != m {
                    return Err(Error::shape("concat cols", &[m, t.shape()[1]], t.shape()));
                }
            }
            let n: usize = inputs.iter().map(|t| t.shape()[1]).sum();
            let mut data = Vec::with_capacity(m * n);
            for r in 0..m {
                for t in inputs {
                    let w = t.shape()[1];
                    data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
                }
            }
            Ok(Tensor::from_parts(vec![m, n], data))
        }
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let g = grad.data();
        let mut result = Vec::with_capacity(inputs.len());
        if self.0 == 0 {
            let mut offset = 0;
            for (t, &need) in inputs.iter().zip(needs) {
                let len = t.len();
                result.push(
                    need.then(|| Tensor::from_parts(t.shape().to_vec(), g[offset..offset + len].to_vec())),
                );
                offset += len;
            }
        } else {
            let n = grad.shape()[1];
            let m = grad.shape()[0];
            let mut col = 0;
            for (t, &need) in inputs.iter().zip(needs) {
                let w = t.shape()[1];
                result.push(need.then(|| {
                    let mut data = Vec::with_capacity(m * w);
                    for r in 0..m {
                        data.extend_from_slice(&g[r * n + col..r * n + col + w]);
                    }
                    Tensor::from_parts(vec![m, w], data)
                }));
                col += w;
            }
        }
        result
    }
}

/// Columns `start..end` of a rank-2 tensor.
#[derive(Clone, Copy, Debug)]
pub struct SliceCols {
    pub start: usize,
    pub end: usize,
}

impl Op for SliceCols {
    fn name(&self) -> &'static str {
        "slice_cols"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let a = inputs[0];
        if a.shape().len() != 2 || self.end > a.shape()[1] || self.start > self.end {
            return Err(Error::shape("slice_cols", &[0, self.end], a.shape()));
        }
        let n = a.shape()[1];
        let w = self.end - self.start;
        let mut data = Vec::with_capacity(a.rows() * w);
        for row in a.data().chunks_exact(n.max(1)) {
            data.extend_from_slice(&row[self.start..self.end]);
        }
        Ok(Tensor::from_parts(vec![a.shape()[0], w], data))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let a = inputs[0];
        let n = a.shape()[1];
        let w = self.end - self.start;
        let mut out = vec![0.0; a.len()];
        for (r, g) in grad.data().chunks_exact(w.max(1)).enumerate() {
            out[r * n + self.start..r * n + self.end].copy_from_slice(g);
        }
        vec![Some(Tensor::from_parts(a.shape().to_vec(), out))]
    }
}

/// Selects (and may repeat) rows of a rank-2 tensor.
#[derive(Clone, Debug)]
pub struct GatherRows(pub Vec<usize>);

impl Op for GatherRows {
    fn name(&self) -> &'static str {
        "gather_rows"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let a = inputs[0];
        if a.shape().len() != 2 {
            return Err(Error::shape("gather_rows", &[0, 0], a.shape()));
        }
        let (m, n) = (a.shape()[0], a.shape()[1]);
        let mut data = Vec::with_capacity(self.0.len() * n);
        for &r in &self.0 {
            if r >= m {
                return Err(Error::shape("gather_rows index", &[m], &[r]));
            }
            data.extend_from_slice(&a.data()[r * n..(r + 1) * n]);
        }
        Ok(Tensor::from_parts(vec![self.0.len(), n], data))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let a = inputs[0];
        let n = a.shape()[1];
        let mut out = vec![0.0; a.len()];
        for (k, &r) in self.0.iter().enumerate() {
            let g = &grad.data()[k * n..(k + 1) * n];
            for (o, v) in out[r * n..(r + 1) * n].iter_mut().zip(g) {
                *o += v;
            }
        }
        vec![Some(Tensor::from_parts(a.shape().to_vec(), out))]
    }
}

#[derive(Clone, Debug)]
pub struct Reshape(pub Vec<usize>);

impl Op for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        inputs[0].clone().reshape(self.0.clone())
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::from_parts(
            inputs[0].shape().to_vec(),
            grad.data().to_vec(),
        ))]
    }
}

impl Tape {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        self.apply(Binary(kind), &[a, b])
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

    pub fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        self.apply(kind, &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Neg, a)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sin, a)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Cos, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sqrt, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Square, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Softplus, a)
    }

    pub fn squareplus(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Squareplus, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.unary(Unary::Affine(factor, 0.0), a)
    }

    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Result<Var> {
        self.unary(Unary::Affine(mul, add), a)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(Unary::Clamp(lo, hi), a)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(MatMul, &[a, b])
    }

    /// `x·W + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(SumAll, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(SumAxis(axis), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Concat(1), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Concat(0), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.apply(SliceCols { start, end }, &[a])
    }

    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        self.apply(GatherRows(rows), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        self.apply(Reshape(shape.into()), &[a])
    }

    /// Rows scaled to unit Euclidean length.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let sq = self.square(a)?;
        let n2 = self.sum_axis(sq, 1)?;
        let n = self.sqrt(n2)?;
        self.div(a, n)
    }
}
