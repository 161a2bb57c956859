//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] is built fresh for every minibatch. Each operation appends a
//! node holding its forward value, so node ids are already a topological
//! order and the backward sweep simply walks them in reverse.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::matrix::Matrix;
use crate::tensor::mlp::add_bias_rows;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Param,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Elu(Var),
    Sigmoid(Var),
    Clamp(Var, T, T),
    Log(Var),
    Square(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    GradScale(Var, T),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Elu(..) => "elu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Clamp(..) => "clamp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Relu(..) => "relu",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Concat(..) => "concat",
            Op::GradScale(..) => "grad_scale",
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Matrix<T>,
    requires_grad: bool,
}

/// ELU with unit alpha.
#[inline]
pub fn elu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Recorded computation for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients of a scalar loss with respect to every node that needed one.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `var`; `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Matrix<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, zeros of `like`'s shape when unreachable.
    pub fn get_or_zeros(&self, var: Var, like: &Matrix<T>) -> Matrix<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(like.rows(), like.cols()))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op<T>, value: Matrix<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input data that never receives a gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Result<Var> {
        self.push(Op::Constant, value, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix<T>) -> Result<Var> {
        self.push(Op::Param, value, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), out, rg)
    }

    /// `x + bias` with a `1 x cols` bias broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: xv.shape(),
                rhs: bv.shape(),
            });
        }
        let mut out = xv.clone();
        add_bias_rows(&mut out, bv.as_slice());
        let rg = self.rg(x) || self.rg(bias);
        self.push(Op::AddBias(x, bias), out, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), op.name(), f)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(op, out, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(op, out, rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    /// `a + c` elementwise.
    pub fn offset(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary(a, Op::Offset(a), |x| x + c)
    }

    /// `c - a` elementwise.
    pub fn rsub(&mut self, c: T, a: Var) -> Result<Var> {
        let neg = self.scale(a, -T::one())?;
        self.offset(neg, c)
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Elu(a), elu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Result<Var> {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Log(a), |x| x.ln())
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// `max(0, a)` elementwise.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), |x| x.max(T::zero()))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::Sum(a), out, rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let out = Matrix::scalar(self.value(a).mean());
        let rg = self.rg(a);
        self.push(Op::Mean(a), out, rg)
    }

    /// Column-wise concatenation of equally tall inputs.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::hcat(&mats)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::Concat(parts.to_vec()), out, rg)
    }

    /// Identity in the forward pass; multiplies the incoming gradient by
    /// `scale` in the backward pass. `scale = -1` is a gradient reversal layer.
    pub fn grad_scale(&mut self, a: Var, scale: T) -> Result<Var> {
        let out = self.value(a).clone();
        let rg = self.rg(a);
        self.push(Op::GradScale(a, scale), out, rg)
    }

    /// Backpropagates from the scalar `loss`. A tape can only be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NotScalar(r, c));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant | Op::Param => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        let da = g.matmul_t(false, self.value(b), true)?;
                        accumulate(&mut grads, a, da)?;
                    }
                    if self.rg(b) {
                        let db = self.value(a).matmul_t(true, &g, false)?;
                        accumulate(&mut grads, b, db)?;
                    }
                }
                Op::AddBias(x, bias) => {
                    let (x, bias) = (*x, *bias);
                    if self.rg(bias) {
                        accumulate(&mut grads, bias, g.col_sums())?;
                    }
                    if self.rg(x) {
                        accumulate(&mut grads, x, g)?;
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(b) {
                        accumulate(&mut grads, b, g.clone())?;
                    }
                    if self.rg(a) {
                        accumulate(&mut grads, a, g)?;
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(b) {
                        accumulate(&mut grads, b, g.map(|v| -v))?;
                    }
                    if self.rg(a) {
                        accumulate(&mut grads, a, g)?;
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        let da = g.zip_map(self.value(b), "mul'", |gv, bv| gv * bv)?;
                        accumulate(&mut grads, a, da)?;
                    }
                    if self.rg(b) {
                        let db = g.zip_map(self.value(a), "mul'", |gv, av| gv * av)?;
                        accumulate(&mut grads, b, db)?;
                    }
                }
                Op::Div(a, b) => {
                    let (a, b) = (*a, *b);
                    let bv = self.value(b);
                    if self.rg(a) {
                        let da = g.zip_map(bv, "div'", |gv, d| gv / d)?;
                        accumulate(&mut grads, a, da)?;
                    }
                    if self.rg(b) {
                        // d(a/b)/db = -(a/b)/b
                        let q = g.zip_map(&node.value, "div'", |gv, out| gv * out)?;
                        let db = q.zip_map(bv, "div'", |qv, d| -qv / d)?;
                        accumulate(&mut grads, b, db)?;
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, g.map(|v| v * c))?;
                }
                Op::Offset(a) => accumulate(&mut grads, *a, g)?,
                Op::Elu(a) => {
                    let a = *a;
                    let d = g.zip_map(&node.value, "elu'", |gv, out| {
                        if out > T::zero() {
                            gv
                        } else {
                            gv * (out + T::one())
                        }
                    })?;
                    // `out > 0` iff `x > 0`, and for x <= 0, elu'(x) = e^x = out + 1
                    accumulate(&mut grads, a, d)?;
                }
                Op::Sigmoid(a) => {
                    let d = g.zip_map(&node.value, "sigmoid'", |gv, s| gv * s * (T::one() - s))?;
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Clamp(a, lo, hi) => {
                    let (a, lo, hi) = (*a, *lo, *hi);
                    let d = g.zip_map(
                        self.value(a),
                        "clamp'",
                        |gv, x| {
                            if x < lo || x > hi {
                                T::zero()
                            } else {
                                gv
                            }
                        },
                    )?;
                    accumulate(&mut grads, a, d)?;
                }
                Op::Log(a) => {
                    let a = *a;
                    let d = g.zip_map(self.value(a), "log'", |gv, x| gv / x)?;
                    accumulate(&mut grads, a, d)?;
                }
                Op::Square(a) => {
                    let a = *a;
                    let two = T::lit(2.0);
                    let d = g.zip_map(self.value(a), "square'", |gv, x| two * x * gv)?;
                    accumulate(&mut grads, a, d)?;
                }
                Op::Relu(a) => {
                    let a = *a;
                    let d = g.zip_map(
                        self.value(a),
                        "relu'",
                        |gv, x| {
                            if x > T::zero() {
                                gv
                            } else {
                                T::zero()
                            }
                        },
                    )?;
                    accumulate(&mut grads, a, d)?;
                }
                Op::Sum(a) => {
                    let a = *a;
                    let (r, c) = self.shape(a);
                    accumulate(&mut grads, a, Matrix::filled(r, c, g.item()?))?;
                }
                Op::Mean(a) => {
                    let a = *a;
                    let (r, c) = self.shape(a);
                    let n = T::from_usize((r * c).max(1)).unwrap();
                    accumulate(&mut grads, a, Matrix::filled(r, c, g.item()? / n))?;
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        if self.rg(p) {
                            accumulate(&mut grads, p, g.col_range(start, start + w))?;
                        }
                        start += w;
                    }
                }
                Op::GradScale(a, s) => {
                    let s = *s;
                    accumulate(&mut grads, *a, g.map(|v| v * s))?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Matrix<T>>], v: Var, delta: Matrix<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => {
            existing.same_shape(&delta, "accumulate")?;
            for (e, d) in existing.as_mut_slice().iter_mut().zip(delta.as_slice()) {
                *e += *d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
    Ok(())
}
