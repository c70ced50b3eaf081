//! Differentiable elementwise ops with broadcasting.

use super::autodiff::{BackwardCtx, Var};
use super::broadcast::{sum_to_shape, zip_broadcast};
use super::meter::add_ops;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind {
    Neg,
    Exp,
    Ln,
    Sigmoid,
    Relu,
    Square,
    Abs,
    /// `max(x, c)`.
    MaxConst(f64),
    Clamp(f64, f64),
    /// `x^p`.
    Powf(f64),
    /// `a * x + b`.
    Affine(f64, f64),
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn unary_fwd<S: Scalar>(kind: UnaryKind, x: S) -> S {
    match kind {
        UnaryKind::Neg => -x,
        UnaryKind::Exp => x.exp(),
        UnaryKind::Ln => x.ln(),
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Relu => x.max(S::zero()),
        UnaryKind::Square => x * x,
        UnaryKind::Abs => x.abs(),
        UnaryKind::MaxConst(c) => x.max(S::of(c)),
        UnaryKind::Clamp(lo, hi) => x.max(S::of(lo)).min(S::of(hi)),
        UnaryKind::Powf(p) => x.powf(S::of(p)),
        UnaryKind::Affine(a, b) => S::of(a) * x + S::of(b),
    }
}

/// d(out)/d(x) given input `x` and output `y`.
fn unary_deriv<S: Scalar>(kind: UnaryKind, x: S, y: S) -> S {
    let zero = S::zero();
    let one = S::one();
    match kind {
        UnaryKind::Neg => -one,
        UnaryKind::Exp => y,
        UnaryKind::Ln => one / x,
        UnaryKind::Sigmoid => y * (one - y),
        UnaryKind::Relu => {
            if x > zero {
                one
            } else {
                zero
            }
        }
        UnaryKind::Square => x + x,
        UnaryKind::Abs => {
            if x > zero {
                one
            } else if x < zero {
                -one
            } else {
                zero
            }
        }
        UnaryKind::MaxConst(c) => {
            if x > S::of(c) {
                one
            } else {
                zero
            }
        }
        UnaryKind::Clamp(lo, hi) => {
            if x >= S::of(lo) && x <= S::of(hi) {
                one
            } else {
                zero
            }
        }
        UnaryKind::Powf(p) => S::of(p) * x.powf(S::of(p - 1.0)),
        UnaryKind::Affine(a, _) => S::of(a),
    }
}

pub fn binary_values<S: Scalar>(kind: BinaryKind, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let out = match kind {
        BinaryKind::Add => zip_broadcast(a, b, |x, y| x + y)?,
        BinaryKind::Sub => zip_broadcast(a, b, |x, y| x - y)?,
        BinaryKind::Mul => zip_broadcast(a, b, |x, y| x * y)?,
        BinaryKind::Div => zip_broadcast(a, b, |x, y| x / y)?,
    };
    add_ops(out.numel() as u64);
    Ok(out)
}

pub fn unary_values<S: Scalar>(kind: UnaryKind, x: &Tensor<S>) -> Tensor<S> {
    add_ops(x.numel() as u64);
    x.map(|v| unary_fwd(kind, v))
}

impl<S: Scalar> Var<S> {
    pub fn binary(&self, kind: BinaryKind, other: &Var<S>) -> Result<Var<S>> {
        let value = binary_values(kind, self.value(), other.value())?;
        if kind == BinaryKind::Div && !value.all_finite() {
            return Err(Error::NonFinite { op: "div" });
        }
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        Var::from_op(name, value, vec![self.clone(), other.clone()], move |c: &BackwardCtx<'_, S>| {
            let (a, b, g) = (c.input(0), c.input(1), c.grad);
            let ga = if c.needs[0] {
                let full = match kind {
                    BinaryKind::Add | BinaryKind::Sub => g.clone(),
                    BinaryKind::Mul => zip_broadcast(g, b, |g, b| g * b)?,
                    BinaryKind::Div => zip_broadcast(g, b, |g, b| g / b)?,
                };
                Some(sum_to_shape(&full, a.shape())?)
            } else {
                None
            };
            let gb = if c.needs[1] {
                let full = match kind {
                    BinaryKind::Add => g.clone(),
                    BinaryKind::Sub => g.map(|v| -v),
                    BinaryKind::Mul => zip_broadcast(g, a, |g, a| g * a)?,
                    BinaryKind::Div => {
                        let t = c.output.zip_same(g, |y, g| -g * y);
                        zip_broadcast(&t, b, |t, b| t / b)?
                    }
                };
                Some(sum_to_shape(&full, b.shape())?)
            } else {
                None
            };
            add_ops(2 * g.numel() as u64);
            Ok(vec![ga, gb])
        })
    }

    pub fn unary(&self, kind: UnaryKind) -> Result<Var<S>> {
        let value = unary_values(kind, self.value());
        Var::from_op("unary", value, vec![self.clone()], move |c: &BackwardCtx<'_, S>| {
            let x = c.input(0).data();
            let y = c.output.data();
            let g = c.grad.data();
            let data = (0..g.len()).map(|i| g[i] * unary_deriv(kind, x[i], y[i])).collect();
            add_ops(2 * g.len() as u64);
            Ok(vec![Some(Tensor::raw(c.grad.shape().to_vec(), data))])
        })
    }

    pub fn add(&self, o: &Var<S>) -> Result<Var<S>> {
        self.binary(BinaryKind::Add, o)
    }
    pub fn sub(&self, o: &Var<S>) -> Result<Var<S>> {
        self.binary(BinaryKind::Sub, o)
    }
    pub fn mul(&self, o: &Var<S>) -> Result<Var<S>> {
        self.binary(BinaryKind::Mul, o)
    }
    pub fn div(&self, o: &Var<S>) -> Result<Var<S>> {
        self.binary(BinaryKind::Div, o)
    }
    pub fn neg(&self) -> Result<Var<S>> {
        self.unary(UnaryKind::Neg)
    }
    pub fn exp(&self) -> Result<Var<S>> {
        self.unary(UnaryKind::Exp)
    }
    pub fn ln(&self) -> Result<Var<S>> {
        self.unary(UnaryKind::Ln)
    }
    pub fn sigmoid(&self) -> Result<Var<S>> {
        self.unary(UnaryKind::Sigmoid)
    }
    pub fn relu(&self) -> Result<Var<S>> {
        self.unary(UnaryKind::Relu)
    }
    pub fn square(&self) -> Result<Var<S>> {
        self.unary(UnaryKind::Square)
    }
    pub fn abs(&self) -> Result<Var<S>> {
        self.unary(UnaryKind::Abs)
    }
    pub fn max_const(&self, c: f64) -> Result<Var<S>> {
        self.unary(UnaryKind::MaxConst(c))
    }
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<S>> {
        self.unary(UnaryKind::Clamp(lo, hi))
    }
    pub fn powf(&self, p: f64) -> Result<Var<S>> {
        self.unary(UnaryKind::Powf(p))
    }
    pub fn scale(&self, a: f64) -> Result<Var<S>> {
        self.unary(UnaryKind::Affine(a, 0.0))
    }
    pub fn affine(&self, a: f64, b: f64) -> Result<Var<S>> {
        self.unary(UnaryKind::Affine(a, b))
    }
    /// `1 - x`.
    pub fn one_minus(&self) -> Result<Var<S>> {
        self.unary(UnaryKind::Affine(-1.0, 1.0))
    }
}
