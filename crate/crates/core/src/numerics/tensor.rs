use std::fmt;
use std::sync::Arc;

use rand::Rng;

use super::meter;
use super::scalar::{DType, Scalar};
use crate::error::{Error, Result};

struct Buffer<S> {
    data: Vec<S>,
}

impl<S> Buffer<S> {
    fn new(data: Vec<S>) -> Self {
        meter::on_alloc(data.len() * std::mem::size_of::<S>());
        Buffer { data }
    }
}

impl<S> Drop for Buffer<S> {
    fn drop(&mut self) {
        meter::on_free(self.data.len() * std::mem::size_of::<S>());
    }
}

/// Dense row-major tensor. Immutable once built; clones share storage.
#[derive(Clone)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    buf: Arc<Buffer<S>>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<S>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {shape:?} needs {} values, got {}", numel(&shape), data.len()),
            ));
        }
        Ok(Tensor { shape, buf: Arc::new(Buffer::new(data)) })
    }

    /// Builds from a vector whose length is already known to match.
    pub(crate) fn raw(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, buf: Arc::new(Buffer::new(data)) }
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| S::of(v)).collect())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: S) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self::raw(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, S::one())
    }

    pub fn scalar(value: S) -> Self {
        Self::raw(vec![], vec![value])
    }

    pub fn uniform(shape: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let shape = shape.into();
        let data = (0..numel(&shape)).map(|_| S::of(rng.gen_range(lo..hi))).collect();
        Self::raw(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.buf.data.len()
    }

    pub fn dtype(&self) -> DType {
        S::DTYPE
    }

    pub fn data(&self) -> &[S] {
        &self.buf.data
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.buf.data.clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.buf.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.numel() != 1 {
            return Err(Error::shape("item", format!("tensor has shape {:?}", self.shape)));
        }
        Ok(self.buf.data[0])
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?} changes element count", self.shape, shape),
            ));
        }
        Ok(Tensor { shape, buf: Arc::clone(&self.buf) })
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self::raw(self.shape.clone(), self.buf.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_same(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
        Self::raw(self.shape.clone(), data)
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor::raw(self.shape.clone(), self.data().iter().map(|v| T::of(v.as_f64())).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    pub fn sum_all(&self) -> S {
        self.data().iter().copied().sum()
    }

    pub fn max_abs(&self) -> S {
        self.data().iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    /// Bitwise equality of shape and payload.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.data().iter().zip(other.data()).all(|(a, b)| {
                a.to_f64().map(f64::to_bits) == b.to_f64().map(f64::to_bits)
            })
    }

    /// Sub-tensor along axis 0.
    pub fn narrow0(&self, start: usize, len: usize) -> Result<Self> {
        let lead = *self.shape.first().ok_or(Error::InvalidAxis { axis: 0, rank: 0 })?;
        if start + len > lead {
            return Err(Error::shape("narrow", format!("{start}+{len} exceeds {lead}")));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Self::raw(shape, self.data()[start * inner..(start + len) * inner].to_vec()))
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor<{}>{:?}", S::DTYPE.name(), self.shape)?;
        if self.numel() <= 16 {
            write!(f, " {:?}", self.data())?;
        }
        Ok(())
    }
}
