use super::autodiff::{BackwardCtx, Var};
use super::meter::add_ops;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `a[m×k] · b[k×n]`.
pub fn matmul_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    add_ops(2 * (m * k * n) as u64);
    out
}

/// `a[m×k] · b[n×k]ᵀ`.
pub fn matmul_nt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    add_ops(2 * (m * k * n) as u64);
    out
}

/// `a[k×m]ᵀ · b[k×n]`.
pub fn matmul_tn<S: Scalar>(a: &[S], b: &[S], k: usize, m: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == S::zero() {
                continue;
            }
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    add_ops(2 * (m * k * n) as u64);
    out
}

pub fn transpose2d<S: Scalar>(x: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

fn dims2(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::shape(op, format!("expected a matrix, got {shape:?}"))),
    }
}

impl<S: Scalar> Var<S> {
    pub fn matmul(&self, other: &Var<S>) -> Result<Var<S>> {
        let (m, k) = dims2("matmul", self.shape())?;
        let (k2, n) = dims2("matmul", other.shape())?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner dims {k} vs {k2}")));
        }
        let out = matmul_nn(self.value().data(), other.value().data(), m, k, n);
        let value = Tensor::raw(vec![m, n], out);
        Var::from_op("matmul", value, vec![self.clone(), other.clone()], move |c: &BackwardCtx<'_, S>| {
            let g = c.grad.data();
            let ga = c.needs[0].then(|| Tensor::raw(vec![m, k], matmul_nt(g, c.input(1).data(), m, n, k)));
            let gb = c.needs[1].then(|| Tensor::raw(vec![k, n], matmul_tn(c.input(0).data(), g, m, k, n)));
            Ok(vec![ga, gb])
        })
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<S>> {
        let in_shape = self.shape().to_vec();
        let value = self.value().reshape(shape)?;
        Var::from_op("reshape", value, vec![self.clone()], move |c: &BackwardCtx<'_, S>| {
            Ok(vec![Some(c.grad.reshape(in_shape.clone())?)])
        })
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&self) -> Result<Var<S>> {
        let (r, cols) = dims2("transpose", self.shape())?;
        let value = Tensor::raw(vec![cols, r], transpose2d(self.value().data(), r, cols));
        Var::from_op("transpose", value, vec![self.clone()], move |c: &BackwardCtx<'_, S>| {
            Ok(vec![Some(Tensor::raw(vec![r, cols], transpose2d(c.grad.data(), cols, r)))])
        })
    }

    /// Concatenates along axis 0.
    pub fn concat(parts: &[Var<S>]) -> Result<Var<S>> {
        let first = parts.first().ok_or_else(|| Error::Invalid("concat of nothing".into()))?;
        let tail = first.shape().get(1..).ok_or(Error::InvalidAxis { axis: 0, rank: 0 })?.to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        let mut sizes = Vec::with_capacity(parts.len());
        for p in parts {
            if p.shape().is_empty() || p.shape()[1..] != tail[..] {
                return Err(Error::shape("concat", format!("{:?} vs tail {tail:?}", p.shape())));
            }
            lead += p.shape()[0];
            sizes.push(p.value().numel());
            data.extend_from_slice(p.value().data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let value = Tensor::raw(shape, data);
        Var::from_op("concat", value, parts.to_vec(), move |c: &BackwardCtx<'_, S>| {
            let mut off = 0;
            let g = c.grad.data();
            let mut out = Vec::with_capacity(sizes.len());
            for (i, &n) in sizes.iter().enumerate() {
                out.push(c.needs[i].then(|| Tensor::raw(c.input(i).shape().to_vec(), g[off..off + n].to_vec())));
                off += n;
            }
            Ok(out)
        })
    }

    /// Slice `[start, start+len)` along axis 0.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Var<S>> {
        let value = self.value().narrow0(start, len)?;
        let in_shape = self.shape().to_vec();
        Var::from_op("narrow", value, vec![self.clone()], move |c: &BackwardCtx<'_, S>| {
            let inner: usize = in_shape[1..].iter().product();
            let mut data = vec![S::zero(); in_shape.iter().product()];
            data[start * inner..(start + len) * inner].copy_from_slice(c.grad.data());
            Ok(vec![Some(Tensor::raw(in_shape.clone(), data))])
        })
    }
}
