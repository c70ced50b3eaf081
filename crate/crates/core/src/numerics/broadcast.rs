//! Trailing-dimension broadcasting.

use super::scalar::Scalar;
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(Error::shape("broadcast", format!("{a:?} vs {b:?}")));
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out` (0 along broadcast dimensions).
pub(crate) fn strides_in(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Walks `out` one innermost row at a time, calling
/// `f(out_start, a_start, a_step, b_start, b_step, len)`.
pub(crate) fn for_each_row(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
    let n = numel(out);
    if n == 0 {
        return;
    }
    if out.is_empty() {
        f(0, 0, 0, 0, 0, 1);
        return;
    }
    let rank = out.len();
    let last = out[rank - 1];
    let (la, lb) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank];
    let mut o = 0;
    loop {
        let mut ia = 0;
        let mut ib = 0;
        for d in 0..rank - 1 {
            ia += idx[d] * sa[d];
            ib += idx[d] * sb[d];
        }
        f(o, ia, la, ib, lb, last);
        o += last;
        if o >= n {
            break;
        }
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Calls `f(out_index, a_index, b_index)` for every element of `out`.
pub(crate) fn for_each_index(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    for_each_row(out, sa, sb, |o, ia, la, ib, lb, len| {
        for j in 0..len {
            f(o + j, ia + j * la, ib + j * lb);
        }
    });
}

pub fn zip_broadcast<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
    if a.shape() == b.shape() {
        return Ok(a.zip_same(b, f));
    }
    let out = broadcast_shape(a.shape(), b.shape())?;
    if b.numel() == 1 && out == a.shape() {
        let s = b.data()[0];
        return Ok(a.map(|v| f(v, s)));
    }
    if a.numel() == 1 && out == b.shape() {
        let s = a.data()[0];
        return Ok(b.map(|v| f(s, v)));
    }
    let sa = strides_in(a.shape(), &out);
    let sb = strides_in(b.shape(), &out);
    let (ad, bd) = (a.data(), b.data());
    let mut data = vec![S::zero(); numel(&out)];
    for_each_row(&out, &sa, &sb, |o, ia, la, ib, lb, len| {
        let dst = &mut data[o..o + len];
        match (la, lb) {
            (1, 1) => {
                for ((d, &x), &y) in dst.iter_mut().zip(&ad[ia..ia + len]).zip(&bd[ib..ib + len]) {
                    *d = f(x, y);
                }
            }
            (1, 0) => {
                let y = bd[ib];
                for (d, &x) in dst.iter_mut().zip(&ad[ia..ia + len]) {
                    *d = f(x, y);
                }
            }
            (0, 1) => {
                let x = ad[ia];
                for (d, &y) in dst.iter_mut().zip(&bd[ib..ib + len]) {
                    *d = f(x, y);
                }
            }
            _ => {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = f(ad[ia + j * la], bd[ib + j * lb]);
                }
            }
        }
    });
    Ok(Tensor::raw(out, data))
}

/// Sums `t` down to `target`, undoing a broadcast.
pub fn sum_to_shape<S: Scalar>(t: &Tensor<S>, target: &[usize]) -> Result<Tensor<S>> {
    if t.shape() == target {
        return Ok(t.clone());
    }
    if broadcast_shape(t.shape(), target)? != t.shape() {
        return Err(Error::shape("sum_to_shape", format!("{:?} -> {target:?}", t.shape())));
    }
    let st = strides_in(target, t.shape());
    let dense: Vec<usize> = strides_in(t.shape(), t.shape());
    let mut data = vec![S::zero(); numel(target)];
    let src = t.data();
    for_each_row(t.shape(), &dense, &st, |_, i, _, j, lj, len| {
        let row = &src[i..i + len];
        if lj == 0 {
            let mut acc = data[j];
            for &x in row {
                acc += x;
            }
            data[j] = acc;
        } else {
            for (d, &x) in data[j..j + len].iter_mut().zip(row) {
                *d += x;
            }
        }
    });
    Ok(Tensor::raw(target.to_vec(), data))
}

/// Materializes `t` broadcast to `shape`.
pub fn expand<S: Scalar>(t: &Tensor<S>, shape: &[usize]) -> Result<Tensor<S>> {
    if t.shape() == shape {
        return Ok(t.clone());
    }
    if broadcast_shape(t.shape(), shape)? != shape {
        return Err(Error::shape("expand", format!("{:?} -> {shape:?}", t.shape())));
    }
    let st = strides_in(t.shape(), shape);
    let src = t.data();
    let mut data = vec![S::zero(); numel(shape)];
    for_each_row(shape, &st, &st, |o, i, li, _, _, len| {
        let dst = &mut data[o..o + len];
        if li == 0 {
            dst.fill(src[i]);
        } else {
            dst.copy_from_slice(&src[i..i + len]);
        }
    });
    Ok(Tensor::raw(shape.to_vec(), data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        assert_eq!(broadcast_shape(&[3, 1, 5], &[4, 5]).unwrap(), vec![3, 4, 5]);
        assert_eq!(broadcast_shape(&[], &[2, 2]).unwrap(), vec![2, 2]);
        assert!(broadcast_shape(&[3], &[4]).is_err());
    }

    #[test]
    fn sum_to_undoes_expand_count() {
        let t = Tensor::<f64>::from_f64([2, 1], &[1.0, 2.0]).unwrap();
        let e = expand(&t, &[3, 2, 4]).unwrap();
        let back = sum_to_shape(&e, &[2, 1]).unwrap();
        assert_eq!(back.data(), &[12.0, 24.0]);
    }
}
