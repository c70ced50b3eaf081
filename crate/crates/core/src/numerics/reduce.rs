use super::autodiff::{BackwardCtx, Var};
use super::broadcast::{expand, for_each_index, strides_in, sum_to_shape};
use super::meter::add_ops;
use super::scalar::Scalar;
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

fn kept_shape(shape: &[usize], axes: &[usize]) -> Result<Vec<usize>> {
    let mut keep = shape.to_vec();
    for (i, &a) in axes.iter().enumerate() {
        if a >= shape.len() {
            return Err(Error::InvalidAxis { axis: a, rank: shape.len() });
        }
        if axes[..i].contains(&a) {
            return Err(Error::Invalid(format!("axis {a} repeated")));
        }
        keep[a] = 1;
    }
    Ok(keep)
}

fn squeezed(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape.iter().enumerate().filter(|(i, _)| !axes.contains(i)).map(|(_, &d)| d).collect()
}

/// Max over the reduced axes plus the flat input index that won (first wins).
fn max_with_index<S: Scalar>(t: &Tensor<S>, keep: &[usize]) -> (Tensor<S>, Vec<usize>) {
    let n = numel(keep);
    let mut best = vec![S::neg_infinity(); n];
    let mut arg = vec![usize::MAX; n];
    let dense = strides_in(t.shape(), t.shape());
    let st = strides_in(keep, t.shape());
    let src = t.data();
    for_each_index(t.shape(), &dense, &st, |_, i, j| {
        if arg[j] == usize::MAX || src[i] > best[j] {
            best[j] = src[i];
            arg[j] = i;
        }
    });
    (Tensor::raw(keep.to_vec(), best), arg)
}

impl<S: Scalar> Var<S> {
    pub fn reduce(&self, kind: ReduceKind, axes: &[usize], keepdims: bool) -> Result<Var<S>> {
        let in_shape = self.shape().to_vec();
        let keep = kept_shape(&in_shape, axes)?;
        let count = in_shape.iter().zip(&keep).map(|(a, b)| a / b.max(&1)).product::<usize>();
        if count == 0 {
            return Err(Error::shape("reduce", "reducing an empty axis"));
        }
        add_ops(self.value().numel() as u64);
        let out_shape = if keepdims { keep.clone() } else { squeezed(&in_shape, axes) };
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                let mut v = sum_to_shape(self.value(), &keep)?;
                if kind == ReduceKind::Mean {
                    let inv = S::one() / S::of(count as f64);
                    v = v.map(|x| x * inv);
                }
                let v = v.reshape(out_shape)?;
                Var::from_op("reduce", v, vec![self.clone()], move |c: &BackwardCtx<'_, S>| {
                    let g = c.grad.reshape(keep.clone())?;
                    let mut full = expand(&g, &in_shape)?;
                    if kind == ReduceKind::Mean {
                        let inv = S::one() / S::of(count as f64);
                        full = full.map(|x| x * inv);
                    }
                    Ok(vec![Some(full)])
                })
            }
            ReduceKind::Max => {
                let (v, arg) = max_with_index(self.value(), &keep);
                let v = v.reshape(out_shape)?;
                Var::from_op("reduce_max", v, vec![self.clone()], move |c: &BackwardCtx<'_, S>| {
                    let mut data = vec![S::zero(); numel(&in_shape)];
                    for (slot, &i) in arg.iter().enumerate() {
                        data[i] += c.grad.data()[slot];
                    }
                    Ok(vec![Some(Tensor::raw(in_shape.clone(), data))])
                })
            }
        }
    }

    pub fn sum(&self, axes: &[usize], keepdims: bool) -> Result<Var<S>> {
        self.reduce(ReduceKind::Sum, axes, keepdims)
    }

    pub fn mean(&self, axes: &[usize], keepdims: bool) -> Result<Var<S>> {
        self.reduce(ReduceKind::Mean, axes, keepdims)
    }

    pub fn max(&self, axes: &[usize], keepdims: bool) -> Result<Var<S>> {
        self.reduce(ReduceKind::Max, axes, keepdims)
    }

    pub fn reduce_sum_all(&self) -> Result<Var<S>> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.sum(&axes, false)
    }

    pub fn reduce_mean_all(&self) -> Result<Var<S>> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.mean(&axes, false)
    }
}
