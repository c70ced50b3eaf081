use super::autodiff::Var;
use super::scalar::Scalar;
use crate::error::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;

/// Normalizes `x` over `axis` (kept), then applies per-channel scale/shift
/// already shaped to broadcast against `x`.
fn normalize<S: Scalar>(x: &Var<S>, axis: usize) -> Result<Var<S>> {
    let mean = x.mean(&[axis], true)?;
    let centered = x.sub(&mean)?;
    let var = centered.square()?.mean(&[axis], true)?;
    let inv_std = var.affine(1.0, NORM_EPS)?.powf(-0.5)?;
    centered.mul(&inv_std)
}

/// Layer normalization across channels at every position of a `[C, H, W]` map.
pub fn channel_layer_norm<S: Scalar>(x: &Var<S>, gamma: &Var<S>, beta: &Var<S>) -> Result<Var<S>> {
    let c = x.shape().first().copied().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
    let bshape = broadcast_channel_shape(x.shape());
    let y = normalize(x, 0)?;
    check_affine("layer_norm", c, gamma, beta)?;
    y.mul(&gamma.reshape(bshape.clone())?)?.add(&beta.reshape(bshape)?)
}

/// Group normalization of a `[C, H, W]` map.
pub fn group_norm<S: Scalar>(x: &Var<S>, groups: usize, gamma: &Var<S>, beta: &Var<S>) -> Result<Var<S>> {
    let shape = x.shape().to_vec();
    let c = shape[0];
    if groups == 0 || c % groups != 0 {
        return Err(Error::shape("group_norm", format!("{c} channels into {groups} groups")));
    }
    check_affine("group_norm", c, gamma, beta)?;
    let per = x.value().numel() / groups;
    let y = normalize(&x.reshape(vec![groups, per])?, 1)?.reshape(shape.clone())?;
    let bshape = broadcast_channel_shape(&shape);
    y.mul(&gamma.reshape(bshape.clone())?)?.add(&beta.reshape(bshape)?)
}

/// Largest divisor of `channels` not exceeding `max_groups`.
pub fn group_count(channels: usize, max_groups: usize) -> usize {
    (1..=max_groups.min(channels).max(1)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

fn broadcast_channel_shape(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    s[0] = shape[0];
    s
}

fn check_affine<S: Scalar>(op: &'static str, c: usize, gamma: &Var<S>, beta: &Var<S>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(op, format!("affine {:?}/{:?} for {c} channels", gamma.shape(), beta.shape())));
    }
    Ok(())
}
