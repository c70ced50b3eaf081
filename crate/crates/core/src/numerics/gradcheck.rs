//! Central finite-difference checking of recorded gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::autodiff::Var;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Worst norm-wise relative error over all inputs.
    pub max_rel_err: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Norm-wise relative error `‖a − b‖∞ / max(‖b‖∞, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    diff / scale.max(floor)
}

/// Checks every element of every input (or `max_per_input` random ones).
///
/// The scalar probed is `Σ f(x) ⊙ r` for a fixed random `r`, accumulated in
/// `f64` so single-precision rounding stays below the finite-difference noise.
pub fn check_gradients<S: Scalar>(
    inputs: &[Tensor<S>],
    f: impl Fn(&[Var<S>]) -> Result<Var<S>>,
    max_per_input: Option<usize>,
    seed: u64,
) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            let n = t.numel();
            match max_per_input {
                Some(m) if m < n => (0..m).map(|_| rng.gen_range(0..n)).collect(),
                _ => (0..n).collect(),
            }
        })
        .collect();
    check_picks(inputs, &f, &f, &picks, &mut rng, true)
}

/// Checks `count` distinct scalars drawn uniformly from all inputs together,
/// scoring them as one vector.
pub fn check_gradients_sampled<S: Scalar>(
    inputs: &[Tensor<S>],
    f: impl Fn(&[Var<S>]) -> Result<Var<S>>,
    count: usize,
    seed: u64,
) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = inputs.iter().map(|t| t.numel()).sum();
    let mut flat: Vec<usize> = rand::seq::index::sample(&mut rng, total, count.min(total)).into_vec();
    flat.sort_unstable();
    let mut picks = vec![Vec::new(); inputs.len()];
    let mut offset = 0;
    let mut it = flat.into_iter().peekable();
    for (idx, t) in inputs.iter().enumerate() {
        while let Some(&p) = it.peek() {
            if p >= offset + t.numel() {
                break;
            }
            picks[idx].push(p - offset);
            it.next();
        }
        offset += t.numel();
    }
    check_picks(inputs, &f, &f, &picks, &mut rng, false)
}

/// Checks the gradient recorded in precision `S` against central finite
/// differences of `reference`, evaluated in precision `T` at the same
/// (exactly widened) input values with `T`'s step.
pub fn check_gradients_against<S: Scalar, T: Scalar>(
    inputs: &[Tensor<S>],
    f: impl Fn(&[Var<S>]) -> Result<Var<S>>,
    reference: impl Fn(&[Var<T>]) -> Result<Var<T>>,
    seed: u64,
) -> Result<GradCheck> {
    let picks: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.numel()).collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    check_picks(inputs, f, reference, &picks, &mut rng, true)
}

fn check_picks<S: Scalar, T: Scalar>(
    inputs: &[Tensor<S>],
    f: impl Fn(&[Var<S>]) -> Result<Var<S>>,
    reference: impl Fn(&[Var<T>]) -> Result<Var<T>>,
    picks: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
    per_input: bool,
) -> Result<GradCheck> {
    let vars: Vec<Var<S>> = inputs.iter().cloned().map(Var::param).collect();
    let out = f(&vars)?;
    let probe: Vec<f64> = (0..out.value().numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let probe_t = Tensor::from_f64(out.shape().to_vec(), &probe)?;
    let loss = out.mul(&Var::constant(probe_t))?.reduce_sum_all()?;
    let grads = loss.backward()?;

    let wide: Vec<Tensor<T>> = inputs.iter().map(|t| t.cast::<T>()).collect();
    let eval = |xs: &[Tensor<T>]| -> Result<f64> {
        let vs: Vec<Var<T>> = xs.iter().cloned().map(Var::constant).collect();
        let y = reference(&vs)?;
        Ok(y.value().data().iter().zip(&probe).map(|(v, p)| v.as_f64() * p).sum())
    };

    let h = T::FD_STEP;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let (mut all_fd, mut all_an) = (Vec::new(), Vec::new());
    for (idx, input) in wide.iter().enumerate() {
        if picks[idx].is_empty() {
            continue;
        }
        let analytic = grads.get_or_zeros(&vars[idx]).to_f64_vec();
        let mut fd = Vec::with_capacity(picks[idx].len());
        let mut an = Vec::with_capacity(picks[idx].len());
        let mut xs = wide.clone();
        for &p in &picks[idx] {
            let base = input.data()[p].as_f64();
            let mut shifted = input.to_vec();
            shifted[p] = T::of(base + h);
            xs[idx] = Tensor::from_vec(input.shape().to_vec(), shifted.clone())?;
            let lp = eval(&xs)?;
            shifted[p] = T::of(base - h);
            xs[idx] = Tensor::from_vec(input.shape().to_vec(), shifted)?;
            let lm = eval(&xs)?;
            // the step actually taken after rounding to T
            let step = T::of(base + h).as_f64() - T::of(base - h).as_f64();
            fd.push((lp - lm) / step);
            an.push(analytic[p]);
        }
        checked += fd.len();
        if per_input {
            worst = worst.max(rel_err(&an, &fd, 1e-6));
        } else {
            all_fd.extend(fd);
            all_an.extend(an);
        }
    }
    if !per_input {
        worst = rel_err(&all_an, &all_fd, 1e-6);
    }
    Ok(GradCheck { max_rel_err: worst, checked })
}
