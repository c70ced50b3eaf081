//! Hybrid BCE + Dice loss and change-detection metrics.

use std::ops::{Add, AddAssign};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor, Var};

/// Predictions are clamped to `[δ, 1 − δ]` before taking logs.
pub const CLAMP_DELTA: f64 = 1e-7;
/// Smoothing constant of the Dice ratio.
pub const DICE_EPS: f64 = 1.0;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn check_pair<S: Scalar>(op: &'static str, target: &Tensor<S>, pred: &Var<S>) -> Result<()> {
    if target.shape() != pred.shape() {
        return Err(Error::shape(op, format!("mask {:?} vs prediction {:?}", target.shape(), pred.shape())));
    }
    Ok(())
}

/// Errors unless every value is exactly 0 or 1.
pub fn check_binary<S: Scalar>(mask: &Tensor<S>) -> Result<()> {
    match mask.data().iter().position(|&v| v != S::zero() && v != S::one()) {
        Some(i) => Err(Error::Invalid(format!("mask value {} at index {i} is not binary", mask.data()[i]))),
        None => Ok(()),
    }
}

/// Mean binary cross-entropy of probabilities `pred` against a binary mask.
pub fn bce_loss<S: Scalar>(target: &Tensor<S>, pred: &Var<S>) -> Result<Var<S>> {
    check_pair("bce_loss", target, pred)?;
    check_binary(target)?;
    let p = pred.clamp(CLAMP_DELTA, 1.0 - CLAMP_DELTA)?;
    let m = Var::constant(target.clone());
    let pos = m.mul(&p.ln()?)?;
    let neg = m.one_minus()?.mul(&p.one_minus()?.ln()?)?;
    pos.add(&neg)?.reduce_mean_all()?.neg()
}

/// `1 − (2ΣM·M̂ + ε) / (ΣM + ΣM̂ + ε)`.
pub fn dice_loss<S: Scalar>(target: &Tensor<S>, pred: &Var<S>, eps: f64) -> Result<Var<S>> {
    check_pair("dice_loss", target, pred)?;
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("dice smoothing must be positive, got {eps}")));
    }
    let m = Var::constant(target.clone());
    let inter = m.mul(pred)?.reduce_sum_all()?;
    let num = inter.affine(2.0, eps)?;
    let den = pred.reduce_sum_all()?.affine(1.0, target.sum_all().as_f64() + eps)?;
    num.div(&den)?.one_minus()
}

/// `bce + λ·dice`.
pub fn total_loss<S: Scalar>(target: &Tensor<S>, pred: &Var<S>, lambda: f64) -> Result<Var<S>> {
    if !(lambda >= 0.0) {
        return Err(Error::Invalid(format!("loss weight must be non-negative, got {lambda}")));
    }
    let bce = bce_loss(target, pred)?;
    if lambda == 0.0 {
        return Ok(bce);
    }
    bce.add(&dice_loss(target, pred, DICE_EPS)?.scale(lambda)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_, tn: self.tn + o.tn }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Tallies a binary mask against probabilities; `p >= threshold` counts as
/// predicted change.
pub fn confusion<S: Scalar>(target: &Tensor<S>, pred: &Tensor<S>, threshold: f64) -> Result<ConfusionCounts> {
    if target.shape() != pred.shape() {
        return Err(Error::shape("confusion", format!("mask {:?} vs prediction {:?}", target.shape(), pred.shape())));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Invalid(format!("threshold {threshold} outside (0, 1)")));
    }
    let th = S::of(threshold);
    let half = S::of(0.5);
    let mut c = ConfusionCounts::default();
    for (&m, &p) in target.data().iter().zip(pred.data()) {
        match (m >= half, p >= th) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Precision, recall, F1 and IoU; a zero denominator yields 0.
pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Metrics { precision, recall, f1: ratio(2.0 * precision * recall, precision + recall), iou: ratio(tp, tp + fp + fn_) }
}

/// Unweighted mean of per-image metrics.
pub fn macro_average(per_image: &[ConfusionCounts]) -> Metrics {
    let n = per_image.len().max(1) as f64;
    let mut m = Metrics::default();
    for c in per_image {
        let x = metrics(c);
        m.precision += x.precision / n;
        m.recall += x.recall / n;
        m.f1 += x.f1 / n;
        m.iou += x.iou / n;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradients;
    use crate::oracle;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    fn random_mask(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| if r.gen_bool(0.4) { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let m = t(&[2, 3], &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let p = Var::constant(Tensor::full([2, 3], 0.5));
        let l = bce_loss(&m, &p).unwrap().value().item().unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_prediction_is_clamp_floor() {
        let m = t(&[4], &[1.0, 0.0, 1.0, 0.0]);
        let l = bce_loss(&m, &Var::constant(m.clone())).unwrap().value().item().unwrap();
        assert!((l + (1.0 - CLAMP_DELTA).ln()).abs() < 1e-15);
        assert!(l > 0.0 && l < 1.1e-7);
    }

    #[test]
    fn bce_matches_oracle_and_rejects_bad_masks() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let m = random_mask(16, &mut r);
        let p: Vec<f64> = (0..16).map(|_| r.gen_range(0.0..1.0)).collect();
        let got = bce_loss(&t(&[4, 4], &m), &Var::constant(t(&[4, 4], &p))).unwrap().value().item().unwrap();
        assert!((got - oracle::bce(&m, &p, CLAMP_DELTA)).abs() < 1e-12);
        let soft = t(&[2], &[0.5, 1.0]);
        assert!(matches!(bce_loss(&soft, &Var::constant(soft.clone())), Err(Error::Invalid(_))));
        assert!(bce_loss(&t(&[2], &[0.0, 1.0]), &Var::constant(Tensor::zeros([3]))).is_err());
    }

    #[test]
    fn dice_cases() {
        let ones = Tensor::<f64>::ones([5, 5]);
        assert_eq!(dice_loss(&ones, &Var::constant(ones.clone()), 1.0).unwrap().value().item().unwrap(), 0.0);
        let zeros = Tensor::<f64>::zeros([5, 5]);
        assert_eq!(dice_loss(&zeros, &Var::constant(zeros.clone()), 1.0).unwrap().value().item().unwrap(), 0.0);
        let l = dice_loss(&t(&[2], &[1.0, 0.0]), &Var::constant(t(&[2], &[0.5, 0.5])), 1.0).unwrap();
        assert!((l.value().item().unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(dice_loss(&ones, &Var::constant(ones.clone()), 0.0).is_err());
    }

    #[test]
    fn total_loss_weights() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let m = t(&[3, 3], &random_mask(9, &mut r));
        let p = Var::constant(Tensor::uniform([3, 3], 0.05, 0.95, &mut r));
        let bce = bce_loss(&m, &p).unwrap().value().item().unwrap();
        assert_eq!(total_loss(&m, &p, 0.0).unwrap().value().item().unwrap(), bce);
        for lambda in [0.5, 1.0, 2.0] {
            let dice = oracle::dice(m.data(), p.value().data(), DICE_EPS);
            let got = total_loss(&m, &p, lambda).unwrap().value().item().unwrap();
            assert!((got - (bce + lambda * dice)).abs() < 1e-12);
        }
        let perfect = total_loss(&m, &Var::constant(m.clone()), 1.0).unwrap().value().item().unwrap();
        assert!(perfect.abs() < 1e-6);
        assert!(total_loss(&m, &p, -1.0).is_err());
    }

    #[test]
    fn total_loss_gradient() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let m = t(&[4, 4], &random_mask(16, &mut r));
        let p = Tensor::uniform([4, 4], 0.05, 0.95, &mut r);
        let g = check_gradients(&[p], |v| total_loss(&m, &v[0], 1.0), None, 0).unwrap();
        assert!(g.passes(1e-6), "{}", g.max_rel_err);
    }

    #[test]
    fn confusion_cases() {
        let m = t(&[4], &[1.0, 0.0, 1.0, 0.0]);
        let c = confusion(&m, &m, 0.5).unwrap();
        assert_eq!((c.fp, c.fn_, c.tp, c.tn), (0, 0, 2, 2));
        let c = confusion(&Tensor::<f64>::ones([3, 3]), &Tensor::zeros([3, 3]), 0.5).unwrap();
        assert_eq!(c.fn_, 9);
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let mask = random_mask(100, &mut r);
        let pred: Vec<f64> = (0..100).map(|_| r.gen_range(0.0..1.0)).collect();
        let c = confusion(&t(&[10, 10], &mask), &t(&[10, 10], &pred), 0.3).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), oracle::confusion(&mask, &pred, 0.3));
        assert_eq!(c.total(), 100);
        assert!(confusion(&m, &m, 1.0).is_err());
    }

    #[test]
    fn metric_examples() {
        let m = metrics(&ConfusionCounts { tp: 5, fp: 3, fn_: 2, tn: 0 });
        assert_eq!(m.iou, 0.5);
        assert!((m.f1 - 10.0 / 15.0).abs() < 1e-15);
        assert_eq!(m.precision, 0.625);
        assert!((m.recall - 5.0 / 7.0).abs() < 1e-15);
        assert_eq!(metrics(&ConfusionCounts::default()), Metrics::default());
        let per = [ConfusionCounts { tp: 1, fp: 1, fn_: 0, tn: 0 }, ConfusionCounts { tp: 1, fp: 0, fn_: 0, tn: 3 }];
        assert_eq!(macro_average(&per).iou, 0.75);
    }

    proptest! {
        #[test]
        fn f1_iou_identity(tp in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000) {
            let m = metrics(&ConfusionCounts { tp, fp, fn_, tn: 0 });
            prop_assert!((m.f1 - 2.0 * m.iou / (1.0 + m.iou)).abs() < 1e-12);
        }

        #[test]
        fn metrics_monotone_in_tp(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
            let a = metrics(&ConfusionCounts { tp, fp, fn_, tn: 0 });
            let b = metrics(&ConfusionCounts { tp: tp + 1, fp, fn_, tn: 0 });
            prop_assert!(b.precision >= a.precision && b.recall >= a.recall);
            prop_assert!(b.f1 >= a.f1 && b.iou >= a.iou);
        }

        #[test]
        fn loss_ranges(seed in 0u64..1000, lambda in 0.0f64..3.0) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let m = t(&[6, 6], &random_mask(36, &mut r));
            let p = Var::constant(Tensor::uniform([6, 6], 0.0, 1.0, &mut r));
            let dice = dice_loss(&m, &p, DICE_EPS).unwrap().value().item().unwrap();
            let bce = bce_loss(&m, &p).unwrap().value().item().unwrap();
            prop_assert!((0.0..1.0).contains(&dice));
            prop_assert!(bce >= 0.0);
            prop_assert!(total_loss(&m, &p, lambda).unwrap().value().item().unwrap() >= 0.0);
        }
    }
}
