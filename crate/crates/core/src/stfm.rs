//! Spatial-temporal fusion: cross-scale mixing of each pyramid, then
//! per-scale fusion of the two temporal branches.

use rand::Rng;

use crate::blocks::{channel_mix, se_hidden, ChannelMixIds, ChannelMixParams};
use crate::encoder::{FeaturePyramid, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{ResampleMode, Scalar, Var};
use crate::params::{Bound, ParamId, ParamStore};

/// Side of the spatial-attention convolution.
pub const SPATIAL_KERNEL: usize = 7;

/// Change-centric maps, one per pyramid level.
pub type FusedPyramid<S> = FeaturePyramid<S>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    /// Cross-applied channel and spatial attention, summed.
    CrossCbam,
    /// `|A − B|`.
    SiamDiff,
    /// Channel concatenation and a 1×1 projection.
    SiamConc,
}

impl FusionKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cross_cbam" => Ok(Self::CrossCbam),
            "siamdiff" => Ok(Self::SiamDiff),
            "siamconc" => Ok(Self::SiamConc),
            _ => Err(Error::Config(format!("unknown fusion {s:?} (expected cross_cbam, siamdiff or siamconc)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::CrossCbam => "cross_cbam",
            Self::SiamDiff => "siamdiff",
            Self::SiamConc => "siamconc",
        }
    }
}

fn chw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [c, h, w] => Ok((*c, *h, *w)),
        _ => Err(Error::shape(op, format!("expected [C, H, W], got {shape:?}"))),
    }
}

/// Upsamples every level to the finest one, refines the concatenation with
/// a residual channel mix, and pools each slice back to its own scale.
pub fn spatial_fuse<S: Scalar>(pyr: &FeaturePyramid<S>, mix: &ChannelMixParams<S>) -> Result<FeaturePyramid<S>> {
    let first = pyr.levels.first().ok_or_else(|| Error::Invalid("empty pyramid".into()))?;
    let (_, h, w) = chw("spatial_fuse", first.shape())?;
    let mut widths = Vec::with_capacity(pyr.levels.len());
    let mut up = Vec::with_capacity(pyr.levels.len());
    for level in &pyr.levels {
        widths.push(chw("spatial_fuse", level.shape())?.0);
        up.push(level.resample2d(h, w, ResampleMode::BilinearUp)?);
    }
    let cat = Var::concat(&up)?;
    let total: usize = widths.iter().sum();
    let mix_width = match mix {
        ChannelMixParams::Se(p) => p.reduce.shape()[0],
        ChannelMixParams::Mlp(p) => p.w1.shape()[0],
    };
    if mix_width != total {
        return Err(Error::shape("spatial_fuse", format!("mixing width {mix_width} for {total} channels")));
    }
    let refined = cat.add(&channel_mix(&cat, mix)?)?;
    let mut levels = Vec::with_capacity(widths.len());
    let mut start = 0;
    for (level, &c) in pyr.levels.iter().zip(&widths) {
        let (_, lh, lw) = chw("spatial_fuse", level.shape())?;
        levels.push(refined.narrow(start, c)?.resample2d(lh, lw, ResampleMode::AvgPoolDown)?);
        start += c;
    }
    Ok(FeaturePyramid { levels })
}

pub struct CbamParams<S: Scalar> {
    /// `[C, hidden]`
    pub reduce: Var<S>,
    /// `[hidden, C]`
    pub expand: Var<S>,
    /// `[1, 2, k, k]`
    pub spatial: Var<S>,
}

/// `σ(MLP(GAP(f)))`, one weight per channel, shape `[C]`.
pub fn channel_attention<S: Scalar>(f: &Var<S>, p: &CbamParams<S>) -> Result<Var<S>> {
    let (c, _, _) = chw("channel_attention", f.shape())?;
    let hid = p.reduce.shape().get(1).copied().unwrap_or(0);
    if p.reduce.shape() != [c, hid] || p.expand.shape() != [hid, c] {
        return Err(Error::shape(
            "channel_attention",
            format!("MLP {:?}/{:?} for {c} channels", p.reduce.shape(), p.expand.shape()),
        ));
    }
    let gap = f.mean(&[1, 2], false)?.reshape(vec![1, c])?;
    gap.matmul(&p.reduce)?.relu()?.matmul(&p.expand)?.sigmoid()?.reshape(vec![c])
}

/// `σ(conv([mean_c f; max_c f]))`, shape `[1, h, w]`.
pub fn spatial_attention<S: Scalar>(f: &Var<S>, p: &CbamParams<S>) -> Result<Var<S>> {
    chw("spatial_attention", f.shape())?;
    let k = SPATIAL_KERNEL;
    if p.spatial.shape() != [1, 2, k, k] {
        return Err(Error::shape("spatial_attention", format!("kernel {:?}", p.spatial.shape())));
    }
    let pooled = Var::concat(&[f.mean(&[0], true)?, f.max(&[0], true)?])?;
    pooled.conv2d(&p.spatial, None, 1, (k - 1) / 2)?.sigmoid()
}

/// Cross-CBAM: each branch is reweighted by the other's channel attention,
/// then by the other's spatial attention, and the two are summed.
pub fn temporal_fuse<S: Scalar>(fa: &Var<S>, fb: &Var<S>, p: &CbamParams<S>) -> Result<Var<S>> {
    same_shape("temporal_fuse", fa, fb)?;
    let c = fa.shape()[0];
    let ga = channel_attention(fa, p)?.reshape(vec![c, 1, 1])?;
    let gb = channel_attention(fb, p)?.reshape(vec![c, 1, 1])?;
    let fa2 = fa.mul(&gb)?;
    let fb2 = fb.mul(&ga)?;
    let sa = spatial_attention(&fa2, p)?;
    let sb = spatial_attention(&fb2, p)?;
    fa2.mul(&sb)?.add(&fb2.mul(&sa)?)
}

pub fn fuse_siamdiff<S: Scalar>(fa: &Var<S>, fb: &Var<S>) -> Result<Var<S>> {
    same_shape("fuse_siamdiff", fa, fb)?;
    fa.sub(fb)?.abs()
}

/// Concatenates the branches and projects back with a `[C, 2C, 1, 1]` kernel.
pub fn fuse_siamconc<S: Scalar>(fa: &Var<S>, fb: &Var<S>, proj: &Var<S>) -> Result<Var<S>> {
    same_shape("fuse_siamconc", fa, fb)?;
    let c = fa.shape()[0];
    if proj.shape() != [c, 2 * c, 1, 1] {
        return Err(Error::shape("fuse_siamconc", format!("projection {:?} for {c} channels", proj.shape())));
    }
    Var::concat(&[fa.clone(), fb.clone()])?.conv2d(proj, None, 1, 0)
}

fn same_shape<S: Scalar>(op: &'static str, a: &Var<S>, b: &Var<S>) -> Result<()> {
    chw(op, a.shape())?;
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub enum FusionParams<S: Scalar> {
    CrossCbam(CbamParams<S>),
    SiamDiff,
    SiamConc(Var<S>),
}

pub fn fuse_scale<S: Scalar>(fa: &Var<S>, fb: &Var<S>, p: &FusionParams<S>) -> Result<Var<S>> {
    match p {
        FusionParams::CrossCbam(c) => temporal_fuse(fa, fb, c),
        FusionParams::SiamDiff => fuse_siamdiff(fa, fb),
        FusionParams::SiamConc(proj) => fuse_siamconc(fa, fb, proj),
    }
}

#[derive(Debug, Clone)]
enum ScaleIds {
    CrossCbam { reduce: ParamId, expand: ParamId, spatial: ParamId },
    SiamDiff,
    SiamConc(ParamId),
}

/// Where the fusion weights live.
#[derive(Debug, Clone)]
pub struct StfmIds {
    sfm: ChannelMixIds,
    scales: Vec<ScaleIds>,
}

impl StfmIds {
    pub fn register<S: Scalar>(store: &mut ParamStore<S>, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let sfm = ChannelMixIds::register(store, "sfm.channel", cfg.fused_width(), cfg.channel_mix, rng)?;
        let k = SPATIAL_KERNEL;
        let mut scales = Vec::with_capacity(4);
        for (j, &c) in cfg.dims.iter().enumerate() {
            let pre = format!("tfm{}", j + 1);
            scales.push(match cfg.fusion {
                FusionKind::CrossCbam => {
                    let hid = se_hidden(c);
                    ScaleIds::CrossCbam {
                        reduce: store.fan_in(format!("{pre}.reduce"), &[c, hid], c, rng)?,
                        expand: store.fan_in(format!("{pre}.expand"), &[hid, c], hid, rng)?,
                        spatial: store.fan_in(format!("{pre}.spatial"), &[1, 2, k, k], 2 * k * k, rng)?,
                    }
                }
                FusionKind::SiamDiff => ScaleIds::SiamDiff,
                FusionKind::SiamConc => ScaleIds::SiamConc(store.fan_in(format!("{pre}.proj"), &[c, 2 * c, 1, 1], 2 * c, rng)?),
            });
        }
        Ok(Self { sfm, scales })
    }

    /// Spatial fusion of both pyramids, then temporal fusion per scale.
    pub fn fuse<S: Scalar>(&self, pa: &FeaturePyramid<S>, pb: &FeaturePyramid<S>, b: &Bound<S>) -> Result<FusedPyramid<S>> {
        let mix = self.sfm.bind(b);
        let sa = spatial_fuse(pa, &mix)?;
        let sb = spatial_fuse(pb, &mix)?;
        let mut levels = Vec::with_capacity(self.scales.len());
        for (j, ids) in self.scales.iter().enumerate() {
            let p = match *ids {
                ScaleIds::CrossCbam { reduce, expand, spatial } => FusionParams::CrossCbam(CbamParams {
                    reduce: b.var(reduce).clone(),
                    expand: b.var(expand).clone(),
                    spatial: b.var(spatial).clone(),
                }),
                ScaleIds::SiamDiff => FusionParams::SiamDiff,
                ScaleIds::SiamConc(p) => FusionParams::SiamConc(b.var(p).clone()),
            };
            levels.push(fuse_scale(&sa.levels[j], &sb.levels[j], &p)?);
        }
        Ok(FeaturePyramid { levels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::SeParams;
    use crate::numerics::gradcheck::check_gradients;
    use crate::numerics::Tensor;
    use crate::oracle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_var(shape: &[usize], r: &mut ChaCha8Rng) -> Var<f64> {
        Var::constant(Tensor::uniform(shape.to_vec(), -1.0, 1.0, r))
    }

    fn zeros(shape: &[usize]) -> Var<f64> {
        Var::constant(Tensor::zeros(shape.to_vec()))
    }

    fn cbam(c: usize, r: &mut ChaCha8Rng) -> CbamParams<f64> {
        let hid = se_hidden(c);
        CbamParams { reduce: rand_var(&[c, hid], r), expand: rand_var(&[hid, c], r), spatial: rand_var(&[1, 2, 7, 7], r) }
    }

    fn zero_se(c: usize) -> ChannelMixParams<f64> {
        let hid = se_hidden(c);
        ChannelMixParams::Se(SeParams { reduce: zeros(&[c, hid]), expand: zeros(&[hid, c]) })
    }

    fn pyramid(dims: &[usize], side: usize, r: &mut ChaCha8Rng) -> FeaturePyramid<f64> {
        let levels = dims.iter().enumerate().map(|(i, &c)| rand_var(&[c, side >> i, side >> i], r)).collect();
        FeaturePyramid { levels }
    }

    #[test]
    fn fusion_names_round_trip() {
        for k in [FusionKind::CrossCbam, FusionKind::SiamDiff, FusionKind::SiamConc] {
            assert_eq!(FusionKind::parse(k.name()).unwrap(), k);
        }
        assert!(FusionKind::parse("fpn").is_err());
    }

    #[test]
    fn spatial_fuse_zero_mixing_hand_trace() {
        // two levels on 2x2 and 1x1: zero SE weights gate the mix at 0.5
        let a = Var::constant(Tensor::from_f64([1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = Var::constant(Tensor::from_f64([1, 1, 1], &[5.0]).unwrap());
        let pyr = FeaturePyramid { levels: vec![a, b] };
        let out = spatial_fuse(&pyr, &zero_se(2)).unwrap();
        assert_eq!(out.levels[0].value().data(), &[1.5, 3.0, 4.5, 6.0]);
        assert_eq!(out.levels[1].value().data(), &[7.5]);
    }

    #[test]
    fn spatial_fuse_constant_round_trip_and_shapes() {
        let levels = [(4, 8), (6, 4), (8, 2), (10, 1)].map(|(c, s)| Var::constant(Tensor::<f64>::full([c, s, s], 2.5)));
        let pyr = FeaturePyramid { levels: levels.to_vec() };
        let out = spatial_fuse(&pyr, &zero_se(28)).unwrap();
        assert_eq!(out.shapes(), pyr.shapes());
        for l in &out.levels {
            assert!(l.value().data().iter().all(|&v| (v - 3.75).abs() < 1e-12));
        }
        assert!(spatial_fuse(&pyr, &zero_se(27)).is_err());
    }

    #[test]
    fn channel_attention_cases() {
        let mut r = rng(1);
        let f = rand_var(&[5, 3, 3], &mut r);
        let hid = se_hidden(5);
        let zero = CbamParams { reduce: zeros(&[5, hid]), expand: zeros(&[hid, 5]), spatial: zeros(&[1, 2, 7, 7]) };
        assert!(channel_attention(&f, &zero).unwrap().value().data().iter().all(|&g| g == 0.5));
        let p = cbam(5, &mut r);
        let got = channel_attention(&f, &p).unwrap();
        let gap: Vec<f64> = (0..5).map(|c| f.value().data()[c * 9..(c + 1) * 9].iter().sum::<f64>() / 9.0).collect();
        let want = oracle::gate(&gap, p.reduce.value().data(), p.expand.value().data(), hid);
        for c in 0..5 {
            assert!((got.value().data()[c] - want[c]).abs() < 1e-12);
            assert!(want[c] > 0.0 && want[c] < 1.0);
        }
        let konst = Var::constant(Tensor::<f64>::full([5, 2, 2], 1.25));
        assert!(konst.mean(&[1, 2], false).unwrap().value().data().iter().all(|&g| g == 1.25));
    }

    #[test]
    fn spatial_attention_cases() {
        let mut r = rng(2);
        let f = rand_var(&[3, 5, 6], &mut r);
        let mut p = cbam(3, &mut r);
        p.spatial = zeros(&[1, 2, 7, 7]);
        let s = spatial_attention(&f, &p).unwrap();
        assert_eq!(s.shape(), [1, 5, 6]);
        assert!(s.value().data().iter().all(|&v| v == 0.5));

        let p = cbam(3, &mut r);
        let got = spatial_attention(&f, &p).unwrap();
        let x = f.value().data();
        let mut pooled = vec![0.0; 60];
        for i in 0..30 {
            let vals = [x[i], x[30 + i], x[60 + i]];
            pooled[i] = vals.iter().sum::<f64>() / 3.0;
            pooled[30 + i] = vals.iter().cloned().fold(f64::MIN, f64::max);
        }
        let (conv, _, _) = oracle::conv2d(&pooled, (2, 5, 6), p.spatial.value().data(), (1, 7, 7), 1, 3);
        for (a, b) in got.value().data().iter().zip(&conv) {
            assert!((a - oracle::sigmoid(*b)).abs() < 1e-12);
        }
    }

    #[test]
    fn temporal_fuse_symmetry_and_zero() {
        let mut r = rng(3);
        let p = cbam(6, &mut r);
        let a = rand_var(&[6, 4, 4], &mut r);
        let b = rand_var(&[6, 4, 4], &mut r);
        let ab = temporal_fuse(&a, &b, &p).unwrap();
        let ba = temporal_fuse(&b, &a, &p).unwrap();
        assert!(ab.value().bit_eq(ba.value()));
        let z = zeros(&[6, 4, 4]);
        assert!(temporal_fuse(&z, &z, &p).unwrap().value().data().iter().all(|&v| v == 0.0));
        assert!(temporal_fuse(&a, &zeros(&[6, 4, 3]), &p).is_err());
    }

    #[test]
    fn temporal_fuse_matches_composition() {
        let mut r = rng(4);
        let p = cbam(4, &mut r);
        let a = rand_var(&[4, 3, 5], &mut r);
        let b = rand_var(&[4, 3, 5], &mut r);
        let got = temporal_fuse(&a, &b, &p).unwrap();
        let ga = channel_attention(&a, &p).unwrap().value().to_vec();
        let gb = channel_attention(&b, &p).unwrap().value().to_vec();
        let (av, bv) = (a.value().data(), b.value().data());
        let a2: Vec<f64> = (0..60).map(|i| av[i] * gb[i / 15]).collect();
        let b2: Vec<f64> = (0..60).map(|i| bv[i] * ga[i / 15]).collect();
        let t = |v: &[f64]| Var::constant(Tensor::from_f64([4, 3, 5], v).unwrap());
        let sa = spatial_attention(&t(&a2), &p).unwrap().value().to_vec();
        let sb = spatial_attention(&t(&b2), &p).unwrap().value().to_vec();
        for i in 0..60 {
            let want = a2[i] * sb[i % 15] + b2[i] * sa[i % 15];
            assert!((got.value().data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn siamese_baselines() {
        let mut r = rng(5);
        let a = rand_var(&[3, 2, 2], &mut r);
        let b = rand_var(&[3, 2, 2], &mut r);
        assert!(fuse_siamdiff(&a, &a).unwrap().value().data().iter().all(|&v| v == 0.0));
        let d1 = fuse_siamdiff(&a, &b).unwrap();
        assert!(d1.value().bit_eq(fuse_siamdiff(&b, &a).unwrap().value()));
        for (i, v) in d1.value().data().iter().enumerate() {
            assert_eq!(*v, (a.value().data()[i] - b.value().data()[i]).abs());
        }
        assert!(fuse_siamconc(&a, &b, &zeros(&[3, 6, 1, 1])).unwrap().value().data().iter().all(|&v| v == 0.0));
        let mut eye = vec![0.0; 18];
        for c in 0..3 {
            eye[c * 6 + c] = 1.0;
        }
        let proj = Var::constant(Tensor::from_f64([3, 6, 1, 1], &eye).unwrap());
        let rec = fuse_siamconc(&a, &zeros(&[3, 2, 2]), &proj).unwrap();
        assert_eq!(rec.value().data(), a.value().data());
        let proj = rand_var(&[3, 6, 1, 1], &mut r);
        let got = fuse_siamconc(&a, &b, &proj).unwrap();
        let cat: Vec<f64> = a.value().data().iter().chain(b.value().data()).copied().collect();
        let (want, _, _) = oracle::conv2d(&cat, (6, 2, 2), proj.value().data(), (3, 1, 1), 1, 0);
        for (x, y) in got.value().data().iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_gradients() {
        let mut r = rng(6);
        let p = cbam(4, &mut r);
        let inputs = vec![
            Tensor::uniform([4, 5, 5], -1.0, 1.0, &mut r),
            Tensor::uniform([4, 5, 5], -1.0, 1.0, &mut r),
            p.reduce.value().clone(),
            p.expand.value().clone(),
            p.spatial.value().clone(),
        ];
        let g = check_gradients(
            &inputs,
            |v| {
                let p = CbamParams { reduce: v[2].clone(), expand: v[3].clone(), spatial: v[4].clone() };
                temporal_fuse(&v[0], &v[1], &p)
            },
            None,
            0,
        )
        .unwrap();
        assert!(g.passes(1e-5), "{}", g.max_rel_err);
    }

    #[test]
    fn spatial_fuse_gradient() {
        let mut r = rng(7);
        let pyr = pyramid(&[2, 3, 2, 3], 8, &mut r);
        let hid = se_hidden(10);
        let mut inputs: Vec<Tensor<f64>> = pyr.levels.iter().map(|l| l.value().clone()).collect();
        inputs.push(Tensor::uniform([10, hid], -1.0, 1.0, &mut r));
        inputs.push(Tensor::uniform([hid, 10], -1.0, 1.0, &mut r));
        let g = check_gradients(
            &inputs,
            |v| {
                let pyr = FeaturePyramid { levels: v[..4].to_vec() };
                let mix = ChannelMixParams::Se(SeParams { reduce: v[4].clone(), expand: v[5].clone() });
                let out = spatial_fuse(&pyr, &mix)?;
                let flat: Vec<Var<f64>> = out.levels.iter().map(|l| l.reshape(vec![l.value().numel()])).collect::<Result<_>>()?;
                Var::concat(&flat)
            },
            None,
            0,
        )
        .unwrap();
        assert!(g.passes(1e-5), "{}", g.max_rel_err);
    }
}
