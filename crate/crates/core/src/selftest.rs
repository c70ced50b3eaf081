//! Oracle and gradient suites, shared by the `selftest` command and the
//! acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{
    channel_mix_mlp, channel_mix_se, qshift, rwkv_block, spatial_mix, BlockParams, ChannelMixParams, MlpMixParams, SeParams,
    SpatialMixParams, MLP_EXPANSION,
};
use crate::encoder::ModelConfig;
use crate::error::Result;
use crate::numerics::gradcheck::{check_gradients_against, check_gradients_sampled, rel_err, GradCheck};
use crate::numerics::norm::{channel_layer_norm, group_norm};
use crate::numerics::{ResampleMode, Scalar, Tensor, Var};
use crate::objective::{bce_loss, confusion, dice_loss, metrics, total_loss, ConfusionCounts, DICE_EPS};
use crate::oracle;
use crate::params::Bound;
use crate::pipeline::ChangeRwkv;
use crate::stfm::{channel_attention, fuse_siamconc, fuse_siamdiff, spatial_attention, temporal_fuse, CbamParams};
use crate::wkv::{wkv, wkv_bidirectional, wkv_naive, wkv_recurrent, WkvKind, WkvParams};

/// One named measurement against its limit.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.limit
    }
}

fn tensor<S: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<S> {
    Tensor::uniform(shape.to_vec(), lo, hi, rng)
}

/// Values at least `gap` away from zero, for inputs of kinked functions.
fn away_from_zero<S: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng, gap: f64) -> Tensor<S> {
    let n = shape.iter().product::<usize>();
    let data: Vec<f64> = (0..n).map(|_| (gap + rng.gen_range(0.0..1.0)) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    Tensor::from_f64(shape.to_vec(), &data).expect("shape")
}

/// A random WKV problem with `T ≤ 64`, `d ≤ 16`.
fn wkv_case<S: Scalar>(rng: &mut ChaCha8Rng) -> (Tensor<S>, Tensor<S>, WkvParams<S>) {
    let t = rng.gen_range(1..=64);
    let d = rng.gen_range(1..=16);
    let k = tensor(&[t, d], rng, -2.0, 2.0);
    let v = tensor(&[t, d], rng, -1.0, 1.0);
    let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-4.0f64..1.0).exp()).collect();
    let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (k, v, WkvParams::from_f64(&w, &u).expect("params"))
}

/// Worst norm-wise relative error of the recurrent kernel against the
/// quadratic one.
pub fn wkv_causal_error<S: Scalar>(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (k, v, p) = wkv_case::<S>(&mut rng);
        let fast = wkv_recurrent(&k, &v, &p)?.to_f64_vec();
        let slow = wkv_naive(&k, &v, &p)?.to_f64_vec();
        worst = worst.max(rel_err(&fast, &slow, 1e-12));
    }
    Ok(worst)
}

/// Worst norm-wise relative error of the bidirectional kernel against the
/// double-loop oracle.
pub fn wkv_bidirectional_error<S: Scalar>(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (k, v, p) = wkv_case::<S>(&mut rng);
        let (t, d) = (k.shape()[0], k.shape()[1]);
        let fast = wkv_bidirectional(&k, &v, &p)?.to_f64_vec();
        let slow = oracle::wkv_bidirectional(&k.to_f64_vec(), &v.to_f64_vec(), &p.w.to_f64_vec(), &p.u.to_f64_vec(), t, d);
        worst = worst.max(rel_err(&fast, &slow, 1e-12));
    }
    Ok(worst)
}

fn reverse_rows<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    let d = t.shape()[1];
    let rows: Vec<S> = t.data().chunks(d).rev().flatten().copied().collect();
    Tensor::from_vec(t.shape().to_vec(), rows).expect("shape")
}

/// Number of cases where reversing the sequence does not exactly reverse
/// the bidirectional output.
pub fn wkv_reversal_mismatches<S: Scalar>(cases: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..cases {
        let (k, v, p) = wkv_case::<S>(&mut rng);
        let y = wkv_bidirectional(&k, &v, &p)?;
        let yr = wkv_bidirectional(&reverse_rows(&k), &reverse_rows(&v), &p)?;
        if !reverse_rows(&yr).bit_eq(&y) {
            bad += 1;
        }
    }
    Ok(bad)
}

type GradFn<S> = Box<dyn Fn(&[Var<S>]) -> Result<Var<S>>>;

struct Case<S: Scalar> {
    name: &'static str,
    inputs: Vec<Tensor<S>>,
    f: GradFn<S>,
}

fn case<S: Scalar>(name: &'static str, inputs: Vec<Tensor<S>>, f: impl Fn(&[Var<S>]) -> Result<Var<S>> + 'static) -> Case<S> {
    Case { name, inputs, f: Box::new(f) }
}

fn spatial_params<S: Scalar>(v: &[Var<S>]) -> SpatialMixParams<S> {
    SpatialMixParams {
        w_r: v[0].clone(),
        w_k: v[1].clone(),
        w_v: v[2].clone(),
        w_o: v[3].clone(),
        mu_r: v[4].clone(),
        mu_k: v[5].clone(),
        mu_v: v[6].clone(),
        w_raw: v[7].clone(),
        u: v[8].clone(),
    }
}

fn spatial_inputs<S: Scalar>(d: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor<S>> {
    let s = 1.0 / (d as f64).sqrt();
    let mut v: Vec<Tensor<S>> = (0..4).map(|_| tensor(&[d, d], rng, -s, s)).collect();
    for _ in 0..3 {
        v.push(tensor(&[d], rng, 0.1, 0.9));
    }
    v.push(tensor(&[d], rng, -1.5, 0.5));
    v.push(tensor(&[d], rng, -0.5, 0.5));
    v
}

fn cases<S: Scalar>(seed: u64) -> Vec<Case<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut out = Vec::new();

    out.push(case("add_broadcast", vec![tensor(&[3, 4], r, -1.0, 1.0), tensor(&[4], r, -1.0, 1.0)], |v| v[0].add(&v[1])));
    out.push(case("sub_broadcast", vec![tensor(&[2, 3, 2], r, -1.0, 1.0), tensor(&[3, 1], r, -1.0, 1.0)], |v| v[0].sub(&v[1])));
    out.push(case("mul_broadcast", vec![tensor(&[3, 4], r, -1.0, 1.0), tensor(&[3, 1], r, -1.0, 1.0)], |v| v[0].mul(&v[1])));
    out.push(case("div", vec![tensor(&[3, 4], r, -1.0, 1.0), tensor(&[3, 4], r, 0.5, 1.5)], |v| v[0].div(&v[1])));
    out.push(case("neg", vec![tensor(&[5], r, -1.0, 1.0)], |v| v[0].neg()));
    out.push(case("exp", vec![tensor(&[6], r, -1.0, 1.0)], |v| v[0].exp()));
    out.push(case("ln", vec![tensor(&[6], r, 0.5, 2.0)], |v| v[0].ln()));
    out.push(case("sigmoid", vec![tensor(&[6], r, -3.0, 3.0)], |v| v[0].sigmoid()));
    out.push(case("relu", vec![away_from_zero(&[8], r, 0.1)], |v| v[0].relu()));
    out.push(case("square", vec![tensor(&[6], r, -1.0, 1.0)], |v| v[0].square()));
    out.push(case("abs", vec![away_from_zero(&[8], r, 0.1)], |v| v[0].abs()));
    out.push(case("max_const", vec![away_from_zero(&[8], r, 0.1)], |v| v[0].max_const(0.0)));
    out.push(case("clamp", vec![away_from_zero(&[8], r, 0.1)], |v| v[0].affine(1.0, 0.55)?.clamp(0.0, 1.0)));
    out.push(case("powf", vec![tensor(&[6], r, 0.5, 2.0)], |v| v[0].powf(-0.5)));
    out.push(case("affine", vec![tensor(&[6], r, -1.0, 1.0)], |v| v[0].affine(1.7, -0.3)));
    out.push(case("one_minus", vec![tensor(&[6], r, -1.0, 1.0)], |v| v[0].one_minus()));
    out.push(case("matmul", vec![tensor(&[3, 5], r, -1.0, 1.0), tensor(&[5, 2], r, -1.0, 1.0)], |v| v[0].matmul(&v[1])));
    out.push(case("reshape_transpose", vec![tensor(&[2, 6], r, -1.0, 1.0)], |v| v[0].reshape(vec![4, 3])?.transpose()));
    out.push(case("concat_narrow", vec![tensor(&[2, 3], r, -1.0, 1.0), tensor(&[3, 3], r, -1.0, 1.0)], |v| {
        Var::concat(&[v[0].clone(), v[1].clone()])?.narrow(1, 3)
    }));
    out.push(case("sum_axis", vec![tensor(&[3, 4, 2], r, -1.0, 1.0)], |v| v[0].sum(&[1], false)));
    out.push(case("mean_axes", vec![tensor(&[3, 4, 2], r, -1.0, 1.0)], |v| v[0].mean(&[0, 2], true)));
    let spaced: Vec<f64> = {
        let mut vals: Vec<f64> = (0..12).map(|i| i as f64 * 0.1 - 0.55).collect();
        for i in (1..vals.len()).rev() {
            let j = r.gen_range(0..=i);
            vals.swap(i, j);
        }
        vals
    };
    out.push(case("max_axis", vec![Tensor::from_f64(vec![3, 4], &spaced).expect("shape")], |v| v[0].max(&[1], false)));
    out.push(case("conv_same_bias", vec![tensor(&[2, 5, 6], r, -1.0, 1.0), tensor(&[3, 2, 3, 3], r, -0.5, 0.5), tensor(&[3], r, -0.5, 0.5)], |v| {
        v[0].conv2d(&v[1], Some(&v[2]), 1, 1)
    }));
    out.push(case("conv_stride2", vec![tensor(&[2, 6, 6], r, -1.0, 1.0), tensor(&[3, 2, 3, 3], r, -0.5, 0.5)], |v| v[0].conv2d(&v[1], None, 2, 1)));
    out.push(case("conv_pointwise", vec![tensor(&[4, 3, 3], r, -1.0, 1.0), tensor(&[2, 4, 1, 1], r, -0.5, 0.5)], |v| v[0].conv2d(&v[1], None, 1, 0)));
    out.push(case("conv_7x7_small_map", vec![tensor(&[2, 2, 3], r, -1.0, 1.0), tensor(&[1, 2, 7, 7], r, -0.5, 0.5)], |v| v[0].conv2d(&v[1], None, 1, 3)));
    out.push(case("bilinear_up", vec![tensor(&[2, 3, 2], r, -1.0, 1.0)], |v| v[0].resample2d(6, 4, ResampleMode::BilinearUp)));
    out.push(case("avgpool_down", vec![tensor(&[2, 4, 6], r, -1.0, 1.0)], |v| v[0].resample2d(2, 3, ResampleMode::AvgPoolDown)));
    out.push(case("nearest_up", vec![tensor(&[2, 2, 2], r, -1.0, 1.0)], |v| v[0].resample2d(4, 4, ResampleMode::NearestUp)));
    out.push(case("layer_norm", vec![tensor(&[4, 3, 2], r, -1.0, 1.0), tensor(&[4], r, 0.5, 1.5), tensor(&[4], r, -0.5, 0.5)], |v| {
        channel_layer_norm(&v[0], &v[1], &v[2])
    }));
    out.push(case("group_norm", vec![tensor(&[4, 3, 2], r, -1.0, 1.0), tensor(&[4], r, 0.5, 1.5), tensor(&[4], r, -0.5, 0.5)], |v| {
        group_norm(&v[0], 2, &v[1], &v[2])
    }));
    for (name, kind) in [("wkv_causal", WkvKind::Causal), ("wkv_bidirectional", WkvKind::Bidirectional)] {
        out.push(case(
            name,
            vec![tensor(&[8, 4], r, -1.0, 1.0), tensor(&[8, 4], r, -1.0, 1.0), tensor(&[4], r, 0.1, 1.0), tensor(&[4], r, -0.5, 0.5)],
            move |v| wkv(kind, &v[0], &v[1], &v[2], &v[3]),
        ));
    }
    out.push(case("qshift", vec![tensor(&[6, 3, 4], r, -1.0, 1.0)], |v| qshift(&v[0])));
    {
        let mut inputs = vec![tensor(&[6, 4], r, -1.0, 1.0), tensor(&[6, 4], r, -1.0, 1.0)];
        inputs.extend(spatial_inputs(4, r));
        out.push(case("spatial_mix", inputs, |v| spatial_mix(&v[0], &v[1], &spatial_params(&v[2..]))));
    }
    out.push(case("channel_mix_se", vec![tensor(&[4, 3, 3], r, -1.0, 1.0), tensor(&[4, 8], r, -0.5, 0.5), tensor(&[8, 4], r, -0.5, 0.5)], |v| {
        channel_mix_se(&v[0], &SeParams { reduce: v[1].clone(), expand: v[2].clone() })
    }));
    let e = MLP_EXPANSION;
    out.push(case("channel_mix_mlp", vec![tensor(&[5, 3], r, -1.0, 1.0), tensor(&[3, e * 3], r, -0.5, 0.5), tensor(&[e * 3, 3], r, -0.5, 0.5)], |v| {
        channel_mix_mlp(&v[0], &MlpMixParams { w1: v[1].clone(), w2: v[2].clone() })
    }));
    {
        let mut inputs = vec![tensor(&[4, 3, 3], r, -1.0, 1.0), tensor(&[4], r, 0.5, 1.5), tensor(&[4], r, -0.3, 0.3)];
        inputs.extend(spatial_inputs(4, r));
        inputs.extend([tensor(&[4], r, 0.5, 1.5), tensor(&[4], r, -0.3, 0.3), tensor(&[4, 8], r, -0.5, 0.5), tensor(&[8, 4], r, -0.5, 0.5)]);
        out.push(case("rwkv_block", inputs, |v| {
            let p = BlockParams {
                norm1: (v[1].clone(), v[2].clone()),
                spatial: spatial_params(&v[3..12]),
                norm2: (v[12].clone(), v[13].clone()),
                channel: ChannelMixParams::Se(SeParams { reduce: v[14].clone(), expand: v[15].clone() }),
            };
            rwkv_block(&v[0], &p)
        }));
    }
    let cbam = |v: &[Var<S>]| CbamParams { reduce: v[0].clone(), expand: v[1].clone(), spatial: v[2].clone() };
    let cbam_inputs = |r: &mut ChaCha8Rng| vec![tensor(&[4, 8], r, -0.5, 0.5), tensor(&[8, 4], r, -0.5, 0.5), tensor(&[1, 2, 7, 7], r, -0.3, 0.3)];
    {
        let mut inputs = vec![tensor(&[4, 3, 3], r, -1.0, 1.0)];
        inputs.extend(cbam_inputs(r));
        out.push(case("channel_attention", inputs.clone(), move |v| channel_attention(&v[0], &cbam(&v[1..]))));
        out.push(case("spatial_attention", inputs, move |v| spatial_attention(&v[0], &cbam(&v[1..]))));
    }
    {
        let mut inputs = vec![tensor(&[4, 3, 3], r, -1.0, 1.0), tensor(&[4, 3, 3], r, -1.0, 1.0)];
        inputs.extend(cbam_inputs(r));
        out.push(case("temporal_fuse", inputs, move |v| temporal_fuse(&v[0], &v[1], &cbam(&v[2..]))));
    }
    {
        let a = tensor::<S>(&[3, 2, 2], r, -1.0, 1.0);
        let gap = away_from_zero::<S>(&[3, 2, 2], r, 0.1);
        let b = a.zip_same(&gap, |x, g| x + g);
        out.push(case("fuse_siamdiff", vec![a, b], |v| fuse_siamdiff(&v[0], &v[1])));
    }
    out.push(case("fuse_siamconc", vec![tensor(&[3, 2, 2], r, -1.0, 1.0), tensor(&[3, 2, 2], r, -1.0, 1.0), tensor(&[3, 6, 1, 1], r, -0.5, 0.5)], |v| {
        fuse_siamconc(&v[0], &v[1], &v[2])
    }));
    let target: Tensor<S> = tensor::<S>(&[4, 4], r, 0.0, 1.0).map(|x| if x > S::of(0.5) { S::one() } else { S::zero() });
    let (t1, t2, t3) = (target.clone(), target.clone(), target);
    out.push(case("bce_loss", vec![tensor(&[4, 4], r, 0.05, 0.95)], move |v| bce_loss(&t1, &v[0])));
    out.push(case("dice_loss", vec![tensor(&[4, 4], r, 0.05, 0.95)], move |v| dice_loss(&t2, &v[0], DICE_EPS)));
    out.push(case("total_loss", vec![tensor(&[4, 4], r, 0.05, 0.95)], move |v| total_loss(&t3, &v[0], 1.0)));
    out
}

/// Random draws per op in [`gradient_suite`].
pub const GRADIENT_DRAWS: usize = 20;

/// Finite-difference checks of every differentiable op and the composite
/// blocks built from them, worst case over `draws` random inputs each.
///
/// The gradient recorded in `S` is compared with central differences of the
/// same op evaluated in `f64` at the same input values.
pub fn gradient_suite<S: Scalar>(seed: u64, draws: usize) -> Result<Vec<(&'static str, GradCheck)>> {
    let mut out: Vec<(&'static str, GradCheck)> = Vec::new();
    for d in 0..draws as u64 {
        let draw_seed = seed.wrapping_mul(1_000_003).wrapping_add(d);
        for (i, (c, r)) in cases::<S>(draw_seed).into_iter().zip(cases::<f64>(draw_seed)).enumerate() {
            let g = check_gradients_against(&c.inputs, &c.f, &r.f, draw_seed ^ ((i as u64) << 32))?;
            match out.get_mut(i) {
                Some((_, acc)) => {
                    acc.max_rel_err = acc.max_rel_err.max(g.max_rel_err);
                    acc.checked += g.checked;
                }
                None => out.push((c.name, g)),
            }
        }
    }
    Ok(out)
}

/// Checks `count` random parameters of the probe-sized model on a 32×32
/// pair through the full loss.
pub fn end_to_end_gradient<S: Scalar>(count: usize, seed: u64) -> Result<GradCheck> {
    let model = ChangeRwkv::<S>::new(ModelConfig::probe(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let a = Var::constant(tensor::<S>(&[3, 32, 32], &mut rng, 0.0, 1.0));
    let b = Var::constant(tensor::<S>(&[3, 32, 32], &mut rng, 0.0, 1.0));
    let target = tensor::<S>(&[32, 32], &mut rng, 0.0, 1.0).map(|x| if x > S::of(0.7) { S::one() } else { S::zero() });
    let params: Vec<Tensor<S>> = model.store.iter().map(|(_, t)| t.clone()).collect();
    check_gradients_sampled(
        &params,
        |vars| {
            let bound = Bound::from_vars(vars.to_vec());
            total_loss(&target, &model.forward(&bound, &a, &b)?, 1.0)
        },
        count,
        seed,
    )
}

/// Largest `|F1 − 2·IoU/(1+IoU)|` over random confusion sets.
pub fn f1_iou_identity_gap(sets: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..sets)
        .map(|_| {
            let c = ConfusionCounts { tp: rng.gen_range(1..1000), fp: rng.gen_range(0..1000), fn_: rng.gen_range(0..1000), tn: rng.gen_range(0..1000) };
            let m = metrics(&c);
            (m.f1 - 2.0 * m.iou / (1.0 + m.iou)).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest deviation of the loss and metric identities with closed forms.
pub fn loss_analytics<S: Scalar>() -> Result<Vec<Check>> {
    let m = Tensor::<S>::from_f64(vec![2, 2], &[1.0, 0.0, 0.0, 1.0])?;
    let half = Var::constant(Tensor::full(vec![2, 2], S::of(0.5)));
    let bce = bce_loss(&m, &half)?.value().item()?.as_f64();
    let ones = Tensor::<S>::ones(vec![3, 3]);
    let zeros = Tensor::<S>::zeros(vec![3, 3]);
    let dice_full = dice_loss(&ones, &Var::constant(ones.clone()), DICE_EPS)?.value().item()?.as_f64();
    let dice_empty = dice_loss(&zeros, &Var::constant(zeros.clone()), DICE_EPS)?.value().item()?.as_f64();
    let c = confusion(&m, &m, 0.5)?;
    Ok(vec![
        Check { name: "bce at 0.5 vs ln 2".into(), value: (bce - std::f64::consts::LN_2).abs(), limit: 1e-6 },
        Check { name: "dice perfect".into(), value: dice_full.abs(), limit: 0.0 },
        Check { name: "dice empty".into(), value: dice_empty.abs(), limit: 0.0 },
        Check { name: "perfect confusion errors".into(), value: (c.fp + c.fn_) as f64, limit: 0.0 },
        Check { name: "F1/IoU identity".into(), value: f1_iou_identity_gap(100, 3), limit: 1e-12 },
    ])
}

/// Largest relative gap between `forward(A, B)` and `forward(B, A)`.
pub fn swap_asymmetry<S: Scalar>(cfg: &ModelConfig, pairs: usize, side: usize, seed: u64) -> Result<f64> {
    let model = ChangeRwkv::<S>::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let a = tensor::<S>(&[cfg.in_channels, side, side], &mut rng, 0.0, 1.0);
        let b = tensor::<S>(&[cfg.in_channels, side, side], &mut rng, 0.0, 1.0);
        let ab = model.predict(&a, &b)?.to_f64_vec();
        let ba = model.predict(&b, &a)?.to_f64_vec();
        worst = worst.max(rel_err(&ab, &ba, 1e-12));
    }
    Ok(worst)
}

/// Runs every suite with its tolerance.
pub fn run_all() -> Result<Vec<Check>> {
    let mut out = vec![
        Check { name: "wkv recurrent vs naive (f32)".into(), value: wkv_causal_error::<f32>(100, 1)?, limit: 1e-5 },
        Check { name: "wkv recurrent vs naive (f64)".into(), value: wkv_causal_error::<f64>(100, 1)?, limit: 1e-10 },
        Check { name: "wkv bidirectional vs oracle (f32)".into(), value: wkv_bidirectional_error::<f32>(100, 2)?, limit: 1e-5 },
        Check { name: "wkv bidirectional vs oracle (f64)".into(), value: wkv_bidirectional_error::<f64>(100, 2)?, limit: 1e-10 },
        Check { name: "wkv reversal mismatches (f64)".into(), value: wkv_reversal_mismatches::<f64>(100, 3)? as f64, limit: 0.0 },
    ];
    for (name, g) in gradient_suite::<f32>(10, GRADIENT_DRAWS)? {
        out.push(Check { name: format!("gradient {name} (f32)"), value: g.max_rel_err, limit: 1e-3 });
    }
    for (name, g) in gradient_suite::<f64>(10, GRADIENT_DRAWS)? {
        if name == "total_loss" {
            out.push(Check { name: "gradient total_loss wrt prediction (f64)".into(), value: g.max_rel_err, limit: 1e-6 });
        }
        out.push(Check { name: format!("gradient {name} (f64)"), value: g.max_rel_err, limit: 1e-5 });
    }
    out.push(Check { name: "gradient end-to-end probe model (f64)".into(), value: end_to_end_gradient::<f64>(50, 7)?.max_rel_err, limit: 1e-5 });
    out.extend(loss_analytics::<f64>()?);
    out.push(Check { name: "temporal swap asymmetry (f32)".into(), value: swap_asymmetry::<f32>(&ModelConfig::nano(), 3, 32, 4)?, limit: 0.0 });
    Ok(out)
}
