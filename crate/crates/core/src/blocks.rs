//! The vision RWKV block: quad-directional token shift, bidirectional
//! spatial mixing, and channel mixing (squeeze-excite or squared-ReLU MLP).
//!
//! Feature maps are `[C, H, W]`. Spatial mixing runs on the row-major token
//! view `[H*W, C]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::norm::channel_layer_norm;
use crate::numerics::{BackwardCtx, Scalar, Tensor, Var};
use crate::params::{Bound, ParamId, ParamStore};
use crate::wkv::{wkv, WkvKind};

pub const SE_REDUCTION: usize = 4;
pub const SE_MIN_HIDDEN: usize = 8;
pub const MLP_EXPANSION: usize = 4;

/// Bottleneck width of the squeeze-excite MLP for `channels`.
pub fn se_hidden(channels: usize) -> usize {
    channels.div_ceil(SE_REDUCTION).max(SE_MIN_HIDDEN)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMixKind {
    /// Squeeze-and-excitation gating (the default).
    Se,
    /// Squared-ReLU token MLP.
    Mlp,
}

impl ChannelMixKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "se" => Ok(Self::Se),
            "mlp" => Ok(Self::Mlp),
            _ => Err(Error::Config(format!("unknown channel mix {s:?} (expected se or mlp)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Se => "se",
            Self::Mlp => "mlp",
        }
    }
}

fn chw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [c, h, w] => Ok((*c, *h, *w)),
        _ => Err(Error::shape(op, format!("expected [C, H, W], got {shape:?}"))),
    }
}

/// Shift offsets `(dy, dx)` read by channel `ch` of `c`.
fn shift_of(ch: usize, c: usize) -> (isize, isize) {
    let q = c / 4;
    let group = if q == 0 { 3 } else { (ch / q).min(3) };
    [(0, -1), (0, 1), (-1, 0), (1, 0)][group]
}

fn shift_values<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, adjoint: bool) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for ch in 0..c {
        let (dy, dx) = shift_of(ch, c);
        let plane = ch * h * w;
        for y in 0..h {
            let sy = y as isize + dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for xx in 0..w {
                let sx = xx as isize + dx;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                let dst = plane + y * w + xx;
                let src = plane + sy as usize * w + sx as usize;
                if adjoint {
                    out[src] = x[dst];
                } else {
                    out[dst] = x[src];
                }
            }
        }
    }
    out
}

/// Quad-directional shift: channel quarters take their left, right, upper
/// and lower neighbour respectively; the last quarter absorbs any remainder.
pub fn qshift<S: Scalar>(x: &Var<S>) -> Result<Var<S>> {
    let (c, h, w) = chw("qshift", x.shape())?;
    if h == 0 || w == 0 {
        return Err(Error::shape("qshift", "empty spatial extent"));
    }
    let value = Tensor::from_vec(x.shape().to_vec(), shift_values(x.value().data(), c, h, w, false))?;
    Var::from_op("qshift", value, vec![x.clone()], move |ctx: &BackwardCtx<'_, S>| {
        let g = shift_values(ctx.grad.data(), c, h, w, true);
        Ok(vec![Some(Tensor::from_vec(vec![c, h, w], g)?)])
    })
}

/// `[C, H, W]` to row-major tokens `[H*W, C]`.
pub fn to_tokens<S: Scalar>(x: &Var<S>) -> Result<Var<S>> {
    let (c, h, w) = chw("to_tokens", x.shape())?;
    x.reshape(vec![c, h * w])?.transpose()
}

/// Inverse of [`to_tokens`].
pub fn from_tokens<S: Scalar>(t: &Var<S>, h: usize, w: usize) -> Result<Var<S>> {
    let c = t.shape().get(1).copied().ok_or_else(|| Error::shape("from_tokens", "expected [N, C]"))?;
    t.transpose()?.reshape(vec![c, h, w])
}

pub struct SpatialMixParams<S: Scalar> {
    pub w_r: Var<S>,
    pub w_k: Var<S>,
    pub w_v: Var<S>,
    pub w_o: Var<S>,
    pub mu_r: Var<S>,
    pub mu_k: Var<S>,
    pub mu_v: Var<S>,
    /// Log of the effective decay.
    pub w_raw: Var<S>,
    pub u: Var<S>,
}

pub struct SeParams<S: Scalar> {
    pub reduce: Var<S>,
    pub expand: Var<S>,
}

pub struct MlpMixParams<S: Scalar> {
    pub w1: Var<S>,
    pub w2: Var<S>,
}

pub enum ChannelMixParams<S: Scalar> {
    Se(SeParams<S>),
    Mlp(MlpMixParams<S>),
}

pub struct BlockParams<S: Scalar> {
    pub norm1: (Var<S>, Var<S>),
    pub spatial: SpatialMixParams<S>,
    pub norm2: (Var<S>, Var<S>),
    pub channel: ChannelMixParams<S>,
}

fn check_matrix<S: Scalar>(op: &'static str, m: &Var<S>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != [rows, cols] {
        return Err(Error::shape(op, format!("weight {:?}, expected [{rows}, {cols}]", m.shape())));
    }
    Ok(())
}

/// Token mixing over `x: [N, d]` with the shifted view `shifted: [N, d]`.
pub fn spatial_mix<S: Scalar>(x: &Var<S>, shifted: &Var<S>, p: &SpatialMixParams<S>) -> Result<Var<S>> {
    if x.shape() != shifted.shape() || x.shape().len() != 2 {
        return Err(Error::shape("spatial_mix", format!("x {:?} vs shifted {:?}", x.shape(), shifted.shape())));
    }
    let d = x.shape()[1];
    for m in [&p.w_r, &p.w_k, &p.w_v, &p.w_o] {
        check_matrix("spatial_mix", m, d, d)?;
    }
    for v in [&p.mu_r, &p.mu_k, &p.mu_v, &p.w_raw, &p.u] {
        if v.shape() != [d] {
            return Err(Error::shape("spatial_mix", format!("vector {:?} for width {d}", v.shape())));
        }
    }
    let mix = |mu: &Var<S>| -> Result<Var<S>> {
        let mu = mu.clamp(0.0, 1.0)?;
        x.mul(&mu)?.add(&shifted.mul(&mu.one_minus()?)?)
    };
    let r = mix(&p.mu_r)?.matmul(&p.w_r)?;
    let k = mix(&p.mu_k)?.matmul(&p.w_k)?;
    let v = mix(&p.mu_v)?.matmul(&p.w_v)?;
    let agg = wkv(WkvKind::Bidirectional, &k, &v, &p.w_raw.exp()?, &p.u)?;
    r.sigmoid()?.mul(&agg)?.matmul(&p.w_o)
}

/// Per-channel gate `σ(expand · relu(reduce · GAP(x)))` applied to `x: [C, H, W]`.
pub fn channel_mix_se<S: Scalar>(x: &Var<S>, p: &SeParams<S>) -> Result<Var<S>> {
    let (c, _, _) = chw("channel_mix_se", x.shape())?;
    let hid = p.reduce.shape().get(1).copied().unwrap_or(0);
    check_matrix("channel_mix_se", &p.reduce, c, hid)?;
    check_matrix("channel_mix_se", &p.expand, hid, c)?;
    let gate = se_gate(x, p)?;
    x.mul(&gate.reshape(vec![c, 1, 1])?)
}

/// The squeeze-excite gate alone, shape `[1, C]`.
fn se_gate<S: Scalar>(x: &Var<S>, p: &SeParams<S>) -> Result<Var<S>> {
    let c = x.shape()[0];
    let gap = x.mean(&[1, 2], false)?.reshape(vec![1, c])?;
    gap.matmul(&p.reduce)?.relu()?.matmul(&p.expand)?.sigmoid()
}

/// `W₂ · relu(W₁ · x)²` for every token of `x: [N, d]`.
pub fn channel_mix_mlp<S: Scalar>(x: &Var<S>, p: &MlpMixParams<S>) -> Result<Var<S>> {
    let d = x.shape().get(1).copied().ok_or_else(|| Error::shape("channel_mix_mlp", "expected [N, d]"))?;
    check_matrix("channel_mix_mlp", &p.w1, d, MLP_EXPANSION * d)?;
    check_matrix("channel_mix_mlp", &p.w2, MLP_EXPANSION * d, d)?;
    x.matmul(&p.w1)?.relu()?.square()?.matmul(&p.w2)
}

/// Channel mixing of a `[C, H, W]` map with either variant.
pub fn channel_mix<S: Scalar>(x: &Var<S>, p: &ChannelMixParams<S>) -> Result<Var<S>> {
    match p {
        ChannelMixParams::Se(se) => channel_mix_se(x, se),
        ChannelMixParams::Mlp(mlp) => {
            let (_, h, w) = chw("channel_mix", x.shape())?;
            from_tokens(&channel_mix_mlp(&to_tokens(x)?, mlp)?, h, w)
        }
    }
}

/// Pre-norm residual block: `x + mix(LN₁ x)`, then `+ channel(LN₂ ·)`.
pub fn rwkv_block<S: Scalar>(x: &Var<S>, p: &BlockParams<S>) -> Result<Var<S>> {
    let (_, h, w) = chw("rwkv_block", x.shape())?;
    let n1 = channel_layer_norm(x, &p.norm1.0, &p.norm1.1)?;
    let shifted = qshift(&n1)?;
    let mixed = spatial_mix(&to_tokens(&n1)?, &to_tokens(&shifted)?, &p.spatial)?;
    let x1 = x.add(&from_tokens(&mixed, h, w)?)?;
    let n2 = channel_layer_norm(&x1, &p.norm2.0, &p.norm2.1)?;
    x1.add(&channel_mix(&n2, &p.channel)?)
}

/// Where a block's tensors live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct BlockIds {
    norm1: (ParamId, ParamId),
    spatial: [ParamId; 9],
    norm2: (ParamId, ParamId),
    channel: ChannelMixIds,
}

/// Where a channel-mixing sub-layer's weights live.
#[derive(Debug, Clone)]
pub struct ChannelMixIds {
    kind: ChannelMixKind,
    first: ParamId,
    second: ParamId,
}

impl ChannelMixIds {
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        d: usize,
        kind: ChannelMixKind,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (first, second) = match kind {
            ChannelMixKind::Se => {
                let hid = se_hidden(d);
                (
                    store.fan_in(format!("{prefix}.reduce"), &[d, hid], d, rng)?,
                    store.fan_in(format!("{prefix}.expand"), &[hid, d], hid, rng)?,
                )
            }
            ChannelMixKind::Mlp => {
                let e = MLP_EXPANSION * d;
                (
                    store.fan_in(format!("{prefix}.w1"), &[d, e], d, rng)?,
                    store.fan_in(format!("{prefix}.w2"), &[e, d], e, rng)?,
                )
            }
        };
        Ok(Self { kind, first, second })
    }

    pub fn bind<S: Scalar>(&self, b: &Bound<S>) -> ChannelMixParams<S> {
        let (first, second) = (b.var(self.first).clone(), b.var(self.second).clone());
        match self.kind {
            ChannelMixKind::Se => ChannelMixParams::Se(SeParams { reduce: first, expand: second }),
            ChannelMixKind::Mlp => ChannelMixParams::Mlp(MlpMixParams { w1: first, w2: second }),
        }
    }
}

impl BlockIds {
    /// Registers a block of width `d` under `prefix` (e.g. `stage1.block0`).
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        d: usize,
        kind: ChannelMixKind,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let sp = format!("{prefix}.spatial");
        let norm1 = (store.ones(format!("{sp}.ln_gamma"), &[d])?, store.zeros(format!("{sp}.ln_beta"), &[d])?);
        let w_r = store.fan_in(format!("{sp}.w_r"), &[d, d], d, rng)?;
        let w_k = store.fan_in(format!("{sp}.w_k"), &[d, d], d, rng)?;
        let w_v = store.fan_in(format!("{sp}.w_v"), &[d, d], d, rng)?;
        let w_o = store.fan_in(format!("{sp}.w_o"), &[d, d], d, rng)?;
        let half = Tensor::full([d], S::of(0.5));
        let mu_r = store.add(format!("{sp}.mu_r"), half.clone())?;
        let mu_k = store.add(format!("{sp}.mu_k"), half.clone())?;
        let mu_v = store.add(format!("{sp}.mu_v"), half)?;
        let ramp: Vec<f64> = (0..d).map(|c| (std::f64::consts::LN_2 * (c + 1) as f64).ln()).collect();
        let w_raw = store.add(format!("{sp}.w_raw"), Tensor::from_f64([d], &ramp)?)?;
        let u = store.zeros(format!("{sp}.u"), &[d])?;

        let ch = format!("{prefix}.channel");
        let norm2 = (store.ones(format!("{ch}.ln_gamma"), &[d])?, store.zeros(format!("{ch}.ln_beta"), &[d])?);
        let channel = ChannelMixIds::register(store, &ch, d, kind, rng)?;
        Ok(Self { norm1, spatial: [w_r, w_k, w_v, w_o, mu_r, mu_k, mu_v, w_raw, u], norm2, channel })
    }

    pub fn bind<S: Scalar>(&self, b: &Bound<S>) -> BlockParams<S> {
        let v = |id: ParamId| b.var(id).clone();
        let s = &self.spatial;
        BlockParams {
            norm1: (v(self.norm1.0), v(self.norm1.1)),
            spatial: SpatialMixParams {
                w_r: v(s[0]),
                w_k: v(s[1]),
                w_v: v(s[2]),
                w_o: v(s[3]),
                mu_r: v(s[4]),
                mu_k: v(s[5]),
                mu_v: v(s[6]),
                w_raw: v(s[7]),
                u: v(s[8]),
            },
            norm2: (v(self.norm2.0), v(self.norm2.1)),
            channel: self.channel.bind(b),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradients;
    use crate::oracle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn konst(shape: &[usize], data: Vec<f64>) -> Var<f64> {
        Var::constant(Tensor::from_f64(shape.to_vec(), &data).unwrap())
    }

    fn rand_var(shape: &[usize], r: &mut ChaCha8Rng) -> Var<f64> {
        Var::constant(Tensor::uniform(shape.to_vec(), -1.0, 1.0, r))
    }

    fn random_spatial(d: usize, r: &mut ChaCha8Rng) -> SpatialMixParams<f64> {
        SpatialMixParams {
            w_r: rand_var(&[d, d], r),
            w_k: rand_var(&[d, d], r),
            w_v: rand_var(&[d, d], r),
            w_o: rand_var(&[d, d], r),
            mu_r: Var::constant(Tensor::uniform([d], 0.0, 1.0, r)),
            mu_k: Var::constant(Tensor::uniform([d], 0.0, 1.0, r)),
            mu_v: Var::constant(Tensor::uniform([d], 0.0, 1.0, r)),
            w_raw: rand_var(&[d], r),
            u: rand_var(&[d], r),
        }
    }

    #[test]
    fn qshift_constant_and_borders() {
        let x = konst(&[4, 3, 3], vec![2.0; 36]);
        let y = qshift(&x).unwrap();
        let y = y.value().data();
        for ch in 0..4 {
            assert_eq!(y[ch * 9 + 4], 2.0);
        }
        assert_eq!(y[3], 0.0); // left column of the "from left" quarter
        assert_eq!(y[9 + 5], 0.0); // right column of the "from right" quarter
        assert_eq!(y[18 + 1], 0.0); // top row of the "from above" quarter
        assert_eq!(y[27 + 7], 0.0); // bottom row of the "from below" quarter
    }

    #[test]
    fn qshift_single_pixel_is_zero() {
        let x = konst(&[6, 1, 1], vec![1.0, -2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(qshift(&x).unwrap().value().data().iter().all(|&v| v == 0.0));
        assert!(qshift(&konst(&[2, 0, 3], vec![])).is_err());
    }

    #[test]
    fn qshift_matches_index_oracle() {
        let mut r = rng(1);
        for c in [4, 7, 3] {
            let x = Tensor::<f64>::uniform([c, 8, 8], -1.0, 1.0, &mut r);
            let y = qshift(&Var::constant(x.clone())).unwrap();
            assert_eq!(y.value().to_vec(), oracle::qshift(x.data(), c, 8, 8));
        }
    }

    #[test]
    fn qshift_gradient() {
        let mut r = rng(2);
        let x = Tensor::<f64>::uniform([5, 3, 4], -1.0, 1.0, &mut r);
        let g = check_gradients(&[x], |v| qshift(&v[0]), None, 0).unwrap();
        assert!(g.passes(1e-5));
    }

    #[test]
    fn spatial_mix_zero_output_projection() {
        let mut r = rng(3);
        let mut p = random_spatial(3, &mut r);
        p.w_o = Var::constant(Tensor::zeros([3, 3]));
        let x = rand_var(&[5, 3], &mut r);
        let y = spatial_mix(&x, &x, &p).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spatial_mix_ignores_shift_when_mu_is_one() {
        let mut r = rng(4);
        let mut p = random_spatial(4, &mut r);
        for m in [&mut p.mu_r, &mut p.mu_k, &mut p.mu_v] {
            *m = Var::constant(Tensor::ones([4]));
        }
        let x = rand_var(&[6, 4], &mut r);
        let a = spatial_mix(&x, &rand_var(&[6, 4], &mut r), &p).unwrap();
        let garbage = Var::constant(Tensor::uniform([6, 4], -1e3, 1e3, &mut r));
        let b = spatial_mix(&x, &garbage, &p).unwrap();
        assert!(a.value().bit_eq(b.value()));
    }

    #[test]
    fn spatial_mix_matches_unrolled_oracle() {
        let mut r = rng(5);
        let (n, d) = (4, 2);
        let p = random_spatial(d, &mut r);
        let x = rand_var(&[n, d], &mut r);
        let s = rand_var(&[n, d], &mut r);
        let y = spatial_mix(&x, &s, &p).unwrap();
        let decay: Vec<f64> = p.w_raw.value().data().iter().map(|v| v.exp()).collect();
        let oracle = oracle::SpatialMixRef {
            w_r: p.w_r.value().data(),
            w_k: p.w_k.value().data(),
            w_v: p.w_v.value().data(),
            w_o: p.w_o.value().data(),
            mu_r: p.mu_r.value().data(),
            mu_k: p.mu_k.value().data(),
            mu_v: p.mu_v.value().data(),
            decay: &decay,
            bonus: p.u.value().data(),
        };
        let want = oracle.apply(x.value().data(), s.value().data(), n, d);
        for (a, b) in y.value().data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn spatial_mix_gradient() {
        let mut r = rng(6);
        let p = random_spatial(3, &mut r);
        let inputs: Vec<Tensor<f64>> = [&p.w_r, &p.w_k, &p.w_v, &p.w_o, &p.mu_r, &p.mu_k, &p.mu_v, &p.w_raw, &p.u]
            .iter()
            .map(|v| v.value().clone())
            .chain([Tensor::uniform([5, 3], -1.0, 1.0, &mut r), Tensor::uniform([5, 3], -1.0, 1.0, &mut r)])
            .collect();
        let g = check_gradients(
            &inputs,
            |v| {
                let p = SpatialMixParams {
                    w_r: v[0].clone(),
                    w_k: v[1].clone(),
                    w_v: v[2].clone(),
                    w_o: v[3].clone(),
                    mu_r: v[4].clone(),
                    mu_k: v[5].clone(),
                    mu_v: v[6].clone(),
                    w_raw: v[7].clone(),
                    u: v[8].clone(),
                };
                spatial_mix(&v[9], &v[10], &p)
            },
            None,
            0,
        )
        .unwrap();
        assert!(g.passes(1e-5), "{}", g.max_rel_err);
    }

    #[test]
    fn se_zero_weights_halve() {
        let mut r = rng(7);
        let x = rand_var(&[3, 2, 2], &mut r);
        let p = SeParams { reduce: Var::constant(Tensor::zeros([3, 8])), expand: Var::constant(Tensor::zeros([8, 3])) };
        let y = channel_mix_se(&x, &p).unwrap();
        for (a, b) in y.value().data().iter().zip(x.value().data()) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn se_matches_scalar_oracle() {
        let mut r = rng(8);
        let (c, h, w) = (5, 3, 4);
        let hid = se_hidden(c);
        let x = rand_var(&[c, h, w], &mut r);
        let p = SeParams { reduce: rand_var(&[c, hid], &mut r), expand: rand_var(&[hid, c], &mut r) };
        let y = channel_mix_se(&x, &p).unwrap();
        let want = oracle::squeeze_excite(x.value().data(), c, h * w, p.reduce.value().data(), p.expand.value().data(), hid);
        for (a, b) in y.value().data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(channel_mix_se(&rand_var(&[4, 2, 2], &mut r), &p).is_err());
    }

    #[test]
    fn se_hidden_floor() {
        assert_eq!(se_hidden(8), 8);
        assert_eq!(se_hidden(32), 8);
        assert_eq!(se_hidden(33), 9);
        assert_eq!(se_hidden(160), 40);
    }

    #[test]
    fn mlp_zero_and_negative() {
        let mut r = rng(9);
        let p = MlpMixParams { w1: rand_var(&[2, 8], &mut r), w2: rand_var(&[8, 2], &mut r) };
        let zero = channel_mix_mlp(&konst(&[3, 2], vec![0.0; 6]), &p).unwrap();
        assert!(zero.value().data().iter().all(|&v| v == 0.0));
        let neg = MlpMixParams { w1: konst(&[2, 8], vec![-1.0; 16]), w2: rand_var(&[8, 2], &mut r) };
        let y = channel_mix_mlp(&konst(&[3, 2], vec![0.5; 6]), &neg).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mlp_gradient() {
        let mut r = rng(10);
        let inputs = vec![
            Tensor::<f64>::uniform([4, 3], -1.0, 1.0, &mut r),
            Tensor::uniform([3, 12], -1.0, 1.0, &mut r),
            Tensor::uniform([12, 3], -1.0, 1.0, &mut r),
        ];
        let g = check_gradients(
            &inputs,
            |v| channel_mix_mlp(&v[0], &MlpMixParams { w1: v[1].clone(), w2: v[2].clone() }),
            None,
            0,
        )
        .unwrap();
        assert!(g.passes(1e-5), "{}", g.max_rel_err);
    }

    fn block_params(d: usize, kind: ChannelMixKind, seed: u64) -> (ParamStore<f64>, BlockIds) {
        let mut st = ParamStore::new();
        let ids = BlockIds::register(&mut st, "stage1.block0", d, kind, &mut rng(seed)).unwrap();
        (st, ids)
    }

    #[test]
    fn block_with_zero_projections_matches_hand_trace() {
        let (mut st, ids) = block_params(2, ChannelMixKind::Se, 0);
        for id in st.ids().collect::<Vec<_>>() {
            let name = st.name(id).to_string();
            if !name.contains("ln_") && !name.contains("mu_") {
                let shape = st.get(id).shape().to_vec();
                st.set(id, Tensor::zeros(shape)).unwrap();
            }
        }
        let b = Bound::frozen(&st);
        let x = konst(&[2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 3.0, 2.0]);
        let y = rwkv_block(&x, &ids.bind(&b)).unwrap();
        // spatial branch is zero; channel branch is 0.5 * LN(x)
        let ln = oracle::layer_norm_channels(x.value().data(), 2, 4, crate::numerics::norm::NORM_EPS);
        for i in 0..8 {
            let want = x.value().data()[i] + 0.5 * ln[i];
            assert!((y.value().data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn block_shape_determinism_finiteness() {
        for (d, kind) in [(8, ChannelMixKind::Se), (6, ChannelMixKind::Mlp), (32, ChannelMixKind::Se)] {
            let (st, ids) = block_params(d, kind, 11);
            let b = Bound::frozen(&st);
            let x = Var::constant(Tensor::<f64>::uniform([d, 4, 5], -10.0, 10.0, &mut rng(12)));
            let y1 = rwkv_block(&x, &ids.bind(&b)).unwrap();
            let y2 = rwkv_block(&x, &ids.bind(&b)).unwrap();
            assert_eq!(y1.shape(), [d, 4, 5]);
            assert!(y1.value().bit_eq(y2.value()));
            assert!(y1.value().all_finite());
        }
    }

    #[test]
    fn block_gradient() {
        let (st, ids) = block_params(4, ChannelMixKind::Se, 13);
        let mut inputs: Vec<Tensor<f64>> = st.iter().map(|(_, t)| t.clone()).collect();
        inputs.push(Tensor::uniform([4, 3, 3], -1.0, 1.0, &mut rng(14)));
        let g = check_gradients(
            &inputs,
            |v| {
                let (x, params) = v.split_last().unwrap();
                rwkv_block(x, &ids.bind(&Bound::from_vars(params.to_vec())))
            },
            None,
            0,
        )
        .unwrap();
        assert!(g.passes(1e-5), "{}", g.max_rel_err);
    }
}
