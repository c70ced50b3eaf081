//! Hierarchical RWKV encoder and model-size accounting.

use rand::Rng;

use crate::blocks::{rwkv_block, se_hidden, BlockIds, ChannelMixKind, MLP_EXPANSION};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Var};
use crate::params::{Bound, ParamId, ParamStore};
use crate::stfm::{FusionKind, SPATIAL_KERNEL};

/// Input sides must be divisible by this (four halvings).
pub const SIDE_MULTIPLE: usize = 16;

/// Widths, depths and the pinned architectural choices of one variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: String,
    pub dims: [usize; 4],
    pub depths: [usize; 4],
    pub in_channels: usize,
    pub channel_mix: ChannelMixKind,
    pub fusion: FusionKind,
}

impl ModelConfig {
    fn make(variant: &str, dims: [usize; 4], depths: [usize; 4]) -> Self {
        Self {
            variant: variant.into(),
            dims,
            depths,
            in_channels: 3,
            channel_mix: ChannelMixKind::Se,
            fusion: FusionKind::CrossCbam,
        }
    }

    pub fn tiny() -> Self {
        Self::make("T", [32, 48, 96, 160], [2, 2, 4, 2])
    }

    pub fn small() -> Self {
        Self::make("S", [32, 64, 128, 192], [3, 3, 6, 3])
    }

    pub fn base() -> Self {
        Self::make("B", [48, 72, 144, 240], [3, 3, 6, 3])
    }

    /// Desk-scale training variant.
    pub fn nano() -> Self {
        Self::make("nano", [8, 12, 24, 40], [1, 1, 2, 1])
    }

    /// Smallest variant, for end-to-end gradient checks.
    pub fn probe() -> Self {
        Self::make("probe", [4, 4, 8, 8], [1, 1, 1, 1])
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "T" | "t" | "tiny" => Ok(Self::tiny()),
            "S" | "s" | "small" => Ok(Self::small()),
            "B" | "b" | "base" => Ok(Self::base()),
            "nano" => Ok(Self::nano()),
            "probe" => Ok(Self::probe()),
            _ => Err(Error::Config(format!("unknown variant {name:?} (expected T, S, B, nano or probe)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) || self.in_channels == 0 {
            return Err(Error::Config(format!("widths must be positive: {:?}", self.dims)));
        }
        if self.depths.contains(&0) {
            return Err(Error::Config(format!("every stage needs a block: {:?}", self.depths)));
        }
        Ok(())
    }

    /// Checks an input side pair.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || h % SIDE_MULTIPLE != 0 || w % SIDE_MULTIPLE != 0 {
            return Err(Error::Invalid(format!("input {h}x{w} must be a positive multiple of {SIDE_MULTIPLE}")));
        }
        Ok(())
    }

    /// Total channel width of the concatenated pyramid.
    pub fn fused_width(&self) -> usize {
        self.dims.iter().sum()
    }
}

/// Four feature maps at 1/2, 1/4, 1/8 and 1/16 of the input.
#[derive(Clone)]
pub struct FeaturePyramid<S: Scalar> {
    pub levels: Vec<Var<S>>,
}

impl<S: Scalar> FeaturePyramid<S> {
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.levels.iter().map(|l| l.shape().to_vec()).collect()
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.levels.len() == other.levels.len() && self.levels.iter().zip(&other.levels).all(|(a, b)| a.value().bit_eq(b.value()))
    }
}

#[derive(Debug, Clone)]
pub struct EncoderIds {
    stem: (ParamId, ParamId),
    stages: Vec<Vec<BlockIds>>,
    downs: Vec<(ParamId, ParamId)>,
}

impl EncoderIds {
    pub fn register<S: Scalar>(store: &mut ParamStore<S>, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dims;
        let stem_fan = cfg.in_channels * 9;
        let stem = (
            store.fan_in("stem.weight", &[d[0], cfg.in_channels, 3, 3], stem_fan, rng)?,
            store.zeros("stem.bias", &[d[0]])?,
        );
        let mut stages = Vec::with_capacity(4);
        let mut downs = Vec::with_capacity(3);
        for i in 0..4 {
            let blocks = (0..cfg.depths[i])
                .map(|j| BlockIds::register(store, &format!("stage{}.block{j}", i + 1), d[i], cfg.channel_mix, rng))
                .collect::<Result<Vec<_>>>()?;
            stages.push(blocks);
            if i < 3 {
                downs.push((
                    store.fan_in(format!("down{}.weight", i + 1), &[d[i + 1], d[i], 3, 3], d[i] * 9, rng)?,
                    store.zeros(format!("down{}.bias", i + 1), &[d[i + 1]])?,
                ));
            }
        }
        Ok(Self { stem, stages, downs })
    }

    /// Runs the encoder on one `[in_channels, H, W]` image.
    pub fn encode<S: Scalar>(&self, image: &Var<S>, cfg: &ModelConfig, b: &Bound<S>) -> Result<FeaturePyramid<S>> {
        match image.shape() {
            [c, h, w] if *c == cfg.in_channels => cfg.check_input(*h, *w)?,
            s => return Err(Error::shape("encode", format!("image {s:?}, expected [{}, H, W]", cfg.in_channels))),
        }
        let mut x = image.conv2d(b.var(self.stem.0), Some(b.var(self.stem.1)), 2, 1)?;
        let mut levels = Vec::with_capacity(4);
        for (i, blocks) in self.stages.iter().enumerate() {
            for blk in blocks {
                x = rwkv_block(&x, &blk.bind(b))?;
            }
            levels.push(x.clone());
            if let Some(&(w, bias)) = self.downs.get(i) {
                x = x.conv2d(b.var(w), Some(b.var(bias)), 2, 1)?;
            }
        }
        Ok(FeaturePyramid { levels })
    }
}

fn block_params(d: usize, kind: ChannelMixKind) -> usize {
    let norms = 4 * d;
    let spatial = 4 * d * d + 5 * d;
    norms + spatial + channel_mix_params(d, kind)
}

fn channel_mix_params(d: usize, kind: ChannelMixKind) -> usize {
    match kind {
        ChannelMixKind::Se => 2 * d * se_hidden(d),
        ChannelMixKind::Mlp => 2 * MLP_EXPANSION * d * d,
    }
}

/// Exact scalar parameter count of the encoder, or of the whole model.
pub fn count_parameters(cfg: &ModelConfig, full_model: bool) -> usize {
    let d = cfg.dims;
    let mut n = cfg.in_channels * 9 * d[0] + d[0];
    for i in 0..4 {
        n += cfg.depths[i] * block_params(d[i], cfg.channel_mix);
        if i < 3 {
            n += d[i] * 9 * d[i + 1] + d[i + 1];
        }
    }
    if !full_model {
        return n;
    }
    n += channel_mix_params(cfg.fused_width(), cfg.channel_mix);
    for &c in &d {
        n += match cfg.fusion {
            FusionKind::CrossCbam => 2 * c * se_hidden(c) + 2 * SPATIAL_KERNEL * SPATIAL_KERNEL,
            FusionKind::SiamDiff => 0,
            FusionKind::SiamConc => 2 * c * c,
        };
    }
    for j in 0..3 {
        let (skip, deep) = (d[j], d[j + 1]);
        n += (deep + skip) * 9 * skip + skip * 9 * skip + 4 * skip;
    }
    n + d[0] + 1
}

/// Multiply-accumulates of convolutions and projections in one full forward
/// pass on an `h × w` pair, times two.
pub fn count_flops(cfg: &ModelConfig, h: usize, w: usize) -> u64 {
    let d = cfg.dims.map(|x| x as u64);
    let px = |level: u32| (h as u64 >> level) * (w as u64 >> level);
    let mut enc = px(1) * d[0] * cfg.in_channels as u64 * 9;
    for i in 0..4 {
        let n = px(i as u32 + 1);
        let per_block = 4 * n * d[i] * d[i]
            + match cfg.channel_mix {
                ChannelMixKind::Se => 2 * d[i] * se_hidden(d[i] as usize) as u64,
                ChannelMixKind::Mlp => 2 * MLP_EXPANSION as u64 * n * d[i] * d[i],
            };
        enc += cfg.depths[i] as u64 * per_block;
        if i < 3 {
            enc += px(i as u32 + 2) * d[i + 1] * d[i] * 9;
        }
    }
    let sum = cfg.fused_width() as u64;
    let sfm = match cfg.channel_mix {
        ChannelMixKind::Se => 2 * sum * se_hidden(sum as usize) as u64,
        ChannelMixKind::Mlp => 2 * MLP_EXPANSION as u64 * px(1) * sum * sum,
    };
    let k2 = (SPATIAL_KERNEL * SPATIAL_KERNEL) as u64;
    let mut tfm = 0;
    for i in 0..4 {
        let n = px(i as u32 + 1);
        tfm += match cfg.fusion {
            FusionKind::CrossCbam => 2 * 2 * d[i] * se_hidden(d[i] as usize) as u64 + 2 * n * 2 * k2,
            FusionKind::SiamDiff => 0,
            FusionKind::SiamConc => n * 2 * d[i] * d[i],
        };
    }
    let mut dec = 0;
    for j in 0..3 {
        let n = px(j as u32 + 1);
        dec += n * (d[j + 1] + d[j]) * 9 * d[j] + n * d[j] * 9 * d[j];
    }
    dec += (h * w) as u64 * d[0];
    2 * (2 * (enc + sfm) + tfm + dec)
}
