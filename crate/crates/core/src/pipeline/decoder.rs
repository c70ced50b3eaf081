//! U-Net style decoder from the fused pyramid to a full-resolution change map.

use rand::Rng;

use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::norm::{group_count, group_norm};
use crate::numerics::{ResampleMode, Scalar, Var};
use crate::params::{Bound, ParamId, ParamStore};
use crate::stfm::FusedPyramid;

pub const MAX_GROUPS: usize = 8;

#[derive(Debug, Clone, Copy)]
struct ConvNormIds {
    conv: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

impl ConvNormIds {
    fn register<S: Scalar>(store: &mut ParamStore<S>, pre: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            conv: store.fan_in(format!("{pre}.weight"), &[cout, cin, 3, 3], cin * 9, rng)?,
            gamma: store.ones(format!("{pre}.gn_gamma"), &[cout])?,
            beta: store.zeros(format!("{pre}.gn_beta"), &[cout])?,
        })
    }

    fn apply<S: Scalar>(&self, x: &Var<S>, b: &Bound<S>) -> Result<Var<S>> {
        let y = x.conv2d(b.var(self.conv), None, 1, 1)?;
        let groups = group_count(y.shape()[0], MAX_GROUPS);
        group_norm(&y, groups, b.var(self.gamma), b.var(self.beta))?.relu()
    }
}

/// Parameter handles of the decoder: one pair of conv blocks per skip level,
/// deepest first, and the final 1×1 head.
#[derive(Debug, Clone)]
pub struct DecoderIds {
    levels: Vec<[ConvNormIds; 2]>,
    head: (ParamId, ParamId),
}

impl DecoderIds {
    pub fn register<S: Scalar>(store: &mut ParamStore<S>, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let d = cfg.dims;
        let mut levels = Vec::with_capacity(3);
        for j in (0..3).rev() {
            let pre = format!("dec{}", j + 1);
            let first = ConvNormIds::register(store, &format!("{pre}.conv1"), d[j + 1] + d[j], d[j], rng)?;
            let second = ConvNormIds::register(store, &format!("{pre}.conv2"), d[j], d[j], rng)?;
            levels.push([first, second]);
        }
        let head = (store.fan_in("head.weight", &[1, d[0], 1, 1], d[0], rng)?, store.zeros("head.bias", &[1])?);
        Ok(Self { levels, head })
    }

    pub fn head_weight(&self) -> ParamId {
        self.head.0
    }

    /// Decodes to an `[H, W]` map of change probabilities, `H × W` being twice
    /// the finest pyramid level.
    pub fn decode<S: Scalar>(&self, fused: &FusedPyramid<S>, b: &Bound<S>) -> Result<Var<S>> {
        let lv = &fused.levels;
        if lv.len() != 4 {
            return Err(Error::shape("decode", format!("expected 4 pyramid levels, got {}", lv.len())));
        }
        let mut x = lv[3].clone();
        for (blocks, skip) in self.levels.iter().zip(lv[..3].iter().rev()) {
            let (h, w) = (skip.shape()[1], skip.shape()[2]);
            let up = x.resample2d(h, w, ResampleMode::BilinearUp)?;
            x = Var::concat(&[up, skip.clone()])?;
            x = blocks[0].apply(&x, b)?;
            x = blocks[1].apply(&x, b)?;
        }
        let (h, w) = (2 * x.shape()[1], 2 * x.shape()[2]);
        let up = x.resample2d(h, w, ResampleMode::BilinearUp)?;
        let logits = up.conv2d(b.var(self.head.0), Some(b.var(self.head.1)), 1, 0)?;
        logits.sigmoid()?.reshape(vec![h, w])
    }
}
