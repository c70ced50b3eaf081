//! The full Siamese change detector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::decoder::DecoderIds;
use crate::encoder::{EncoderIds, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor, Var};
use crate::params::{Bound, ParamStore};
use crate::stfm::StfmIds;

/// Configuration, weights and the handles tying them to the graph.
#[derive(Debug, Clone)]
pub struct ChangeRwkv<S: Scalar> {
    pub cfg: ModelConfig,
    pub store: ParamStore<S>,
    encoder: EncoderIds,
    stfm: StfmIds,
    decoder: DecoderIds,
}

impl<S: Scalar> ChangeRwkv<S> {
    /// Registers and initializes every parameter from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = EncoderIds::register(&mut store, &cfg, &mut rng)?;
        let stfm = StfmIds::register(&mut store, &cfg, &mut rng)?;
        let decoder = DecoderIds::register(&mut store, &cfg, &mut rng)?;
        Ok(Self { cfg, store, encoder, stfm, decoder })
    }

    pub fn decoder(&self) -> &DecoderIds {
        &self.decoder
    }

    /// Change probabilities `[H, W]` for images `[C, H, W]` under the given binding.
    pub fn forward(&self, b: &Bound<S>, a: &Var<S>, bimg: &Var<S>) -> Result<Var<S>> {
        if a.shape() != bimg.shape() {
            return Err(Error::shape("forward", format!("image pair {:?} vs {:?}", a.shape(), bimg.shape())));
        }
        let pa = self.encoder.encode(a, &self.cfg, b)?;
        let pb = self.encoder.encode(bimg, &self.cfg, b)?;
        let fused = self.stfm.fuse(&pa, &pb, b)?;
        self.decoder.decode(&fused, b)
    }

    /// Inference without recording gradients.
    pub fn predict(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        let bound = Bound::frozen(&self.store);
        let out = self.forward(&bound, &Var::constant(a.clone()), &Var::constant(b.clone()))?;
        Ok(out.value().clone())
    }
}
