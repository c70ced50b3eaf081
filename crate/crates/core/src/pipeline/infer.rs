//! Sliding-window inference with half-tile overlap.

use rayon::prelude::*;

use super::model::ChangeRwkv;
use crate::encoder::SIDE_MULTIPLE;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Window origins along one axis: stride `tile / 2`, the last window flush
/// with the end. A side no longer than the tile gets one (padded) window.
pub fn tile_starts(len: usize, tile: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let stride = (tile / 2).max(1);
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + tile < len).collect();
    starts.push(len - tile);
    starts
}

/// Zero-padded `tile × tile` window of a `[C, H, W]` image at `(y0, x0)`.
fn crop<S: Scalar>(img: &Tensor<S>, y0: usize, x0: usize, tile: usize) -> Result<Tensor<S>> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut out = vec![S::zero(); c * tile * tile];
    let (rows, cols) = ((h - y0).min(tile), (w - x0).min(tile));
    for ch in 0..c {
        for y in 0..rows {
            let src = (ch * h + y0 + y) * w + x0;
            let dst = (ch * tile + y) * tile;
            out[dst..dst + cols].copy_from_slice(&img.data()[src..src + cols]);
        }
    }
    Tensor::from_vec(vec![c, tile, tile], out)
}

/// Change probabilities `[H, W]` for an image pair of any size, averaging
/// overlapping windows. Windows run in parallel; stitching is in window order.
pub fn predict_tiled<S: Scalar>(model: &ChangeRwkv<S>, a: &Tensor<S>, b: &Tensor<S>, tile: usize) -> Result<Tensor<S>> {
    if a.shape() != b.shape() || a.rank() != 3 {
        return Err(Error::shape("infer", format!("image pair {:?} vs {:?}", a.shape(), b.shape())));
    }
    if tile == 0 || tile % SIDE_MULTIPLE != 0 {
        return Err(Error::Invalid(format!("tile {tile} must be a positive multiple of {SIDE_MULTIPLE}")));
    }
    let (h, w) = (a.shape()[1], a.shape()[2]);
    let windows: Vec<(usize, usize)> =
        tile_starts(h, tile).into_iter().flat_map(|y| tile_starts(w, tile).into_iter().map(move |x| (y, x))).collect();
    let probs: Vec<Tensor<S>> = windows
        .par_iter()
        .map(|&(y0, x0)| model.predict(&crop(a, y0, x0, tile)?, &crop(b, y0, x0, tile)?))
        .collect::<Result<_>>()?;
    let mut sum = vec![0.0f64; h * w];
    let mut count = vec![0u32; h * w];
    for (&(y0, x0), p) in windows.iter().zip(&probs) {
        for y in 0..(h - y0).min(tile) {
            for x in 0..(w - x0).min(tile) {
                let i = (y0 + y) * w + x0 + x;
                sum[i] += p.data()[y * tile + x].as_f64();
                count[i] += 1;
            }
        }
    }
    let data = sum.iter().zip(&count).map(|(&s, &n)| S::of(s / n as f64)).collect();
    Tensor::from_vec(vec![h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn starts_cover_with_half_overlap() {
        assert_eq!(tile_starts(256, 256), vec![0]);
        assert_eq!(tile_starts(100, 256), vec![0]);
        assert_eq!(tile_starts(512, 256), vec![0, 128, 256]);
        assert_eq!(tile_starts(300, 256), vec![0, 44]);
    }

    fn pair(h: usize, w: usize) -> (Tensor<f32>, Tensor<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(h as u64 * 1000 + w as u64);
        (Tensor::uniform(vec![3, h, w], 0.0, 1.0, &mut rng), Tensor::uniform(vec![3, h, w], 0.0, 1.0, &mut rng))
    }

    #[test]
    fn single_tile_equals_direct() {
        let m = ChangeRwkv::<f32>::new(ModelConfig::nano(), 1).unwrap();
        let (a, b) = pair(64, 64);
        assert!(predict_tiled(&m, &a, &b, 64).unwrap().bit_eq(&m.predict(&a, &b).unwrap()));
    }

    #[test]
    fn output_matches_input_size() {
        let m = ChangeRwkv::<f32>::new(ModelConfig::nano(), 1).unwrap();
        for (h, w) in [(20, 40), (80, 48), (32, 32)] {
            let (a, b) = pair(h, w);
            let p = predict_tiled(&m, &a, &b, 32).unwrap();
            assert_eq!(p.shape(), &[h, w]);
            assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn small_image_is_padded_tile() {
        let m = ChangeRwkv::<f32>::new(ModelConfig::nano(), 2).unwrap();
        let (a, b) = pair(20, 24);
        let p = predict_tiled(&m, &a, &b, 32).unwrap();
        let full = m.predict(&crop(&a, 0, 0, 32).unwrap(), &crop(&b, 0, 0, 32).unwrap()).unwrap();
        for y in 0..20 {
            for x in 0..24 {
                assert_eq!(p.data()[y * 24 + x], full.data()[y * 32 + x]);
            }
        }
    }

    #[test]
    fn bad_tile_rejected() {
        let m = ChangeRwkv::<f32>::new(ModelConfig::probe(), 0).unwrap();
        let (a, b) = pair(32, 32);
        assert!(predict_tiled(&m, &a, &b, 24).is_err());
        assert!(predict_tiled(&m, &a, &pair(32, 48).0, 32).is_err());
    }
}
