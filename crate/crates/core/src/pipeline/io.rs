//! PNG images, masks and dataset directories (`a/`, `b/`, `mask/`).

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use rayon::prelude::*;

use super::synth::ChangeSample;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image { path: path.to_path_buf(), msg: e.to_string() }
}

fn to_byte<S: Scalar>(v: S) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads any image as `[3, H, W]` in `[0, 1]`.
pub fn load_rgb<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![S::zero(); 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = S::of(px[c] as f64 / 255.0);
        }
    }
    Tensor::from_vec(vec![3, h, w], data)
}

pub fn rgb_image<S: Scalar>(t: &Tensor<S>) -> Result<RgbImage> {
    let [3, h, w] = t.shape() else {
        return Err(Error::shape("rgb_image", format!("expected [3, H, W], got {:?}", t.shape())));
    };
    let (h, w) = (*h, *w);
    let d = t.data();
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| to_byte(d[(c * h + y as usize) * w + x as usize]);
        Rgb([at(0), at(1), at(2)])
    }))
}

pub fn save_rgb<S: Scalar>(path: &Path, t: &Tensor<S>) -> Result<()> {
    rgb_image(t)?.save(path).map_err(|e| image_err(path, e))
}

/// Reads a mask; pixels with luma of at least 128 are changed.
pub fn load_mask<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| if p[0] >= 128 { S::one() } else { S::zero() }).collect();
    Tensor::from_vec(vec![h, w], data)
}

/// Writes `[H, W]` values as a 0/255 mask, positive where `v >= threshold`.
pub fn save_mask<S: Scalar>(path: &Path, t: &Tensor<S>, threshold: f64) -> Result<()> {
    let [h, w] = t.shape() else {
        return Err(Error::shape("save_mask", format!("expected [H, W], got {:?}", t.shape())));
    };
    let d = t.data();
    let w = *w;
    let img: GrayImage = ImageBuffer::from_fn(w as u32, *h as u32, |x, y| {
        Luma([if d[y as usize * w + x as usize].as_f64() >= threshold { 255 } else { 0 }])
    });
    img.save(path).map_err(|e| image_err(path, e))
}

pub const OVERLAY_TP: [u8; 3] = [255, 255, 255];
pub const OVERLAY_TN: [u8; 3] = [0, 0, 0];
pub const OVERLAY_FP: [u8; 3] = [0, 255, 0];
pub const OVERLAY_FN: [u8; 3] = [255, 0, 0];

/// Error map of a prediction against ground truth.
pub fn overlay<S: Scalar>(pred: &Tensor<S>, truth: &Tensor<S>, threshold: f64) -> Result<RgbImage> {
    if pred.shape() != truth.shape() || pred.rank() != 2 {
        return Err(Error::shape("overlay", format!("prediction {:?} vs truth {:?}", pred.shape(), truth.shape())));
    }
    let (h, w) = (pred.shape()[0], pred.shape()[1]);
    let (p, t) = (pred.data(), truth.data());
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb(match (p[i].as_f64() >= threshold, t[i].as_f64() >= 0.5) {
            (true, true) => OVERLAY_TP,
            (false, false) => OVERLAY_TN,
            (true, false) => OVERLAY_FP,
            (false, true) => OVERLAY_FN,
        })
    }))
}

const PARTS: [&str; 3] = ["a", "b", "mask"];

/// Writes each sample as `a/<id>.png`, `b/<id>.png` and `mask/<id>.png`.
pub fn write_dataset<S: Scalar>(dir: &Path, samples: &[ChangeSample<S>]) -> Result<()> {
    for p in PARTS {
        fs::create_dir_all(dir.join(p))?;
    }
    samples.par_iter().try_for_each(|s| {
        let name = format!("{}.png", s.id());
        save_rgb(&dir.join("a").join(&name), &s.a)?;
        save_rgb(&dir.join("b").join(&name), &s.b)?;
        save_mask(&dir.join("mask").join(&name), &s.mask, 0.5)
    })
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::Invalid(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

/// Reads a dataset directory in file-name order. Every file in `a/` needs a
/// namesake in `b/` and `mask/`.
pub fn read_dataset<S: Scalar>(dir: &Path) -> Result<Vec<ChangeSample<S>>> {
    let names = png_names(&dir.join("a"))?;
    if names.is_empty() {
        return Err(Error::Invalid(format!("no images under {}", dir.join("a").display())));
    }
    names
        .par_iter()
        .enumerate()
        .map(|(i, name)| {
            let path = |p: &str| -> PathBuf { dir.join(p).join(name) };
            let a = load_rgb(&path("a"))?;
            let b = load_rgb(&path("b"))?;
            let mask = load_mask(&path("mask"))?;
            if a.shape() != b.shape() || a.shape()[1..] != *mask.shape() {
                return Err(Error::shape("read_dataset", format!("{name}: a {:?}, b {:?}, mask {:?}", a.shape(), b.shape(), mask.shape())));
            }
            Ok(ChangeSample { a, b, mask, seed: 0, index: i as u64 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::synth::synth_generate;

    #[test]
    fn dataset_round_trip_quantizes_to_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synth_generate::<f32>(3, 16, 32, 2, 5).unwrap();
        write_dataset(dir.path(), &samples).unwrap();
        let back = read_dataset::<f32>(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (s, r) in samples.iter().zip(&back) {
            assert!(s.mask.bit_eq(&r.mask));
            let err = s.a.data().iter().zip(r.a.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
            assert!(err <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn overlay_colors() {
        let p = Tensor::<f64>::from_f64(vec![1, 4], &[0.9, 0.1, 0.9, 0.1]).unwrap();
        let t = Tensor::<f64>::from_f64(vec![1, 4], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let img = overlay(&p, &t, 0.5).unwrap();
        let px: Vec<[u8; 3]> = img.pixels().map(|p| p.0).collect();
        assert_eq!(px, vec![OVERLAY_TP, OVERLAY_TN, OVERLAY_FP, OVERLAY_FN]);
    }

    #[test]
    fn missing_file_is_an_image_error() {
        let err = load_rgb::<f32>(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(matches!(err, Error::Image { .. }));
    }
}
