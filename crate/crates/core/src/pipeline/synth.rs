//! Synthetic bi-temporal scenes with exactly known change masks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::SIDE_MULTIPLE;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// A co-registered image pair and its binary change mask.
#[derive(Debug, Clone)]
pub struct ChangeSample<S: Scalar> {
    /// `[3, H, W]` in `[0, 1]`.
    pub a: Tensor<S>,
    pub b: Tensor<S>,
    /// `[H, W]` of 0/1.
    pub mask: Tensor<S>,
    /// Seed the sample was drawn from, and its index in the stream.
    pub seed: u64,
    pub index: u64,
}

impl<S: Scalar> ChangeSample<S> {
    pub fn height(&self) -> usize {
        self.mask.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.mask.shape()[1]
    }

    pub fn id(&self) -> String {
        format!("s{}-{:05}", self.seed, self.index)
    }

    /// Mirrors all three tensors left to right.
    pub fn flipped(&self) -> Self {
        Self { a: flip_last(&self.a), b: flip_last(&self.b), mask: flip_last(&self.mask), ..self.clone() }
    }
}

fn flip_last<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    let w = *t.shape().last().unwrap_or(&1);
    let mut data = t.to_vec();
    for row in data.chunks_mut(w) {
        row.reverse();
    }
    Tensor::from_vec(t.shape().to_vec(), data).expect("same shape")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    Rect,
    Ellipse,
}

/// A filled "building", axis-aligned, with its RGB fill.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
    pub color: [f64; 3],
}

impl Shape {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        if y < self.y0 || x < self.x0 || y >= self.y0 + self.h || x >= self.x0 + self.w {
            return false;
        }
        match self.kind {
            ShapeKind::Rect => true,
            ShapeKind::Ellipse => {
                let (ry, rx) = (self.h as f64 / 2.0, self.w as f64 / 2.0);
                let dy = (y - self.y0) as f64 + 0.5 - ry;
                let dx = (x - self.x0) as f64 + 0.5 - rx;
                (dy / ry).powi(2) + (dx / rx).powi(2) <= 1.0
            }
        }
    }

    /// Bounding boxes closer than `gap` pixels count as touching.
    fn overlaps(&self, o: &Shape, gap: usize) -> bool {
        self.y0 < o.y0 + o.h + gap && o.y0 < self.y0 + self.h + gap && self.x0 < o.x0 + o.w + gap && o.x0 < self.x0 + self.w + gap
    }

    pub fn raster(&self, h: usize, w: usize) -> Vec<bool> {
        let mut out = vec![false; h * w];
        for y in self.y0..(self.y0 + self.h).min(h) {
            for x in self.x0..(self.x0 + self.w).min(w) {
                out[y * w + x] = self.contains(y, x);
            }
        }
        out
    }
}

/// Noise and jitter settings for one difficulty level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Style {
    pub noise: f64,
    pub jitter: f64,
    pub texture: f64,
    pub shapes: (usize, usize),
    pub changes: (usize, usize),
}

impl Style {
    pub fn for_difficulty(level: u8) -> Result<Self> {
        let s = match level {
            0 => Style { noise: 0.0, jitter: 0.0, texture: 0.05, shapes: (2, 4), changes: (1, 2) },
            1 => Style { noise: 0.02, jitter: 0.08, texture: 0.08, shapes: (3, 6), changes: (1, 3) },
            2 => Style { noise: 0.05, jitter: 0.15, texture: 0.12, shapes: (4, 8), changes: (1, 4) },
            3 => Style { noise: 0.1, jitter: 0.25, texture: 0.18, shapes: (5, 10), changes: (1, 5) },
            _ => return Err(Error::Invalid(format!("difficulty {level} outside 0..=3"))),
        };
        Ok(s)
    }
}

/// Everything that determines one rendered pair.
#[derive(Debug, Clone)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub common: Vec<Shape>,
    pub only_a: Vec<Shape>,
    pub only_b: Vec<Shape>,
}

impl Scene {
    /// Union of the rasters of shapes present in exactly one image.
    pub fn change_mask(&self) -> Vec<bool> {
        let (h, w) = (self.height, self.width);
        let mut m = vec![false; h * w];
        for s in self.only_a.iter().chain(&self.only_b) {
            for (dst, src) in m.iter_mut().zip(s.raster(h, w)) {
                *dst |= src;
            }
        }
        m
    }
}

fn check_side(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % SIDE_MULTIPLE != 0 || w % SIDE_MULTIPLE != 0 {
        return Err(Error::Invalid(format!("synthetic size {h}x{w} must be a positive multiple of {SIDE_MULTIPLE}")));
    }
    Ok(())
}

fn random_shape(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Shape {
    let lo = (h.min(w) / 10).max(3);
    let hi = (h.min(w) / 3).max(lo + 1);
    let sh = rng.gen_range(lo..=hi);
    let sw = rng.gen_range(lo..=hi);
    let bright = rng.gen_range(0.55..0.95);
    let tint: [f64; 3] = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)];
    Shape {
        kind: if rng.gen_bool(0.5) { ShapeKind::Rect } else { ShapeKind::Ellipse },
        y0: rng.gen_range(0..=h - sh),
        x0: rng.gen_range(0..=w - sw),
        h: sh,
        w: sw,
        color: tint.map(|t| bright + t),
    }
}

/// Places up to `count` shapes that keep a one-pixel gap to each other and
/// to `existing`.
fn place(rng: &mut ChaCha8Rng, h: usize, w: usize, count: usize, existing: &mut Vec<Shape>) -> Vec<Shape> {
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < 50 * count.max(1) {
        tries += 1;
        let s = random_shape(rng, h, w);
        if existing.iter().all(|o| !s.overlaps(o, 1)) {
            existing.push(s);
            out.push(s);
        }
    }
    out
}

/// Draws the shape layout of one scene.
pub fn random_scene(rng: &mut ChaCha8Rng, h: usize, w: usize, style: &Style) -> Scene {
    let mut all = Vec::new();
    let n_shapes = rng.gen_range(style.shapes.0..=style.shapes.1);
    let n_changes = rng.gen_range(style.changes.0..=style.changes.1);
    let placed = place(rng, h, w, n_shapes + n_changes, &mut all);
    let mut common = Vec::new();
    let (mut only_a, mut only_b) = (Vec::new(), Vec::new());
    for (i, s) in placed.into_iter().enumerate() {
        if i < n_shapes {
            common.push(s);
        } else if rng.gen_bool(0.5) {
            only_a.push(s);
        } else {
            only_b.push(s);
        }
    }
    Scene { height: h, width: w, common, only_a, only_b }
}

/// Smooth low-frequency background shared by both dates.
fn background(rng: &mut ChaCha8Rng, h: usize, w: usize, amplitude: f64) -> Vec<f64> {
    let mut out = vec![0.0; 3 * h * w];
    let base = [rng.gen_range(0.2..0.4), rng.gen_range(0.25..0.45), rng.gen_range(0.15..0.35)];
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(0.02..0.3), rng.gen_range(0.02..0.3), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    for (c, &b) in base.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let t: f64 = waves.iter().map(|&(fy, fx, ph)| (fy * y as f64 + fx * x as f64 + ph + c as f64).sin()).sum();
                out[(c * h + y) * w + x] = b + amplitude * t / 3.0;
            }
        }
    }
    out
}

fn render(bg: &[f64], scene: &Scene, extra: &[Shape], rng: &mut ChaCha8Rng, style: &Style) -> Vec<f64> {
    let (h, w) = (scene.height, scene.width);
    let mut img = bg.to_vec();
    for s in scene.common.iter().chain(extra) {
        for y in s.y0..s.y0 + s.h {
            for x in s.x0..s.x0 + s.w {
                if s.contains(y, x) {
                    for c in 0..3 {
                        img[(c * h + y) * w + x] = s.color[c];
                    }
                }
            }
        }
    }
    let gain = 1.0 + style.jitter * rng.gen_range(-1.0..1.0);
    let bias = 0.5 * style.jitter * rng.gen_range(-1.0..1.0);
    for v in img.iter_mut() {
        let noise = if style.noise > 0.0 { style.noise * rng.gen_range(-1.0..1.0) } else { 0.0 };
        *v = (*v * gain + bias + noise).clamp(0.0, 1.0);
    }
    img
}

/// Renders both dates of `scene` and its mask.
pub fn render_pair<S: Scalar>(scene: &Scene, style: &Style, rng: &mut ChaCha8Rng) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let (h, w) = (scene.height, scene.width);
    check_side(h, w)?;
    let bg = background(rng, h, w, style.texture);
    let a = render(&bg, scene, &scene.only_a, rng, style);
    let b = render(&bg, scene, &scene.only_b, rng, style);
    let mask: Vec<f64> = scene.change_mask().into_iter().map(|m| if m { 1.0 } else { 0.0 }).collect();
    Ok((Tensor::from_f64(vec![3, h, w], &a)?, Tensor::from_f64(vec![3, h, w], &b)?, Tensor::from_f64(vec![h, w], &mask)?))
}

/// Independent generator for sample `index` of the stream `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One sample of the stream; each index has its own generator, so any
/// subset can be regenerated independently.
pub fn synth_sample<S: Scalar>(index: u64, h: usize, w: usize, difficulty: u8, seed: u64) -> Result<ChangeSample<S>> {
    check_side(h, w)?;
    let style = Style::for_difficulty(difficulty)?;
    let mut rng = sample_rng(seed, index);
    let scene = random_scene(&mut rng, h, w, &style);
    let (a, b, mask) = render_pair(&scene, &style, &mut rng)?;
    Ok(ChangeSample { a, b, mask, seed, index })
}

/// `n` samples from stream `seed`, generated in parallel and returned in
/// index order.
pub fn synth_generate<S: Scalar>(n: usize, h: usize, w: usize, difficulty: u8, seed: u64) -> Result<Vec<ChangeSample<S>>> {
    check_side(h, w)?;
    Style::for_difficulty(difficulty)?;
    (0..n as u64).into_par_iter().map(|i| synth_sample(i, h, w, difficulty, seed)).collect()
}
