//! Direct 2-D convolution and integer-factor resampling on `[C, H, W]` maps.

use super::autodiff::{BackwardCtx, Var};
use super::linalg::{matmul_nn, matmul_nt, matmul_tn};
use super::meter::add_ops;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], k: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let ([c_in, h, w], [c_out, kc, kh, kw]) = (x, k) else {
            return Err(Error::shape("conv2d", format!("input {x:?}, kernel {k:?}")));
        };
        let (c_in, h, w, c_out, kc, kh, kw) = (*c_in, *h, *w, *c_out, *kc, *kh, *kw);
        if kc != c_in {
            return Err(Error::shape("conv2d", format!("kernel expects {kc} channels, input has {c_in}")));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} must be odd")));
        }
        if stride == 0 {
            return Err(Error::Invalid("conv2d stride must be positive".into()));
        }
        if pad != 0 && (kh != kw || pad != (kh - 1) / 2) {
            return Err(Error::shape("conv2d", format!("padding {pad} is neither 0 nor same for {kh}x{kw}")));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} larger than padded {h}x{w}")));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom { c_in, h, w, c_out, kh, kw, stride, pad, ho, wo })
    }

    pub fn macs(&self) -> u64 {
        (self.c_out * self.c_in * self.kh * self.kw * self.ho * self.wo) as u64
    }

    /// Valid output-column range for kernel column `kx`.
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let lo = if self.pad > kx { (self.pad - kx).div_ceil(self.stride) } else { 0 };
        // ix = ox*s + kx - pad <= w-1
        let hi = if self.w + self.pad > kx { ((self.w - 1 + self.pad - kx) / self.stride + 1).min(self.wo) } else { 0 };
        (lo, hi.max(lo))
    }

    fn iy(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }
}

/// Unfolds `x` into `[c_in·kh·kw, ho·wo]` patch columns (zeros where the
/// window leaves the map).
fn im2col<S: Scalar>(g: &ConvGeom, x: &[S]) -> Vec<S> {
    let plane = g.ho * g.wo;
    let mut col = vec![S::zero(); g.c_in * g.kh * g.kw * plane];
    for ci in 0..g.c_in {
        let xin = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                let (lo, hi) = g.ox_range(kx);
                if lo == hi {
                    continue;
                }
                for oy in 0..g.ho {
                    let Some(iy) = g.iy(oy, ky) else { continue };
                    let xrow = &xin[iy * g.w..(iy + 1) * g.w];
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        drow[lo..hi].copy_from_slice(&xrow[lo + kx - g.pad..hi + kx - g.pad]);
                    } else {
                        for ox in lo..hi {
                            drow[ox] = xrow[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-adds patch columns back onto the map.
fn col2im<S: Scalar>(g: &ConvGeom, col: &[S]) -> Vec<S> {
    let plane = g.ho * g.wo;
    let mut x = vec![S::zero(); g.c_in * g.h * g.w];
    for ci in 0..g.c_in {
        let xin = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * plane..(row + 1) * plane];
                let (lo, hi) = g.ox_range(kx);
                for oy in 0..g.ho {
                    let Some(iy) = g.iy(oy, ky) else { continue };
                    let xrow = &mut xin[iy * g.w..(iy + 1) * g.w];
                    let srow = &src[oy * g.wo..(oy + 1) * g.wo];
                    for ox in lo..hi {
                        xrow[ox * g.stride + kx - g.pad] += srow[ox];
                    }
                }
            }
        }
    }
    x
}

fn is_pointwise(g: &ConvGeom) -> bool {
    g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0
}

fn patch_len(g: &ConvGeom) -> usize {
    g.c_in * g.kh * g.kw
}

fn conv_forward<S: Scalar>(g: &ConvGeom, x: &[S], k: &[S], bias: Option<&[S]>) -> Vec<S> {
    let plane = g.ho * g.wo;
    let mut out = if is_pointwise(g) {
        matmul_nn(k, x, g.c_out, g.c_in, plane)
    } else {
        matmul_nn(k, &im2col(g, x), g.c_out, patch_len(g), plane)
    };
    if let Some(b) = bias {
        for (co, o) in out.chunks_mut(plane).enumerate() {
            o.iter_mut().for_each(|v| *v += b[co]);
        }
    }
    out
}

fn conv_grad_input<S: Scalar>(g: &ConvGeom, k: &[S], gout: &[S]) -> Vec<S> {
    let plane = g.ho * g.wo;
    let gcol = matmul_tn(k, gout, g.c_out, patch_len(g), plane);
    if is_pointwise(g) {
        gcol
    } else {
        col2im(g, &gcol)
    }
}

fn conv_grad_kernel<S: Scalar>(g: &ConvGeom, x: &[S], gout: &[S]) -> Vec<S> {
    let plane = g.ho * g.wo;
    if is_pointwise(g) {
        matmul_nt(gout, x, g.c_out, plane, g.c_in)
    } else {
        matmul_nt(gout, &im2col(g, x), g.c_out, plane, patch_len(g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    BilinearUp,
    AvgPoolDown,
    NearestUp,
}

/// Source indices and weight for one output coordinate of a bilinear resize
/// with half-pixel centers.
fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn chw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [c, h, w] => Ok((*c, *h, *w)),
        _ => Err(Error::shape(op, format!("expected [C, H, W], got {shape:?}"))),
    }
}

impl<S: Scalar> Var<S> {
    /// Convolution of `self: [C_in, H, W]` with `kernel: [C_out, C_in, kh, kw]`.
    pub fn conv2d(&self, kernel: &Var<S>, bias: Option<&Var<S>>, stride: usize, pad: usize) -> Result<Var<S>> {
        let g = ConvGeom::new(self.shape(), kernel.shape(), stride, pad)?;
        if let Some(b) = bias {
            if b.shape() != [g.c_out] {
                return Err(Error::shape("conv2d", format!("bias {:?} for {} outputs", b.shape(), g.c_out)));
            }
        }
        let out = conv_forward(&g, self.value().data(), kernel.value().data(), bias.map(|b| b.value().data()));
        let value = Tensor::raw(vec![g.c_out, g.ho, g.wo], out);
        let mut parents = vec![self.clone(), kernel.clone()];
        parents.extend(bias.cloned());
        Var::from_op("conv2d", value, parents, move |c: &BackwardCtx<'_, S>| {
            let gout = c.grad.data();
            let gx = c.needs[0].then(|| Tensor::raw(vec![g.c_in, g.h, g.w], conv_grad_input(&g, c.input(1).data(), gout)));
            let gk = c.needs[1].then(|| {
                Tensor::raw(vec![g.c_out, g.c_in, g.kh, g.kw], conv_grad_kernel(&g, c.input(0).data(), gout))
            });
            let mut grads = vec![gx, gk];
            if c.inputs.len() == 3 {
                let plane = g.ho * g.wo;
                grads.push(c.needs[2].then(|| {
                    let sums = (0..g.c_out).map(|co| gout[co * plane..(co + 1) * plane].iter().copied().sum()).collect();
                    Tensor::raw(vec![g.c_out], sums)
                }));
            }
            Ok(grads)
        })
    }

    /// Resizes a `[C, H, W]` map by an integer factor.
    pub fn resample2d(&self, out_h: usize, out_w: usize, mode: ResampleMode) -> Result<Var<S>> {
        let (c, h, w) = chw("resample2d", self.shape())?;
        let ok = match mode {
            ResampleMode::BilinearUp | ResampleMode::NearestUp => {
                h > 0 && w > 0 && out_h >= h && out_w >= w && out_h % h == 0 && out_w % w == 0
            }
            ResampleMode::AvgPoolDown => out_h > 0 && out_w > 0 && h % out_h == 0 && w % out_w == 0,
        };
        if !ok {
            return Err(Error::Invalid(format!("{mode:?} from {h}x{w} to {out_h}x{out_w} is not an integer scale")));
        }
        if (h, w) == (out_h, out_w) {
            return Ok(self.clone());
        }
        let x = self.value().data();
        let (ip, op) = (h * w, out_h * out_w);
        let mut out = vec![S::zero(); c * op];
        add_ops((4 * c * op.max(ip)) as u64);
        match mode {
            ResampleMode::BilinearUp => {
                let (ty, tx) = (bilinear_taps(h, out_h), bilinear_taps(w, out_w));
                for ch in 0..c {
                    let src = &x[ch * ip..(ch + 1) * ip];
                    for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                        let ly = S::of(ly);
                        for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                            let lx = S::of(lx);
                            let top = src[y0 * w + x0] * (S::one() - lx) + src[y0 * w + x1] * lx;
                            let bot = src[y1 * w + x0] * (S::one() - lx) + src[y1 * w + x1] * lx;
                            out[ch * op + oy * out_w + ox] = top * (S::one() - ly) + bot * ly;
                        }
                    }
                }
            }
            ResampleMode::AvgPoolDown => {
                let (sy, sx) = (h / out_h, w / out_w);
                let inv = S::one() / S::of((sy * sx) as f64);
                for ch in 0..c {
                    for iy in 0..h {
                        for ix in 0..w {
                            out[ch * op + (iy / sy) * out_w + ix / sx] += x[ch * ip + iy * w + ix];
                        }
                    }
                }
                out.iter_mut().for_each(|v| *v *= inv);
            }
            ResampleMode::NearestUp => {
                let (sy, sx) = (out_h / h, out_w / w);
                for ch in 0..c {
                    for oy in 0..out_h {
                        for ox in 0..out_w {
                            out[ch * op + oy * out_w + ox] = x[ch * ip + (oy / sy) * w + ox / sx];
                        }
                    }
                }
            }
        }
        let value = Tensor::raw(vec![c, out_h, out_w], out);
        Var::from_op("resample2d", value, vec![self.clone()], move |ctx: &BackwardCtx<'_, S>| {
            let g = ctx.grad.data();
            let mut gx = vec![S::zero(); c * ip];
            match mode {
                ResampleMode::BilinearUp => {
                    let (ty, tx) = (bilinear_taps(h, out_h), bilinear_taps(w, out_w));
                    for ch in 0..c {
                        let dst = &mut gx[ch * ip..(ch + 1) * ip];
                        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                            let ly = S::of(ly);
                            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                                let lx = S::of(lx);
                                let gv = g[ch * op + oy * out_w + ox];
                                let (gt, gb) = (gv * (S::one() - ly), gv * ly);
                                dst[y0 * w + x0] += gt * (S::one() - lx);
                                dst[y0 * w + x1] += gt * lx;
                                dst[y1 * w + x0] += gb * (S::one() - lx);
                                dst[y1 * w + x1] += gb * lx;
                            }
                        }
                    }
                }
                ResampleMode::AvgPoolDown => {
                    let (sy, sx) = (h / out_h, w / out_w);
                    let inv = S::one() / S::of((sy * sx) as f64);
                    for ch in 0..c {
                        for iy in 0..h {
                            for ix in 0..w {
                                gx[ch * ip + iy * w + ix] = g[ch * op + (iy / sy) * out_w + ix / sx] * inv;
                            }
                        }
                    }
                }
                ResampleMode::NearestUp => {
                    let (sy, sx) = (out_h / h, out_w / w);
                    for ch in 0..c {
                        for oy in 0..out_h {
                            for ox in 0..out_w {
                                gx[ch * ip + (oy / sy) * w + ox / sx] += g[ch * op + oy * out_w + ox];
                            }
                        }
                    }
                }
            }
            Ok(vec![Some(Tensor::raw(vec![c, h, w], gx))])
        })
    }
}
