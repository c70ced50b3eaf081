//! Plain-loop `f64` reference implementations.
//!
//! Everything here works on flat row-major slices with explicit index
//! arithmetic and shares no code with the graph ops it is used to check.

/// `[m, k] x [k, n]` by the textbook triple loop.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Direct convolution of `x: [ci, h, w]` with `kern: [co, ci, kh, kw]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    (ci, h, w): (usize, usize, usize),
    kern: &[f64],
    (co, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; co * ho * wo];
    for o in 0..co {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for i in 0..ci {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += x[(i * h + iy as usize) * w + ix as usize] * kern[((o * ci + i) * kh + ky) * kw + kx];
                        }
                    }
                }
                out[(o * ho + oy) * wo + ox] = acc;
            }
        }
    }
    (out, ho, wo)
}

/// Bilinear resize of one `[h, w]` plane with half-pixel sample centers.
pub fn bilinear_plane(x: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let coord = |o: usize, n_in: usize, n_out: usize| {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let lo = (s.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        let (y0, y1, fy) = coord(oy, h, oh);
        for ox in 0..ow {
            let (x0, x1, fx) = coord(ox, w, ow);
            let v00 = x[y0 * w + x0];
            let v01 = x[y0 * w + x1];
            let v10 = x[y1 * w + x0];
            let v11 = x[y1 * w + x1];
            out[oy * ow + ox] = v00 * (1.0 - fy) * (1.0 - fx) + v01 * (1.0 - fy) * fx + v10 * fy * (1.0 - fx) + v11 * fy * fx;
        }
    }
    out
}

/// Bidirectional WKV by the double loop over all token pairs.
pub fn wkv_bidirectional(k: &[f64], v: &[f64], w: &[f64], u: &[f64], t_len: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; t_len * d];
    for c in 0..d {
        for t in 0..t_len {
            let expo = |i: usize| {
                if i == t {
                    u[c] + k[t * d + c]
                } else {
                    -((t.abs_diff(i) - 1) as f64) * w[c] + k[i * d + c]
                }
            };
            let m = (0..t_len).map(expo).fold(f64::NEG_INFINITY, f64::max);
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..t_len {
                let e = (expo(i) - m).exp();
                num += e * v[i * d + c];
                den += e;
            }
            out[t * d + c] = num / den;
        }
    }
    out
}

/// Quarter-channel shift of `[c, h, w]`: the four channel groups read their
/// left, right, upper and lower neighbour, zero outside the map.
pub fn qshift(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let q = c / 4;
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let group = if q == 0 { 3 } else { (ch / q).min(3) };
        let (dy, dx): (isize, isize) = [(0, -1), (0, 1), (-1, 0), (1, 0)][group];
        for y in 0..h {
            for x_ in 0..w {
                let sy = y as isize + dy;
                let sx = x_ as isize + dx;
                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                    out[(ch * h + y) * w + x_] = x[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    out
}

/// Per-position layer norm over channels of `[c, n]`, unit scale, zero shift.
pub fn layer_norm_channels(x: &[f64], c: usize, n: usize, eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; c * n];
    for p in 0..n {
        let mean = (0..c).map(|ch| x[ch * n + p]).sum::<f64>() / c as f64;
        let var = (0..c).map(|ch| (x[ch * n + p] - mean).powi(2)).sum::<f64>() / c as f64;
        for ch in 0..c {
            out[ch * n + p] = (x[ch * n + p] - mean) / (var + eps).sqrt();
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `σ(expand · relu(reduce · s))` for a channel summary `s` of length `c`.
pub fn gate(s: &[f64], reduce: &[f64], expand: &[f64], hid: usize) -> Vec<f64> {
    let c = s.len();
    let hidden: Vec<f64> = (0..hid).map(|j| (0..c).map(|ch| s[ch] * reduce[ch * hid + j]).sum::<f64>().max(0.0)).collect();
    (0..c).map(|ch| sigmoid((0..hid).map(|j| hidden[j] * expand[j * c + ch]).sum())).collect()
}

/// Squeeze-and-excitation over `[c, n]` with `reduce: [c, hid]`, `expand: [hid, c]`.
pub fn squeeze_excite(x: &[f64], c: usize, n: usize, reduce: &[f64], expand: &[f64], hid: usize) -> Vec<f64> {
    let gap: Vec<f64> = (0..c).map(|ch| x[ch * n..(ch + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let mut hidden = vec![0.0; hid];
    for (j, hv) in hidden.iter_mut().enumerate() {
        let s: f64 = (0..c).map(|ch| gap[ch] * reduce[ch * hid + j]).sum();
        *hv = s.max(0.0);
    }
    let mut out = vec![0.0; c * n];
    for ch in 0..c {
        let gate = sigmoid((0..hid).map(|j| hidden[j] * expand[j * c + ch]).sum());
        for p in 0..n {
            out[ch * n + p] = x[ch * n + p] * gate;
        }
    }
    out
}

/// Token mixing for `n` tokens of width `d`, unrolled one token at a time.
pub struct SpatialMixRef<'a> {
    pub w_r: &'a [f64],
    pub w_k: &'a [f64],
    pub w_v: &'a [f64],
    pub w_o: &'a [f64],
    pub mu_r: &'a [f64],
    pub mu_k: &'a [f64],
    pub mu_v: &'a [f64],
    pub decay: &'a [f64],
    pub bonus: &'a [f64],
}

impl SpatialMixRef<'_> {
    pub fn apply(&self, x: &[f64], shifted: &[f64], n: usize, d: usize) -> Vec<f64> {
        let project = |mu: &[f64], wm: &[f64]| {
            let mut out = vec![0.0; n * d];
            for t in 0..n {
                for j in 0..d {
                    let mut acc = 0.0;
                    for i in 0..d {
                        let mixed = mu[i].clamp(0.0, 1.0) * x[t * d + i] + (1.0 - mu[i].clamp(0.0, 1.0)) * shifted[t * d + i];
                        acc += mixed * wm[i * d + j];
                    }
                    out[t * d + j] = acc;
                }
            }
            out
        };
        let r = project(self.mu_r, self.w_r);
        let k = project(self.mu_k, self.w_k);
        let v = project(self.mu_v, self.w_v);
        let agg = wkv_bidirectional(&k, &v, self.decay, self.bonus, n, d);
        let gated: Vec<f64> = (0..n * d).map(|i| sigmoid(r[i]) * agg[i]).collect();
        matmul(&gated, self.w_o, n, d, d)
    }
}

/// Mean binary cross-entropy with predictions clamped to `[delta, 1-delta]`.
pub fn bce(target: &[f64], pred: &[f64], delta: f64) -> f64 {
    let mut acc = 0.0;
    for (&m, &p) in target.iter().zip(pred) {
        let p = p.clamp(delta, 1.0 - delta);
        acc -= m * p.ln() + (1.0 - m) * (1.0 - p).ln();
    }
    acc / target.len() as f64
}

pub fn dice(target: &[f64], pred: &[f64], eps: f64) -> f64 {
    let inter: f64 = target.iter().zip(pred).map(|(a, b)| a * b).sum();
    let st: f64 = target.iter().sum();
    let sp: f64 = pred.iter().sum();
    1.0 - (2.0 * inter + eps) / (st + sp + eps)
}

/// `(tp, fp, fn, tn)` after thresholding predictions (`p >= threshold` is positive).
pub fn confusion(target: &[f64], pred: &[f64], threshold: f64) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for (&m, &p) in target.iter().zip(pred) {
        match (m >= 0.5, p >= threshold) {
            (true, true) => c.0 += 1,
            (false, true) => c.1 += 1,
            (true, false) => c.2 += 1,
            (false, false) => c.3 += 1,
        }
    }
    c
}
