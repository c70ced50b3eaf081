//! WKV aggregation: a decayed, key-weighted mean of values.
//!
//! Token `t` on channel `c` mixes values `v_i` with weights
//! `exp(-(dist) * w + k_i)` for `i != t` and `exp(u + k_t)` for itself, where
//! `dist = |t - i| - 1`. The causal form only sees `i < t`; the
//! bidirectional form sees every token. Both fast kernels run one stabilized
//! sweep per direction, so cost and state are linear in `T * d`.
//!
//! Kernels take the effective decay `w` directly. Keeping it non-negative is
//! the caller's job (the blocks use `w = exp(w_raw)`).

use crate::error::{Error, Result};
use crate::numerics::meter::add_ops;
use crate::numerics::{BackwardCtx, Scalar, Tensor, Var};

/// Arithmetic ops charged per token and channel by the causal kernel.
pub const CAUSAL_OPS: u64 = 20;
/// Per token and channel for the bidirectional kernel (two sweeps + merge).
pub const BIDIRECTIONAL_OPS: u64 = 34;
/// Per (output, input, channel) term of the naive double loop.
pub const NAIVE_TERM_OPS: u64 = 9;
/// Per token and channel for one gradient sweep.
pub const GRAD_SWEEP_OPS: u64 = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WkvKind {
    Causal,
    Bidirectional,
}

/// Per-channel decay `w` and bonus `u`.
#[derive(Debug, Clone)]
pub struct WkvParams<S: Scalar> {
    pub w: Tensor<S>,
    pub u: Tensor<S>,
}

impl<S: Scalar> WkvParams<S> {
    pub fn new(w: Tensor<S>, u: Tensor<S>) -> Result<Self> {
        if w.rank() != 1 || w.shape() != u.shape() {
            return Err(Error::shape("wkv", format!("w {:?} and u {:?} must be equal-length vectors", w.shape(), u.shape())));
        }
        Ok(Self { w, u })
    }

    pub fn from_f64(w: &[f64], u: &[f64]) -> Result<Self> {
        Self::new(Tensor::from_f64([w.len()], w)?, Tensor::from_f64([u.len()], u)?)
    }

    pub fn channels(&self) -> usize {
        self.w.numel()
    }
}

/// Running sums over the tokens visited so far, one lane per channel:
/// `a·e^p = Σ ρ^dist e^k v` and `b·e^p = Σ ρ^dist e^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct WkvState<S> {
    pub a: Vec<S>,
    pub b: Vec<S>,
    pub p: Vec<S>,
}

impl<S: Scalar> WkvState<S> {
    pub fn new(d: usize) -> Self {
        Self { a: vec![S::zero(); d], b: vec![S::zero(); d], p: vec![S::neg_infinity(); d] }
    }

    /// Output of channel `c` for a token whose own term has exponent `e`
    /// and value `v`. Returns the ratio and the log of its denominator.
    #[inline]
    pub fn read(&self, c: usize, e: S, v: S) -> (S, S) {
        let q = self.p[c].max(e);
        let e1 = (self.p[c] - q).exp();
        let e2 = (e - q).exp();
        let den = e1 * self.b[c] + e2;
        ((e1 * self.a[c] + e2 * v) / den, q + den.ln())
    }

    /// Ages every visited token by one step of decay `w`, then appends a
    /// token with key `k` and value `v`.
    #[inline]
    pub fn push(&mut self, c: usize, w: S, k: S, v: S) {
        let aged = self.p[c] - w;
        let q = aged.max(k);
        let e1 = (aged - q).exp();
        let e2 = (k - q).exp();
        self.a[c] = e1 * self.a[c] + e2 * v;
        self.b[c] = e1 * self.b[c] + e2;
        self.p[c] = q;
    }

    /// Re-expresses channel `c` relative to exponent `p` without changing
    /// the sums it represents.
    pub fn rebase(&mut self, c: usize, p: S) {
        let s = (self.p[c] - p).exp();
        self.a[c] *= s;
        self.b[c] *= s;
        self.p[c] = p;
    }

    /// `a / b`: the decayed mean of the visited values (NaN when empty).
    pub fn mean(&self, c: usize) -> S {
        self.a[c] / self.b[c]
    }
}

fn check_inputs<S: Scalar>(k: &Tensor<S>, v: &Tensor<S>, params: &WkvParams<S>) -> Result<(usize, usize)> {
    if k.rank() != 2 || k.shape() != v.shape() {
        return Err(Error::shape("wkv", format!("k {:?} and v {:?} must be equal [T, d] matrices", k.shape(), v.shape())));
    }
    let (t, d) = (k.shape()[0], k.shape()[1]);
    if t == 0 {
        return Err(Error::Invalid("wkv needs at least one token".into()));
    }
    if params.channels() != d {
        return Err(Error::shape("wkv", format!("{} channels but params have {}", d, params.channels())));
    }
    if !k.all_finite() || !v.all_finite() {
        return Err(Error::NonFinite { op: "wkv" });
    }
    Ok((t, d))
}

/// Reference double loop over the causal form with per-row max subtraction.
pub fn wkv_naive<S: Scalar>(k: &Tensor<S>, v: &Tensor<S>, params: &WkvParams<S>) -> Result<Tensor<S>> {
    let (t_len, d) = check_inputs(k, v, params)?;
    let (k, v, w, u) = (k.data(), v.data(), params.w.data(), params.u.data());
    let mut out = vec![S::zero(); t_len * d];
    let mut ex = vec![S::zero(); t_len];
    for t in 0..t_len {
        for c in 0..d {
            for i in 0..t {
                ex[i] = -S::of((t - 1 - i) as f64) * w[c] + k[i * d + c];
            }
            ex[t] = u[c] + k[t * d + c];
            let m = ex[..=t].iter().fold(S::neg_infinity(), |m, &e| m.max(e));
            let (mut num, mut den) = (S::zero(), S::zero());
            for i in 0..=t {
                let e = (ex[i] - m).exp();
                num += e * v[i * d + c];
                den += e;
            }
            out[t * d + c] = num / den;
        }
    }
    let terms = (t_len * (t_len + 1) / 2 * d) as u64;
    add_ops(terms * NAIVE_TERM_OPS + (t_len * d) as u64);
    Tensor::from_vec([t_len, d], out)
}

/// Causal kernel: one forward sweep of a [`WkvState`].
pub fn wkv_recurrent<S: Scalar>(k: &Tensor<S>, v: &Tensor<S>, params: &WkvParams<S>) -> Result<Tensor<S>> {
    let (t_len, d) = check_inputs(k, v, params)?;
    let mut out = vec![S::zero(); t_len * d];
    causal_sweep(k.data(), v.data(), params, t_len, d, &mut out, None);
    add_ops((t_len * d) as u64 * CAUSAL_OPS);
    Tensor::from_vec([t_len, d], out)
}

/// Bidirectional kernel: a forward sweep for the past, a backward sweep for
/// the future, and the bonus term merged in between.
pub fn wkv_bidirectional<S: Scalar>(k: &Tensor<S>, v: &Tensor<S>, params: &WkvParams<S>) -> Result<Tensor<S>> {
    let (t_len, d) = check_inputs(k, v, params)?;
    let mut out = vec![S::zero(); t_len * d];
    bidirectional_sweep(k.data(), v.data(), params, t_len, d, &mut out, None);
    add_ops((t_len * d) as u64 * BIDIRECTIONAL_OPS);
    Tensor::from_vec([t_len, d], out)
}

pub fn wkv_forward<S: Scalar>(kind: WkvKind, k: &Tensor<S>, v: &Tensor<S>, params: &WkvParams<S>) -> Result<Tensor<S>> {
    match kind {
        WkvKind::Causal => wkv_recurrent(k, v, params),
        WkvKind::Bidirectional => wkv_bidirectional(k, v, params),
    }
}

fn causal_sweep<S: Scalar>(
    k: &[S],
    v: &[S],
    params: &WkvParams<S>,
    t_len: usize,
    d: usize,
    out: &mut [S],
    mut log_den: Option<&mut [S]>,
) {
    let (w, u) = (params.w.data(), params.u.data());
    let mut st = WkvState::new(d);
    for t in 0..t_len {
        let row = t * d;
        for c in 0..d {
            let (kt, vt) = (k[row + c], v[row + c]);
            let (y, l) = st.read(c, u[c] + kt, vt);
            out[row + c] = y;
            if let Some(ld) = log_den.as_deref_mut() {
                ld[row + c] = l;
            }
            st.push(c, w[c], kt, vt);
        }
    }
}

fn bidirectional_sweep<S: Scalar>(
    k: &[S],
    v: &[S],
    params: &WkvParams<S>,
    t_len: usize,
    d: usize,
    out: &mut [S],
    mut log_den: Option<&mut [S]>,
) {
    let (w, u) = (params.w.data(), params.u.data());
    let n = t_len * d;
    let (mut pa, mut pb, mut pp) = (vec![S::zero(); n], vec![S::zero(); n], vec![S::zero(); n]);
    let mut st = WkvState::new(d);
    for t in 0..t_len {
        let row = t * d;
        for c in 0..d {
            pa[row + c] = st.a[c];
            pb[row + c] = st.b[c];
            pp[row + c] = st.p[c];
            st.push(c, w[c], k[row + c], v[row + c]);
        }
    }
    let mut fut = WkvState::new(d);
    for t in (0..t_len).rev() {
        let row = t * d;
        for c in 0..d {
            let i = row + c;
            let e = u[c] + k[i];
            let q = pp[i].max(fut.p[c]).max(e);
            let ep = (pp[i] - q).exp();
            let ef = (fut.p[c] - q).exp();
            let eb = (e - q).exp();
            let num = ep * pa[i] + ef * fut.a[c] + eb * v[i];
            let den = ep * pb[i] + ef * fut.b[c] + eb;
            out[i] = num / den;
            if let Some(ld) = log_den.as_deref_mut() {
                ld[i] = q + den.ln();
            }
            fut.push(c, w[c], k[i], v[i]);
        }
    }
}

/// Gradients of a WKV forward with respect to each input.
#[derive(Debug, Clone)]
pub struct WkvGrads<S: Scalar> {
    pub k: Tensor<S>,
    pub v: Tensor<S>,
    pub w: Tensor<S>,
    pub u: Tensor<S>,
}

/// Exact vector-Jacobian product of [`wkv_forward`].
///
/// The forward pass is recomputed to recover outputs and per-token log
/// denominators; then one sweep per direction accumulates, for each input
/// token, the upstream signal of every output it feeds.
pub fn wkv_backward<S: Scalar>(
    kind: WkvKind,
    k: &Tensor<S>,
    v: &Tensor<S>,
    params: &WkvParams<S>,
    grad: &Tensor<S>,
) -> Result<WkvGrads<S>> {
    let (t_len, d) = check_inputs(k, v, params)?;
    if grad.shape() != k.shape() {
        return Err(Error::shape("wkv_backward", format!("upstream {:?} vs forward {:?}", grad.shape(), k.shape())));
    }
    let n = t_len * d;
    let (mut out, mut ell) = (vec![S::zero(); n], vec![S::zero(); n]);
    let (kd, vd, g) = (k.data(), v.data(), grad.data());
    match kind {
        WkvKind::Causal => causal_sweep(kd, vd, params, t_len, d, &mut out, Some(&mut ell)),
        WkvKind::Bidirectional => bidirectional_sweep(kd, vd, params, t_len, d, &mut out, Some(&mut ell)),
    }
    let mut dk = vec![S::zero(); n];
    let mut dv = vec![S::zero(); n];
    let mut dw = vec![S::zero(); d];
    let mut du = vec![S::zero(); d];
    let u = params.u.data();
    for i in 0..n {
        let c = i % d;
        let beta = (u[c] + kd[i] - ell[i]).exp();
        let gb = g[i] * beta;
        dv[i] += gb;
        let delta = gb * (vd[i] - out[i]);
        dk[i] += delta;
        du[c] += delta;
    }
    let (forward_ops, sweeps) = match kind {
        WkvKind::Causal => (CAUSAL_OPS, 1),
        WkvKind::Bidirectional => (BIDIRECTIONAL_OPS, 2),
    };
    let sw = GradSweep { k: kd, v: vd, out: &out, ell: &ell, g, w: params.w.data(), d };
    sw.run((0..t_len).rev(), &mut dk, &mut dv, &mut dw);
    if kind == WkvKind::Bidirectional {
        sw.run(0..t_len, &mut dk, &mut dv, &mut dw);
    }
    add_ops(n as u64 * (forward_ops + 6 + sweeps * GRAD_SWEEP_OPS));
    Ok(WkvGrads {
        k: Tensor::from_vec([t_len, d], dk)?,
        v: Tensor::from_vec([t_len, d], dv)?,
        w: Tensor::from_vec([d], dw)?,
        u: Tensor::from_vec([d], du)?,
    })
}

struct GradSweep<'a, S> {
    k: &'a [S],
    v: &'a [S],
    out: &'a [S],
    ell: &'a [S],
    g: &'a [S],
    w: &'a [S],
    d: usize,
}

impl<S: Scalar> GradSweep<'_, S> {
    /// Visits tokens in `order`. At each token, first credits it (as an
    /// input) with the outputs already visited, then adds it as an output.
    /// The accumulators hold `Σ ρ^dist e^{-ℓ} g` and the same weighted by the
    /// output (`mg`, `mh`), plus copies weighted by `dist` for the decay
    /// gradient, all sharing the running exponent `s`.
    fn run(&self, order: impl Iterator<Item = usize>, dk: &mut [S], dv: &mut [S], dw: &mut [S]) {
        let d = self.d;
        let mut s = vec![S::neg_infinity(); d];
        let mut mg = vec![S::zero(); d];
        let mut mh = vec![S::zero(); d];
        let mut mg2 = vec![S::zero(); d];
        let mut mh2 = vec![S::zero(); d];
        for t in order {
            let row = t * d;
            for c in 0..d {
                let i = row + c;
                let f = (self.k[i] + s[c]).exp();
                let vi = self.v[i];
                dv[i] += f * mg[c];
                dk[i] += f * (vi * mg[c] - mh[c]);
                dw[c] -= f * (vi * mg2[c] - mh2[c]);

                let aged = s[c] - self.w[c];
                let ns = aged.max(-self.ell[i]);
                let alpha = (aged - ns).exp();
                let beta = (-self.ell[i] - ns).exp() * self.g[i];
                mg2[c] = alpha * (mg2[c] + mg[c]);
                mh2[c] = alpha * (mh2[c] + mh[c]);
                mg[c] = alpha * mg[c] + beta;
                mh[c] = alpha * mh[c] + beta * self.out[i];
                s[c] = ns;
            }
        }
    }
}

/// Differentiable WKV over `k`, `v` of shape `[T, d]` with decay `w` and
/// bonus `u` of shape `[d]`, recorded as a single node.
pub fn wkv<S: Scalar>(kind: WkvKind, k: &Var<S>, v: &Var<S>, w: &Var<S>, u: &Var<S>) -> Result<Var<S>> {
    let params = WkvParams::new(w.value().clone(), u.value().clone())?;
    let value = wkv_forward(kind, k.value(), v.value(), &params)?;
    let parents = vec![k.clone(), v.clone(), w.clone(), u.clone()];
    Var::from_op("wkv", value, parents, move |c: &BackwardCtx<'_, S>| {
        let params = WkvParams::new(c.input(2).clone(), c.input(3).clone())?;
        let gr = wkv_backward(kind, c.input(0), c.input(1), &params, c.grad)?;
        let pick = |i: usize, t: Tensor<S>| c.needs[i].then_some(t);
        Ok(vec![pick(0, gr.k), pick(1, gr.v), pick(2, gr.w), pick(3, gr.u)])
    })
}
