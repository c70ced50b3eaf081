//! Op-count, wall-time and memory sweeps over sequence length or resolution.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::ChangeRwkv;
use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::meter;
use crate::numerics::{Scalar, Tensor};
use crate::wkv::{wkv_bidirectional, wkv_naive, wkv_recurrent, WkvParams, BIDIRECTIONAL_OPS, CAUSAL_OPS, NAIVE_TERM_OPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchTarget {
    WkvRecurrent,
    WkvNaive,
    WkvBidirectional,
    FullModel,
}

impl BenchTarget {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "wkv-recurrent" => Ok(Self::WkvRecurrent),
            "wkv-naive" => Ok(Self::WkvNaive),
            "wkv-bidirectional" => Ok(Self::WkvBidirectional),
            "full-model" => Ok(Self::FullModel),
            _ => Err(Error::Config(format!(
                "unknown bench target {s:?} (expected wkv-recurrent, wkv-naive, wkv-bidirectional or full-model)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::WkvRecurrent => "wkv-recurrent",
            Self::WkvNaive => "wkv-naive",
            Self::WkvBidirectional => "wkv-bidirectional",
            Self::FullModel => "full-model",
        }
    }

    pub fn is_kernel(self) -> bool {
        self != Self::FullModel
    }

    /// `T = 2^6 … 2^20` for kernels, `64² … 1024²` for the model.
    pub fn default_sizes(self) -> Vec<usize> {
        if self.is_kernel() {
            (6..=20).map(|p| 1usize << p).collect()
        } else {
            vec![64, 128, 256, 512, 1024]
        }
    }
}

/// One measured size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchRecord {
    pub name: String,
    /// Sequence length, or image side.
    pub size: usize,
    pub d: usize,
    pub ops: u64,
    /// Median over repeats.
    pub wall_ns: u128,
    pub peak_bytes: usize,
}

/// Sizes whose estimated cost exceeds these are skipped and the sweep is
/// marked truncated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchLimits {
    pub max_ops: u64,
    pub max_bytes: usize,
}

impl Default for BenchLimits {
    fn default() -> Self {
        Self { max_ops: 200_000_000_000, max_bytes: 8 << 30 }
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub target: BenchTarget,
    pub records: Vec<BenchRecord>,
    pub truncated: Option<String>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        if self.target.is_kernel() {
            s.push_str("kernel,T,d,ops,wall_ns\n");
            for r in &self.records {
                s.push_str(&format!("{},{},{},{},{}\n", r.name, r.size, r.d, r.ops, r.wall_ns));
            }
        } else {
            s.push_str("model,resolution,ops,wall_ns,peak_bytes\n");
            for r in &self.records {
                s.push_str(&format!("{},{},{},{},{}\n", r.name, r.size, r.ops, r.wall_ns, r.peak_bytes));
            }
        }
        if let Some(why) = &self.truncated {
            s.push_str(&format!("# truncated: {why}\n"));
        }
        s
    }

    pub fn ops(&self, size: usize) -> Option<u64> {
        self.records.iter().find(|r| r.size == size).map(|r| r.ops)
    }
}

fn check_sizes(sizes: &[usize], repeats: usize) -> Result<()> {
    if sizes.is_empty() || repeats == 0 {
        return Err(Error::Invalid("bench needs at least one size and one repeat".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] == 0 {
        return Err(Error::Invalid(format!("bench sizes must be positive and strictly ascending: {sizes:?}")));
    }
    Ok(())
}

/// Runs `f` `repeats` times; returns the ops of the first run (all runs
/// must agree), the median wall time and the peak bytes above baseline.
fn measure(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<(u64, u128, usize)> {
    let mut times = Vec::with_capacity(repeats);
    let mut ops = None;
    let mut peak = 0;
    for _ in 0..repeats {
        let base = meter::live_bytes();
        meter::reset_peak();
        let start = Instant::now();
        let (res, n) = meter::count_ops(&mut f);
        times.push(start.elapsed().as_nanos());
        res?;
        peak = peak.max(meter::peak_bytes().saturating_sub(base));
        match ops {
            None => ops = Some(n),
            Some(o) if o != n => return Err(Error::Invalid(format!("op count changed between repeats: {o} vs {n}"))),
            _ => {}
        }
    }
    times.sort_unstable();
    Ok((ops.unwrap_or(0), times[times.len() / 2], peak))
}

fn kernel_estimate(target: BenchTarget, t: usize, d: usize) -> (u64, usize) {
    let (t64, d64) = (t as u64, d as u64);
    let ops = match target {
        BenchTarget::WkvRecurrent => t64 * d64 * CAUSAL_OPS,
        BenchTarget::WkvBidirectional => t64 * d64 * BIDIRECTIONAL_OPS,
        _ => t64 * (t64 + 1) / 2 * d64 * NAIVE_TERM_OPS + t64 * d64,
    };
    (ops, 16 * t * d * std::mem::size_of::<f64>())
}

/// Sweeps one WKV kernel over sequence lengths at width `d`.
pub fn bench_kernel<S: Scalar>(target: BenchTarget, sizes: &[usize], d: usize, repeats: usize, limits: BenchLimits, seed: u64) -> Result<BenchReport> {
    if !target.is_kernel() {
        return Err(Error::Invalid("bench_kernel needs a kernel target".into()));
    }
    check_sizes(sizes, repeats)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = WkvParams::<S>::new(Tensor::uniform(vec![d], 0.05, 1.0, &mut rng), Tensor::uniform(vec![d], -0.5, 0.5, &mut rng))?;
    let mut report = BenchReport { target, records: Vec::new(), truncated: None };
    for &t in sizes {
        let (est_ops, est_bytes) = kernel_estimate(target, t, d);
        if est_ops > limits.max_ops || est_bytes > limits.max_bytes {
            report.truncated = Some(format!("stopped before T={t}: estimated {est_ops} ops, {est_bytes} bytes"));
            break;
        }
        let k = Tensor::<S>::uniform(vec![t, d], -1.0, 1.0, &mut rng);
        let v = Tensor::<S>::uniform(vec![t, d], -1.0, 1.0, &mut rng);
        let (ops, wall_ns, peak_bytes) = measure(repeats, || {
            match target {
                BenchTarget::WkvRecurrent => wkv_recurrent(&k, &v, &params)?,
                BenchTarget::WkvBidirectional => wkv_bidirectional(&k, &v, &params)?,
                _ => wkv_naive(&k, &v, &params)?,
            };
            Ok(())
        })?;
        report.records.push(BenchRecord { name: target.name().into(), size: t, d, ops, wall_ns, peak_bytes });
    }
    Ok(report)
}

/// Sweeps inference of one model variant over square resolutions.
pub fn bench_model<S: Scalar>(cfg: &ModelConfig, sizes: &[usize], repeats: usize, limits: BenchLimits, seed: u64) -> Result<BenchReport> {
    check_sizes(sizes, repeats)?;
    for &s in sizes {
        cfg.check_input(s, s)?;
    }
    let model = ChangeRwkv::<S>::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut report = BenchReport { target: BenchTarget::FullModel, records: Vec::new(), truncated: None };
    for &s in sizes {
        if let Some(prev) = report.records.last() {
            let grow = (s * s) as f64 / (prev.size * prev.size) as f64;
            let (est_ops, est_bytes) = ((prev.ops as f64 * grow) as u64, (prev.peak_bytes as f64 * grow) as usize);
            if est_ops > limits.max_ops || est_bytes > limits.max_bytes {
                report.truncated = Some(format!("stopped before {s}x{s}: estimated {est_ops} ops, {est_bytes} bytes"));
                break;
            }
        }
        let a = Tensor::<S>::uniform(vec![cfg.in_channels, s, s], 0.0, 1.0, &mut rng);
        let b = Tensor::<S>::uniform(vec![cfg.in_channels, s, s], 0.0, 1.0, &mut rng);
        let (ops, wall_ns, peak_bytes) = measure(repeats, || model.predict(&a, &b).map(drop))?;
        report.records.push(BenchRecord { name: format!("ChangeRWKV-{}", cfg.variant), size: s, d: 0, ops, wall_ns, peak_bytes });
    }
    Ok(report)
}
