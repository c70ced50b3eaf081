//! Adam training with warmup, cosine decay and global-norm clipping.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint;
use super::model::ChangeRwkv;
use super::synth::ChangeSample;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor, Var};
use crate::objective::{confusion, metrics, total_loss, ConfusionCounts, Metrics, DEFAULT_THRESHOLD};
use crate::params::Bound;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const LOG_FILE: &str = "train_log.csv";
pub const DIVERGED_FILE: &str = "diverged_batch.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub grad_clip: f64,
    pub lambda: f64,
    pub seed: u64,
    pub cosine: bool,
    /// Random horizontal flips of whole samples.
    pub augment: bool,
    pub threshold: f64,
    /// Stops after this many optimizer steps; the schedule spans them.
    pub max_steps: Option<usize>,
}

impl TrainConfig {
    /// Published hyperparameters, meant for full-size datasets.
    pub fn paper() -> Self {
        Self {
            lr: 1e-5,
            weight_decay: 1e-4,
            batch_size: 8,
            epochs: 200,
            warmup_epochs: 20,
            grad_clip: 0.5,
            lambda: 1.0,
            seed: 0,
            cosine: true,
            augment: false,
            threshold: DEFAULT_THRESHOLD,
            max_steps: None,
        }
    }

    /// Defaults sized for small synthetic runs on a CPU.
    pub fn desk() -> Self {
        Self { lr: 1e-3, epochs: 30, warmup_epochs: 1, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("training config: {what}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0) || !(self.lambda >= 0.0) {
            return bad("weight_decay and lambda must be non-negative");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive");
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Per-step learning rate: linear warmup, then cosine decay to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub cosine: bool,
}

impl Schedule {
    pub fn new(cfg: &TrainConfig, steps_per_epoch: usize) -> Self {
        let full = cfg.epochs * steps_per_epoch;
        let total_steps = cfg.max_steps.map_or(full, |m| m.min(full)).max(1);
        let warmup_steps = (cfg.warmup_epochs * steps_per_epoch).min(total_steps);
        Self { base_lr: cfg.lr, warmup_steps, total_steps, cosine: cfg.cosine }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        if !self.cosine {
            return self.base_lr;
        }
        let span = (self.total_steps - self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// First and second moments, with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: i32,
    weight_decay: f64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: &[&Tensor<S>], weight_decay: f64) -> Self {
        let zeros = || params.iter().map(|p| vec![S::zero(); p.numel()]).collect::<Vec<_>>();
        Self { m: zeros(), v: zeros(), t: 0, weight_decay }
    }

    /// Returns the updated parameters.
    pub fn step(&mut self, params: &[&Tensor<S>], grads: &[Tensor<S>], lr: f64) -> Result<Vec<Tensor<S>>> {
        self.t += 1;
        let (b1, b2) = (S::of(ADAM_BETA1), S::of(ADAM_BETA2));
        let c1 = S::of(1.0 - ADAM_BETA1.powi(self.t));
        let c2 = S::of(1.0 - ADAM_BETA2.powi(self.t));
        let (lr, eps, wd) = (S::of(lr), S::of(ADAM_EPS), S::of(self.weight_decay));
        let mut out = Vec::with_capacity(params.len());
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut data = p.to_vec();
            for (j, x) in data.iter_mut().enumerate() {
                let gj = g.data()[j] + wd * *x;
                m[j] = b1 * m[j] + (S::one() - b1) * gj;
                v[j] = b2 * v[j] + (S::one() - b2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *x -= lr * mh / (vh.sqrt() + eps);
            }
            out.push(Tensor::from_vec(p.shape().to_vec(), data)?);
        }
        Ok(out)
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut [Tensor<S>], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = S::of(max_norm / norm);
        for g in grads.iter_mut() {
            *g = g.map(|v| v * s);
        }
    }
    norm
}

/// Mean loss over a batch and the mean gradient of every parameter, one
/// sample at a time in batch order.
pub fn batch_gradients<S: Scalar>(model: &ChangeRwkv<S>, batch: &[&ChangeSample<S>], lambda: f64) -> Result<(Vec<f64>, Vec<Tensor<S>>)> {
    let mut sums: Vec<Vec<S>> = model.store.iter().map(|(_, t)| vec![S::zero(); t.numel()]).collect();
    let mut losses = Vec::with_capacity(batch.len());
    for s in batch {
        let bound = Bound::trainable(&model.store);
        let loss = model
            .forward(&bound, &Var::constant(s.a.clone()), &Var::constant(s.b.clone()))
            .and_then(|pred| total_loss(&s.mask, &pred, lambda));
        let loss = match loss {
            Ok(l) => l,
            Err(e) if e.is_numeric() => {
                losses.push(f64::NAN);
                continue;
            }
            Err(e) => return Err(e),
        };
        let value = loss.value().item()?.as_f64();
        losses.push(value);
        if !value.is_finite() {
            continue;
        }
        let grads = loss.backward()?;
        for (acc, var) in sums.iter_mut().zip(bound.vars()) {
            if let Some(g) = grads.get(var) {
                for (a, &x) in acc.iter_mut().zip(g.data()) {
                    *a += x;
                }
            }
        }
    }
    let inv = S::of(1.0 / batch.len().max(1) as f64);
    let grads = model
        .store
        .iter()
        .zip(sums)
        .map(|((_, t), acc)| Tensor::from_vec(t.shape().to_vec(), acc.into_iter().map(|v| v * inv).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok((losses, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

/// Optimizer state bound to one model.
#[derive(Debug, Clone)]
pub struct Trainer<S: Scalar> {
    pub model: ChangeRwkv<S>,
    pub cfg: TrainConfig,
    pub schedule: Schedule,
    adam: Adam<S>,
    step: usize,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(model: ChangeRwkv<S>, cfg: TrainConfig, steps_per_epoch: usize) -> Result<Self> {
        cfg.validate()?;
        let params: Vec<&Tensor<S>> = model.store.iter().map(|(_, t)| t).collect();
        let adam = Adam::new(&params, cfg.weight_decay);
        let schedule = Schedule::new(&cfg, steps_per_epoch.max(1));
        Ok(Self { model, cfg, schedule, adam, step: 0 })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One optimizer step. A non-finite loss aborts with the batch's sample ids.
    pub fn step(&mut self, batch: &[&ChangeSample<S>], batch_id: usize) -> Result<StepStats> {
        let (losses, mut grads) = batch_gradients(&self.model, batch, self.cfg.lambda)?;
        if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
            let ids: Vec<String> = batch.iter().map(|s| s.id()).collect();
            return Err(Error::Diverged(format!(
                "loss {} at step {} on batch {batch_id} (sample {} of [{}])",
                losses[i],
                self.step,
                batch[i].id(),
                ids.join(", ")
            )));
        }
        let grad_norm = clip_global_norm(&mut grads, self.cfg.grad_clip);
        if !grad_norm.is_finite() {
            return Err(Error::Diverged(format!("gradient norm {grad_norm} at step {} on batch {batch_id}", self.step)));
        }
        let lr = self.schedule.lr(self.step);
        let params: Vec<&Tensor<S>> = self.model.store.iter().map(|(_, t)| t).collect();
        let updated = self.adam.step(&params, &grads, lr)?;
        let ids: Vec<_> = self.model.store.ids().collect();
        for (id, t) in ids.into_iter().zip(updated) {
            self.model.store.set(id, t)?;
        }
        self.step += 1;
        Ok(StepStats { loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64, grad_norm, lr })
    }
}

/// Micro-averaged metrics of `model` over `samples`, evaluated in parallel.
pub fn evaluate<S: Scalar>(model: &ChangeRwkv<S>, samples: &[ChangeSample<S>], threshold: f64) -> Result<(ConfusionCounts, Metrics)> {
    let counts: Vec<ConfusionCounts> = samples
        .par_iter()
        .map(|s| confusion(&s.mask, &model.predict(&s.a, &s.b)?, threshold))
        .collect::<Result<_>>()?;
    let total = counts.into_iter().fold(ConfusionCounts::default(), |a, c| a + c);
    Ok((total, metrics(&total)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val: Metrics,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport<S: Scalar> {
    pub epochs: Vec<EpochLog>,
    pub step_losses: Vec<f64>,
    /// Weights of the epoch with the best held-out IoU.
    pub best: ChangeRwkv<S>,
    pub best_epoch: usize,
    pub best_val: Metrics,
    pub last: ChangeRwkv<S>,
}

fn write_log(dir: &Path, epochs: &[EpochLog]) -> Result<()> {
    let mut s = String::from("epoch,steps,train_loss,lr,P,R,F1,IoU\n");
    for e in epochs {
        s.push_str(&format!(
            "{},{},{:.6},{:.3e},{:.4},{:.4},{:.4},{:.4}\n",
            e.epoch, e.steps, e.train_loss, e.lr, e.val.precision, e.val.recall, e.val.f1, e.val.iou
        ));
    }
    fs::write(dir.join(LOG_FILE), s)?;
    Ok(())
}

/// Trains `model` on `train`, scoring `val` after every epoch. When `out`
/// is given, the best checkpoint and the per-epoch log are written there.
pub fn train<S: Scalar>(
    model: ChangeRwkv<S>,
    cfg: &TrainConfig,
    train: &[ChangeSample<S>],
    val: &[ChangeSample<S>],
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport<S>> {
    if train.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let mut trainer = Trainer::new(model, cfg.clone(), steps_per_epoch)?;
    let total = trainer.schedule.total_steps;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    let mut step_losses = Vec::with_capacity(total);
    let mut best: Option<(f64, usize, Metrics, ChangeRwkv<S>)> = None;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }

    for epoch in 0..cfg.epochs {
        if trainer.steps_taken() >= total {
            break;
        }
        order.shuffle(&mut rng);
        let (mut loss_sum, mut n_steps, mut lr) = (0.0, 0, 0.0);
        for (batch_id, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if trainer.steps_taken() >= total {
                break;
            }
            let flipped: Vec<ChangeSample<S>>;
            let batch: Vec<&ChangeSample<S>> = if cfg.augment {
                flipped = chunk.iter().map(|&i| if rng.gen_bool(0.5) { train[i].flipped() } else { train[i].clone() }).collect();
                flipped.iter().collect()
            } else {
                chunk.iter().map(|&i| &train[i]).collect()
            };
            let stats = match trainer.step(&batch, epoch * steps_per_epoch + batch_id) {
                Ok(s) => s,
                Err(e @ Error::Diverged(_)) => {
                    if let Some(dir) = out {
                        let ids: Vec<String> = batch.iter().map(|s| s.id()).collect();
                        fs::write(dir.join(DIVERGED_FILE), format!("epoch={epoch}\nbatch={batch_id}\nsamples={}\nerror={e}\n", ids.join(",")))?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            step_losses.push(stats.loss);
            loss_sum += stats.loss;
            n_steps += 1;
            lr = stats.lr;
        }
        let val_metrics = if val.is_empty() { Metrics::default() } else { evaluate(&trainer.model, val, cfg.threshold)?.1 };
        let log = EpochLog { epoch, steps: trainer.steps_taken(), train_loss: loss_sum / n_steps.max(1) as f64, val: val_metrics, lr };
        on_epoch(&log);
        epochs.push(log);
        let improved = best.as_ref().map_or(true, |b| val_metrics.iou > b.0 || val.is_empty());
        if improved {
            if let Some(dir) = out {
                checkpoint::save(&trainer.model, dir)?;
            }
            best = Some((val_metrics.iou, epoch, val_metrics, trainer.model.clone()));
        }
        if let Some(dir) = out {
            write_log(dir, &epochs)?;
        }
    }
    let (_, best_epoch, best_val, best_model) = best.ok_or_else(|| Error::Invalid("no epoch ran".into()))?;
    Ok(TrainReport { epochs, step_losses, best: best_model, best_epoch, best_val, last: trainer.model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ModelConfig;
    use crate::pipeline::synth::synth_generate;

    #[test]
    fn warmup_starts_at_one_step_and_cosine_ends_near_zero() {
        let cfg = TrainConfig { lr: 1e-3, epochs: 10, warmup_epochs: 2, ..TrainConfig::desk() };
        let s = Schedule::new(&cfg, 50);
        assert_eq!(s.warmup_steps, 100);
        assert_eq!(s.lr(0), 1e-3 / 100.0);
        assert_eq!(s.lr(99), 1e-3);
        assert!((s.lr(100) - 1e-3).abs() < 1e-15);
        assert!(s.lr(499) < 1e-3 * 1e-4);
        assert!(s.lr(300) < s.lr(200));
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut g = vec![Tensor::<f64>::from_f64(vec![2], &[3.0, 0.0]).unwrap(), Tensor::from_f64(vec![1], &[4.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 0.5), 5.0);
        let n: f64 = g.iter().flat_map(|t| t.to_f64_vec()).map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 0.5).abs() < 1e-12);
        let mut small = vec![Tensor::<f64>::from_f64(vec![1], &[0.1]).unwrap()];
        clip_global_norm(&mut small, 0.5);
        assert_eq!(small[0].data()[0], 0.1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let p = Tensor::<f64>::from_f64(vec![2], &[1.0, -1.0]).unwrap();
        let g = Tensor::<f64>::from_f64(vec![2], &[0.3, -2.0]).unwrap();
        let mut adam = Adam::new(&[&p], 0.0);
        let out = adam.step(&[&p], &[g], 0.01).unwrap();
        let d = out[0].to_f64_vec();
        assert!((d[0] - 0.99).abs() < 1e-9 && (d[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn short_run_is_reproducible_and_learns() {
        let data = synth_generate::<f32>(8, 32, 32, 0, 3).unwrap();
        let cfg = TrainConfig { batch_size: 2, epochs: 3, warmup_epochs: 0, lr: 3e-3, ..TrainConfig::desk() };
        let run = || train(ChangeRwkv::<f32>::new(ModelConfig::nano(), 1).unwrap(), &cfg, &data[..6], &data[6..], None, |_| {}).unwrap();
        let (x, y) = (run(), run());
        assert!(x.last.store.bit_eq(&y.last.store));
        assert_eq!(x.step_losses, y.step_losses);
        assert_eq!(x.step_losses.len(), 9);
        assert!(x.step_losses[8] < x.step_losses[0]);
    }

    #[test]
    fn nan_loss_aborts_with_batch_id() {
        let mut data = synth_generate::<f64>(2, 16, 16, 0, 0).unwrap();
        data[1].a = data[1].a.map(|_| f64::NAN);
        let model = ChangeRwkv::<f64>::new(ModelConfig::probe(), 0).unwrap();
        let mut t = Trainer::new(model, TrainConfig::desk(), 1).unwrap();
        let batch: Vec<&ChangeSample<f64>> = data.iter().collect();
        let err = t.step(&batch, 17);
        match err {
            Err(Error::Diverged(msg)) => assert!(msg.contains("batch 17") && msg.contains(&data[1].id()), "{msg}"),
            Err(e) => panic!("unexpected {e}"),
            Ok(_) => panic!("expected divergence"),
        }
    }
}
