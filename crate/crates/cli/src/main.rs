use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use changerwkv::encoder::ModelConfig;
use changerwkv::numerics::ctn;
use changerwkv::objective::{confusion, metrics, ConfusionCounts, DEFAULT_THRESHOLD};
use changerwkv::pipeline::checkpoint;
use changerwkv::pipeline::config::{KeyValues, RunConfig};
use changerwkv::pipeline::io;
use changerwkv::pipeline::train::evaluate;
use changerwkv::pipeline::{bench_kernel, bench_model, predict_tiled, synth_generate, train, BenchLimits, BenchTarget, ChangeRwkv, TrainConfig};
use changerwkv::selftest;

const THREADS_VAR: &str = "CRWKV_THREADS";

#[derive(Parser)]
#[command(name = "changerwkv", version, about = "Bi-temporal change detection with linear-time RWKV blocks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic change-detection dataset (a/, b/, mask/ PNGs).
    Synth(SynthArgs),
    /// Train a model from a config file plus key=value overrides.
    Train(TrainArgs),
    /// Predict a change mask for one image pair.
    Infer(InferArgs),
    /// Score a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Count ops, wall time and peak memory over a size sweep.
    Bench(BenchArgs),
    /// Run the oracle and gradient suites.
    Selftest,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    difficulty: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Optional config file followed by key=value overrides.
    #[arg(value_name = "CONFIG | KEY=VALUE")]
    args: Vec<String>,
    /// Start from the published hyper-parameters instead of the desk-scale ones.
    #[arg(long)]
    paper_hparams: bool,
    /// Output directory (same as `out=`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 256)]
    tile: usize,
    /// Where to write the thresholded mask PNG.
    #[arg(long, default_value = "mask.png")]
    out: PathBuf,
    /// Also write raw probabilities as a .ctn tensor.
    #[arg(long)]
    probs: Option<PathBuf>,
    /// Write a TP/TN/FP/FN overlay; needs --truth.
    #[arg(long)]
    overlay: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct EvalArgs {
    dataset: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Tile size; whole images are predicted at once when absent.
    #[arg(long)]
    tile: Option<usize>,
    /// Dataset label for the CSV row (defaults to the directory name).
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    target: String,
    /// Comma-separated sequence lengths or image sides.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Channel count for kernel targets.
    #[arg(long, default_value_t = 64)]
    d: usize,
    /// Model variant for the full-model target.
    #[arg(long, default_value = "T")]
    variant: String,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    max_ops: Option<u64>,
    #[arg(long)]
    max_bytes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match configure_threads().and_then(|_| run(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for arithmetic failures, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    let numeric = e.chain().any(|c| c.downcast_ref::<changerwkv::Error>().is_some_and(|ce| ce.is_numeric()));
    if numeric {
        2
    } else {
        1
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).with_context(|| format!("{THREADS_VAR} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    Ok(())
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Selftest => selftest_cmd(),
    }
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    let samples = synth_generate::<f32>(a.n, a.size, a.size, a.difficulty, a.seed)?;
    io::write_dataset(&a.out, &samples)?;
    println!("wrote {} samples ({}x{}, difficulty {}) to {}", samples.len(), a.size, a.size, a.difficulty, a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn run_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut kv = KeyValues::default();
    for (i, arg) in a.args.iter().enumerate() {
        if arg.contains('=') {
            kv.set_pair(arg)?;
        } else if i == 0 {
            kv = KeyValues::load(Path::new(arg)).with_context(|| format!("reading config {arg}"))?;
        } else {
            bail!("expected key=value, got {arg:?}");
        }
    }
    if let Some(out) = &a.out {
        kv.set("out", out.display().to_string());
    }
    let base = if a.paper_hparams { TrainConfig::paper() } else { TrainConfig::desk() };
    Ok(RunConfig::from_kv(&kv, base)?)
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode> {
    let run = run_config(&a)?;
    let d = &run.data;
    let train_set = match &d.train_dir {
        Some(dir) => io::read_dataset::<f32>(dir).with_context(|| format!("reading {}", dir.display()))?,
        None => synth_generate(d.train_samples, d.size, d.size, d.difficulty, d.data_seed)?,
    };
    let val_set = match (&d.val_dir, &d.train_dir) {
        (Some(dir), _) => io::read_dataset::<f32>(dir).with_context(|| format!("reading {}", dir.display()))?,
        (None, Some(_)) => Vec::new(),
        (None, None) => synth_generate(d.val_samples, d.size, d.size, d.difficulty, d.data_seed.wrapping_add(1))?,
    };
    let model = ChangeRwkv::<f32>::new(run.model.clone(), run.train.seed)?;
    println!(
        "training {} ({} params) on {} samples, validating on {}, lr {:e}, batch {}, {} epochs",
        run.model.variant,
        model.store.scalars(),
        train_set.len(),
        val_set.len(),
        run.train.lr,
        run.train.batch_size,
        run.train.epochs
    );
    let report = train(model, &run.train, &train_set, &val_set, run.out.as_deref(), |e| {
        println!(
            "epoch {:>3}  step {:>6}  loss {:.5}  lr {:.2e}  IoU {:.4}  F1 {:.4}",
            e.epoch, e.steps, e.train_loss, e.lr, e.val.iou, e.val.f1
        );
    })?;
    println!("best epoch {} IoU {:.4} F1 {:.4}", report.best_epoch, report.best_val.iou, report.best_val.f1);
    if let Some(out) = &run.out {
        println!("checkpoint and log in {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn infer(a: InferArgs) -> Result<ExitCode> {
    if a.overlay.is_some() && a.truth.is_none() {
        bail!("--overlay needs --truth");
    }
    let model = checkpoint::load::<f32>(&a.ckpt).with_context(|| format!("loading checkpoint {}", a.ckpt.display()))?;
    let img_a = io::load_rgb::<f32>(&a.a).with_context(|| format!("reading {}", a.a.display()))?;
    let img_b = io::load_rgb::<f32>(&a.b).with_context(|| format!("reading {}", a.b.display()))?;
    let probs = predict_tiled(&model, &img_a, &img_b, a.tile)?;
    io::save_mask(&a.out, &probs, a.threshold)?;
    if let Some(p) = &a.probs {
        ctn::save(p, &probs)?;
    }
    if let (Some(path), Some(truth)) = (&a.overlay, &a.truth) {
        let t = io::load_mask::<f32>(truth).with_context(|| format!("reading {}", truth.display()))?;
        io::overlay(&probs, &t, a.threshold)?.save(path).with_context(|| format!("writing {}", path.display()))?;
        let m = metrics(&confusion(&t, &probs, a.threshold)?);
        println!("P {:.4} R {:.4} F1 {:.4} IoU {:.4}", m.precision, m.recall, m.f1, m.iou);
    }
    println!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let model = checkpoint::load::<f32>(&a.ckpt).with_context(|| format!("loading checkpoint {}", a.ckpt.display()))?;
    let samples = io::read_dataset::<f32>(&a.dataset).with_context(|| format!("reading {}", a.dataset.display()))?;
    if samples.is_empty() {
        bail!("no samples in {}", a.dataset.display());
    }
    let m = match a.tile {
        None => evaluate(&model, &samples, a.threshold)?.1,
        Some(tile) => {
            let mut total = ConfusionCounts::default();
            for s in &samples {
                total = total + confusion(&s.mask, &predict_tiled(&model, &s.a, &s.b, tile)?, a.threshold)?;
            }
            metrics(&total)
        }
    };
    let name = a.name.unwrap_or_else(|| a.dataset.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    let csv = format!(
        "dataset,variant,threshold,P,R,F1,IoU\n{},{},{},{:.4},{:.4},{:.4},{:.4}\n",
        name,
        model.cfg.variant,
        a.threshold,
        100.0 * m.precision,
        100.0 * m.recall,
        100.0 * m.f1,
        100.0 * m.iou
    );
    match &a.csv {
        Some(p) => fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn bench(a: BenchArgs) -> Result<ExitCode> {
    let target = BenchTarget::parse(&a.target)?;
    let sizes = a.sizes.clone().unwrap_or_else(|| target.default_sizes());
    let defaults = BenchLimits::default();
    let limits = BenchLimits { max_ops: a.max_ops.unwrap_or(defaults.max_ops), max_bytes: a.max_bytes.unwrap_or(defaults.max_bytes) };
    // timings are taken on a single worker
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    let report = pool.install(|| {
        if target.is_kernel() {
            bench_kernel::<f32>(target, &sizes, a.d, a.repeats, limits, a.seed)
        } else {
            bench_model::<f32>(&ModelConfig::by_name(&a.variant)?, &sizes, a.repeats, limits, a.seed)
        }
    })?;
    let csv = report.to_csv();
    match &a.csv {
        Some(p) => {
            fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?;
            println!("wrote {} rows to {}", report.records.len(), p.display());
        }
        None => print!("{csv}"),
    }
    if let Some(why) = &report.truncated {
        eprintln!("sweep truncated: {why}");
    }
    Ok(ExitCode::SUCCESS)
}

fn selftest_cmd() -> Result<ExitCode> {
    let checks = selftest::run_all()?;
    let mut failed = 0;
    for c in &checks {
        println!("{} {:<48} {:.3e} (limit {:.1e})", if c.passed() { "PASS" } else { "FAIL" }, c.name, c.value, c.limit);
        failed += usize::from(!c.passed());
    }
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train_args(args: &[&str], paper: bool) -> TrainArgs {
        TrainArgs { args: args.iter().map(|s| s.to_string()).collect(), paper_hparams: paper, out: None }
    }

    #[test]
    fn overrides_apply_on_top_of_the_chosen_base() {
        let run = run_config(&train_args(&["epochs=3"], true)).unwrap();
        assert_eq!(run.train.lr, TrainConfig::paper().lr);
        assert_eq!(run.train.epochs, 3);
        let run = run_config(&train_args(&["lr=0.01"], false)).unwrap();
        assert_eq!(run.train.lr, 0.01);
        assert_eq!(run.train.epochs, TrainConfig::desk().epochs);
    }

    #[test]
    fn a_second_bare_argument_is_rejected() {
        assert!(run_config(&train_args(&["lr=0.1", "extra"], false)).is_err());
    }

    #[test]
    fn numeric_errors_map_to_two() {
        let numeric = anyhow::Error::new(changerwkv::Error::Diverged("x".into())).context("training");
        assert_eq!(exit_code(&numeric), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("bad flag")), 1);
    }
}
