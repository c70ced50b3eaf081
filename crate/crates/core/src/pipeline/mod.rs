//! Model assembly, data, training, checkpoints, inference and benchmarks.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod infer;
pub mod io;
pub mod model;
pub mod synth;
pub mod train;

pub use bench::{bench_kernel, bench_model, BenchLimits, BenchRecord, BenchReport, BenchTarget};
pub use decoder::DecoderIds;
pub use infer::predict_tiled;
pub use model::ChangeRwkv;
pub use synth::{synth_generate, ChangeSample};
pub use train::{train, TrainConfig, Trainer};
