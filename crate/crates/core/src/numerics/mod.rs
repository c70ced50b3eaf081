//! Dense tensors with reverse-mode differentiation.

pub mod autodiff;
pub mod broadcast;
pub mod conv;
pub mod ctn;
pub mod elementwise;
pub mod gradcheck;
pub mod linalg;
pub mod meter;
pub mod norm;
pub mod reduce;
pub mod scalar;
pub mod tensor;

pub use autodiff::{set_finite_checks, Backward, BackwardCtx, Gradients, Tape, Var};
pub use conv::ResampleMode;
pub use elementwise::{sigmoid, BinaryKind, UnaryKind};
pub use reduce::ReduceKind;
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
