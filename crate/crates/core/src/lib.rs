//! Linear-time RWKV change detection.
//!
//! Generic over the element type ([`Scalar`]: `f32` or `f64`); the aliases
//! below pin the common instantiations.

pub mod error;
pub mod blocks;
pub mod encoder;
pub mod numerics;
pub mod objective;
pub mod oracle;
pub mod params;
pub mod pipeline;
pub mod selftest;
pub mod stfm;
pub mod wkv;

pub use error::{Error, Result};
pub use numerics::{Scalar, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Var32 = Var<f32>;
pub type Var64 = Var<f64>;
