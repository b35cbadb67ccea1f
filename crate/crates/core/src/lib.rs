//! SwinIR image restoration: a windowed-attention restoration network built
//! on a small reverse-mode tensor engine, with degradation synthesis,
//! losses, metrics and a toy-scale trainer.

pub mod attention;
pub mod cli;
pub mod data;
pub mod error;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod windowing;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use params::{ModelParams, ParamVars};
pub use tensor::{Scalar, Tensor};
