//! The restoration network.

pub mod checkpoint;
pub mod complexity;
pub mod config;
pub mod network;

pub use complexity::{count_mult_adds, mult_adds_breakdown, param_count, MultAdds};
pub use config::{SwinIRConfig, Task, Upsampler};
pub use network::{
    deep_extract, forward, init_params, reconstruct_residual, reconstruct_sr, rstb_forward, shallow_extract, SwinIR,
};
