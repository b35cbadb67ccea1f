//! Image I/O, degradations, patch sampling and synthetic data.

pub mod degrade;
pub mod image;
pub mod manifest;
pub mod patches;
pub mod resize;
pub mod synth;

pub use degrade::{
    add_gaussian_noise, add_gaussian_noise_with, dct_quantize_degrade, degrade, Degradation, DegradationSpec,
};
pub use image::{decode_pnm, encode_pnm, load_image, save_image, ColorSpace, ImageBuffer, Pixels};
pub use manifest::{list_images, load_dataset, parse_manifest, read_manifest};
pub use patches::{crop_pair, modcrop, sample_patch_pair};
pub use resize::bicubic_resize;
pub use synth::{synthetic_dataset, synthetic_texture};
