//! Synthetic degradations: bicubic downscaling, additive Gaussian noise and
//! blockwise DCT quantization.

use std::fmt;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

use super::image::ImageBuffer;
use super::resize::bicubic_resize;

pub const BLOCK: usize = 8;

/// Luminance quantization table (quality 50) in row-major order.
pub const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Degradation {
    /// Downscale by an integer factor.
    Bicubic {
        scale: usize,
    },
    /// Additive noise on the 0–255 scale. With `clip`, the result is clipped
    /// and stored as 8-bit; otherwise it stays an unclipped float image.
    GaussianNoise {
        sigma: f64,
        clip: bool,
    },
    DctQuantize {
        quality: u32,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationSpec {
    pub kind: Degradation,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn bicubic(scale: usize) -> Self {
        Self {
            kind: Degradation::Bicubic { scale },
            seed: 0,
        }
    }

    pub fn noise(sigma: f64, seed: u64) -> Self {
        Self {
            kind: Degradation::GaussianNoise { sigma, clip: true },
            seed,
        }
    }

    pub fn dct(quality: u32) -> Self {
        Self {
            kind: Degradation::DctQuantize { quality },
            seed: 0,
        }
    }

    /// Spatial reduction factor between HQ and LQ.
    pub fn scale(&self) -> usize {
        match self.kind {
            Degradation::Bicubic { scale } => scale,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            Degradation::Bicubic { scale: 0 } => Err(Error::invalid("scale must be positive")),
            Degradation::GaussianNoise { sigma, .. } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::invalid(format!("sigma must be finite and >= 0, got {sigma}")))
            }
            Degradation::DctQuantize { quality } if !(1..=100).contains(&quality) => {
                Err(Error::invalid(format!("quality must be in [1, 100], got {quality}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for DegradationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            Degradation::Bicubic { scale } => write!(f, "kind=bicubic scale={scale}"),
            Degradation::GaussianNoise { sigma, clip } => {
                write!(f, "kind=gaussian_noise sigma={sigma} clip={clip} seed={}", self.seed)
            }
            Degradation::DctQuantize { quality } => write!(f, "kind=dct_quantize quality={quality}"),
        }
    }
}

pub fn degrade(img: &ImageBuffer, spec: &DegradationSpec) -> Result<ImageBuffer> {
    spec.validate()?;
    match spec.kind {
        Degradation::Bicubic { scale } => {
            let (h, w) = (img.height() / scale, img.width() / scale);
            if h == 0 || w == 0 {
                return Err(Error::invalid(format!(
                    "{}x{} image is smaller than the scale {scale}",
                    img.height(),
                    img.width()
                )));
            }
            bicubic_resize(img, h, w)
        }
        Degradation::GaussianNoise { sigma, clip } => add_gaussian_noise_with(img, sigma, spec.seed, clip),
        Degradation::DctQuantize { quality } => dct_quantize_degrade(img, quality),
    }
}

/// Noise clipped to `[0, 255]` and rounded to 8 bits.
pub fn add_gaussian_noise(img: &ImageBuffer, sigma: f64, seed: u64) -> Result<ImageBuffer> {
    add_gaussian_noise_with(img, sigma, seed, true)
}

pub fn add_gaussian_noise_with(img: &ImageBuffer, sigma: f64, seed: u64, clip: bool) -> Result<ImageBuffer> {
    DegradationSpec {
        kind: Degradation::GaussianNoise { sigma, clip },
        seed,
    }
    .validate()?;
    let mut rng = SeededRng::new(seed);
    let levels: Vec<f64> = img.levels().into_iter().map(|v| v + sigma * rng.gaussian()).collect();
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let out = if clip {
        ImageBuffer::from_levels(h, w, c, &levels)?
    } else {
        ImageBuffer::from_f32(h, w, c, levels.iter().map(|v| (v / 255.0) as f32).collect())?
    };
    Ok(out.with_color(img.color()))
}

/// Orthonormal 8-point DCT-II basis: `D[u][x]`.
fn dct_matrix() -> &'static [[f64; BLOCK]; BLOCK] {
    static M: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = [[0.0; BLOCK]; BLOCK];
        let n = BLOCK as f64;
        for (u, row) in m.iter_mut().enumerate() {
            let c = if u == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = c * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / (2.0 * n)).cos();
            }
        }
        m
    })
}

pub fn dct2(block: &[f64; 64]) -> [f64; 64] {
    let d = dct_matrix();
    let mut tmp = [0.0; 64];
    for u in 0..BLOCK {
        for x in 0..BLOCK {
            tmp[u * BLOCK + x] = (0..BLOCK).map(|y| d[u][y] * block[y * BLOCK + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            out[u * BLOCK + v] = (0..BLOCK).map(|x| tmp[u * BLOCK + x] * d[v][x]).sum();
        }
    }
    out
}

pub fn idct2(coef: &[f64; 64]) -> [f64; 64] {
    let d = dct_matrix();
    let mut tmp = [0.0; 64];
    for y in 0..BLOCK {
        for v in 0..BLOCK {
            tmp[y * BLOCK + v] = (0..BLOCK).map(|u| d[u][y] * coef[u * BLOCK + v]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            out[y * BLOCK + x] = (0..BLOCK).map(|v| tmp[y * BLOCK + v] * d[v][x]).sum();
        }
    }
    out
}

/// Quality-scaled luminance table, entries clamped to `[1, 255]`.
pub fn quant_table(quality: u32) -> Result<[f64; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(format!("quality must be in [1, 100], got {quality}")));
    }
    let scale = if quality < 50 {
        5000 / quality
    } else {
        200 - 2 * quality
    };
    let mut t = [0.0; 64];
    for (dst, &base) in t.iter_mut().zip(LUMA_TABLE.iter()) {
        *dst = ((base as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    Ok(t)
}

/// Quantized coefficient indices of one level-shifted block.
pub fn quantize_block(block: &[f64; 64], table: &[f64; 64]) -> [i32; 64] {
    let coef = dct2(&block.map(|v| v - 128.0));
    let mut q = [0i32; 64];
    for i in 0..64 {
        q[i] = (coef[i] / table[i]).round() as i32;
    }
    q
}

fn reconstruct_block(q: &[i32; 64], table: &[f64; 64]) -> [f64; 64] {
    let mut coef = [0.0; 64];
    for i in 0..64 {
        coef[i] = q[i] as f64 * table[i];
    }
    idct2(&coef).map(|v| v + 128.0)
}

/// Blockwise DCT quantization of every channel. Partial edge blocks are
/// filled by edge replication and cropped afterwards. Returns an 8-bit image.
pub fn dct_quantize_degrade(img: &ImageBuffer, quality: u32) -> Result<ImageBuffer> {
    let table = quant_table(quality)?;
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let src: Vec<f64> = img.as_u8().iter().map(|&v| v as f64).collect();
    let mut out = vec![0.0; h * w * c];
    for ch in 0..c {
        for by in (0..h).step_by(BLOCK) {
            for bx in (0..w).step_by(BLOCK) {
                let mut block = [0.0; 64];
                for y in 0..BLOCK {
                    for x in 0..BLOCK {
                        let (sy, sx) = ((by + y).min(h - 1), (bx + x).min(w - 1));
                        block[y * BLOCK + x] = src[(sy * w + sx) * c + ch];
                    }
                }
                let rec = reconstruct_block(&quantize_block(&block, &table), &table);
                for y in 0..BLOCK.min(h - by) {
                    for x in 0..BLOCK.min(w - bx) {
                        out[((by + y) * w + bx + x) * c + ch] = rec[y * BLOCK + x];
                    }
                }
            }
        }
    }
    Ok(ImageBuffer::from_levels(h, w, c, &out)?.with_color(img.color()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_u8(
            h,
            w,
            1,
            (0..h * w).map(|i| ((i * 7 + i / w * 13) % 256) as u8).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_sigma_is_identity() {
        let img = ramp(10, 12);
        assert_eq!(add_gaussian_noise(&img, 0.0, 1).unwrap(), img);
    }

    #[test]
    fn noise_statistics() {
        let img = ImageBuffer::from_u8(256, 256, 1, vec![128; 256 * 256]).unwrap();
        let noisy = add_gaussian_noise_with(&img, 25.0, 11, false).unwrap();
        let d: Vec<f64> = noisy.levels().iter().map(|v| v - 128.0).collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.5, "{mean}");
        assert!((sd - 25.0).abs() < 0.5, "{sd}");
    }

    #[test]
    fn noise_is_seeded() {
        let img = ramp(16, 16);
        let a = add_gaussian_noise(&img, 15.0, 5).unwrap();
        assert_eq!(a, add_gaussian_noise(&img, 15.0, 5).unwrap());
        assert_ne!(a, add_gaussian_noise(&img, 15.0, 6).unwrap());
        assert!(add_gaussian_noise(&img, -1.0, 5).is_err());
    }

    #[test]
    fn dct_roundtrip_and_dc() {
        let block: [f64; 64] = std::array::from_fn(|i| (i * 31 % 97) as f64);
        let back = idct2(&dct2(&block));
        for (a, b) in block.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let flat = dct2(&[5.0; 64]);
        assert!((flat[0] - 40.0).abs() < 1e-12);
        assert!(flat[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn table_scaling() {
        assert_eq!(quant_table(50).unwrap()[0], 16.0);
        assert!(quant_table(100).unwrap().iter().all(|&v| v == 1.0));
        assert_eq!(quant_table(10).unwrap()[0], 80.0);
        assert!(quant_table(1).unwrap().iter().all(|&v| v <= 255.0));
        assert!(quant_table(0).is_err());
        assert!(quant_table(101).is_err());
    }

    #[test]
    fn constant_block_survives() {
        for q in [50, 75, 90, 100] {
            for v in [0u8, 37, 128, 200, 255] {
                let img = ImageBuffer::from_u8(8, 8, 1, vec![v; 64]).unwrap();
                let out = dct_quantize_degrade(&img, q).unwrap();
                assert!(
                    out.as_u8().iter().all(|&o| (o as i32 - v as i32).abs() <= 1),
                    "q={q} v={v}"
                );
            }
        }
    }

    #[test]
    fn constant_block_error_bounded_by_dc_step() {
        // the DC step is table[0] / 8 levels, so rounding costs at most half of it
        for q in [1, 10, 20, 40] {
            let bound = quant_table(q).unwrap()[0] / 16.0 + 0.5;
            for v in [0u8, 37, 128, 200, 255] {
                let img = ImageBuffer::from_u8(8, 8, 1, vec![v; 64]).unwrap();
                let out = dct_quantize_degrade(&img, q).unwrap();
                let first = out.as_u8()[0];
                assert!(out.as_u8().iter().all(|&o| o == first));
                assert!((first as f64 - v as f64).abs() <= bound, "q={q} v={v} -> {first}");
            }
        }
    }

    #[test]
    fn quality_100_is_near_lossless() {
        let mut rng = SeededRng::new(3);
        let data: Vec<u8> = (0..16 * 24).map(|_| rng.below(256) as u8).collect();
        let img = ImageBuffer::from_u8(16, 24, 1, data).unwrap();
        let out = dct_quantize_degrade(&img, 100).unwrap();
        for (a, b) in img.as_u8().iter().zip(out.as_u8().iter()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    #[test]
    fn lower_quality_zeroes_more_coefficients() {
        let block: [f64; 64] = std::array::from_fn(|i| {
            let (y, x) = ((i / 8) as f64, (i % 8) as f64);
            120.0 + 40.0 * (x * 0.7).sin() + 25.0 * (y * 1.1 + x * 0.3).cos() + 9.0 * ((x * y) * 0.9).sin()
        });
        let zeros = |q| {
            quantize_block(&block, &quant_table(q).unwrap())[1..]
                .iter()
                .filter(|&&c| c == 0)
                .count()
        };
        assert!(zeros(10) > zeros(40), "{} vs {}", zeros(10), zeros(40));
    }

    #[test]
    fn requantization_is_stable() {
        let smooth = ImageBuffer::from_u8(
            32,
            32,
            1,
            (0..1024)
                .map(|i| {
                    let (y, x) = ((i / 32) as f64, (i % 32) as f64);
                    (128.0 + 50.0 * (x * 0.2).sin() + 30.0 * (y * 0.3).cos()) as u8
                })
                .collect(),
        )
        .unwrap();
        let mut images = vec![smooth];
        // textures squeezed into 64..191 so ringing never reaches the clip bounds
        for t in crate::data::synth::synthetic_dataset(4, 32, 32, 1, 2).unwrap() {
            let px = t.as_u8().iter().map(|&v| 64 + v / 2).collect();
            images.push(ImageBuffer::from_u8(32, 32, 1, px).unwrap());
        }
        for img in &images {
            for q in [10, 20, 30, 40, 90] {
                let once = dct_quantize_degrade(img, q).unwrap();
                let twice = dct_quantize_degrade(&once, q).unwrap();
                for (a, b) in once.as_u8().iter().zip(twice.as_u8().iter()) {
                    assert!((*a as i32 - *b as i32).abs() <= 1);
                }
            }
        }
    }

    #[test]
    fn bicubic_spec_shape() {
        let img = ramp(64, 64);
        let out = degrade(&img, &DegradationSpec::bicubic(2)).unwrap();
        assert_eq!((out.height(), out.width()), (32, 32));
        assert!(degrade(&img, &DegradationSpec::bicubic(0)).is_err());
    }
}
