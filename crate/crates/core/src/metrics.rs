//! Image quality metrics on 8-bit data.

use std::sync::OnceLock;

use crate::data::image::{ColorSpace, ImageBuffer};
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const PEAK: f64 = 255.0;

fn check_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if (a.height(), a.width(), a.channels()) != (b.height(), b.width(), b.channels()) {
        return Err(Error::shape(format!(
            "image sizes differ: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

/// Per-channel planes of the border-cropped region, quantized to 8 bits.
fn cropped_planes(img: &ImageBuffer, border: usize) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    if 2 * border >= h || 2 * border >= w {
        return Err(Error::invalid(format!(
            "border {border} leaves nothing of a {h}x{w} image"
        )));
    }
    let px = img.as_u8();
    let planes = (0..c)
        .map(|ch| {
            (border..h - border)
                .flat_map(|y| (border..w - border).map(move |x| (y, x)))
                .map(|(y, x)| px[(y * w + x) * c + ch] as f64)
                .collect()
        })
        .collect();
    Ok((h - 2 * border, w - 2 * border, planes))
}

/// PSNR in dB after cropping `border` pixels from every side. Identical
/// images give `f64::INFINITY`.
pub fn psnr(pred: &ImageBuffer, target: &ImageBuffer, border: usize) -> Result<f64> {
    check_dims(pred, target)?;
    let (_, _, a) = cropped_planes(pred, border)?;
    let (_, _, b) = cropped_planes(target, border)?;
    let mut se = 0.0;
    let mut n = 0usize;
    for (pa, pb) in a.iter().zip(&b) {
        se += pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        n += pa.len();
    }
    if se == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / (se / n as f64)).log10())
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> &'static [f64; SSIM_WINDOW] {
    static T: OnceLock<[f64; SSIM_WINDOW]> = OnceLock::new();
    T.get_or_init(|| {
        let r = (SSIM_WINDOW / 2) as f64;
        let mut t: [f64; SSIM_WINDOW] =
            std::array::from_fn(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        let s: f64 = t.iter().sum();
        t.iter_mut().for_each(|v| *v /= s);
        t
    })
}

/// Separable filtering with the SSIM window, keeping only positions where
/// the window fits.
fn filter_valid(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian_taps();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &x[y * w..(y + 1) * w];
        for ox in 0..ow {
            tmp[y * ow + ox] = k.iter().zip(&row[ox..ox + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let c1 = (K1 * PEAK).powi(2);
    let c2 = (K2 * PEAK).powi(2);
    let mu_a = filter_valid(a, h, w);
    let mu_b = filter_valid(b, h, w);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let e_aa = filter_valid(&prod(a, a), h, w);
    let e_bb = filter_valid(&prod(b, b), h, w);
    let e_ab = filter_valid(&prod(a, b), h, w);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Mean local SSIM (11×11 Gaussian window, σ = 1.5) over the cropped
/// region, averaged over channels.
pub fn ssim(pred: &ImageBuffer, target: &ImageBuffer, border: usize) -> Result<f64> {
    check_dims(pred, target)?;
    let (h, w, a) = cropped_planes(pred, border)?;
    let (_, _, b) = cropped_planes(target, border)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "{h}x{w} region is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let sum: f64 = a.iter().zip(&b).map(|(pa, pb)| ssim_plane(pa, pb, h, w)).sum();
    Ok(sum / a.len() as f64)
}

/// Luma on the 0–255 scale: `16 + 65.481 R + 128.553 G + 24.966 B` with
/// RGB in `[0, 1]`.
pub fn luma_levels(img: &ImageBuffer) -> Result<Vec<f64>> {
    if img.channels() != 3 {
        return Err(Error::invalid(format!("luma needs 3 channels, got {}", img.channels())));
    }
    Ok(img
        .unit()
        .chunks_exact(3)
        .map(|p| 16.0 + 65.481 * p[0] as f64 + 128.553 * p[1] as f64 + 24.966 * p[2] as f64)
        .collect())
}

/// Single-channel 8-bit luma image.
pub fn rgb_to_y(img: &ImageBuffer) -> Result<ImageBuffer> {
    let y = luma_levels(img)?;
    Ok(ImageBuffer::from_levels(img.height(), img.width(), 1, &y)?.with_color(ColorSpace::YCbCr))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub psnr: f64,
    pub ssim: f64,
}

/// PSNR and SSIM, on the luma channel when `y_only` and the images are RGB.
pub fn evaluate(pred: &ImageBuffer, target: &ImageBuffer, border: usize, y_only: bool) -> Result<Scores> {
    check_dims(pred, target)?;
    let (p, t) = if y_only && pred.channels() == 3 {
        (rgb_to_y(pred)?, rgb_to_y(target)?)
    } else {
        (pred.clone(), target.clone())
    };
    Ok(Scores {
        psnr: psnr(&p, &t, border)?,
        ssim: ssim(&p, &t, border)?,
    })
}
