//! Separable bicubic resampling.
//!
//! Keys kernel with `a = -0.5`. When shrinking, the kernel is stretched by
//! the inverse scale so it also acts as a low-pass filter. Output sample `x`
//! maps to input coordinate `(x + 0.5) / scale - 0.5`; out-of-range taps
//! replicate the edge sample.

use crate::error::{Error, Result};

use super::image::ImageBuffer;

const KEYS_A: f64 = -0.5;

pub fn cubic(x: f64) -> f64 {
    let a = KEYS_A;
    let t = x.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Per-output-sample source indices and normalized weights along one axis.
#[derive(Clone, Debug)]
pub struct Contributions {
    pub taps: usize,
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Contributions {
    pub fn new(in_len: usize, out_len: usize) -> Self {
        let scale = out_len as f64 / in_len as f64;
        let shrink = scale.min(1.0);
        let width = 4.0 / shrink;
        let taps = width.ceil() as usize + 2;
        let mut indices = Vec::with_capacity(out_len * taps);
        let mut weights = Vec::with_capacity(out_len * taps);
        for x in 0..out_len {
            let u = (x as f64 + 0.5) / scale - 0.5;
            let left = (u - width / 2.0).floor() as i64;
            let start = weights.len();
            for k in 0..taps as i64 {
                let idx = left + k;
                weights.push(shrink * cubic(shrink * (u - idx as f64)));
                indices.push(idx.clamp(0, in_len as i64 - 1) as usize);
            }
            let sum: f64 = weights[start..].iter().sum();
            for w in &mut weights[start..] {
                *w /= sum;
            }
        }
        Self { taps, indices, weights }
    }

    fn row(&self, x: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = x * self.taps..(x + 1) * self.taps;
        self.indices[r.clone()]
            .iter()
            .copied()
            .zip(self.weights[r].iter().copied())
    }
}

/// Resamples levels stored as interleaved `H×W×C`.
pub fn resize_levels(src: &[f64], h: usize, w: usize, c: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; out_h * w * c];
    if out_h == h {
        tmp.copy_from_slice(src);
    } else {
        let cy = Contributions::new(h, out_h);
        for y in 0..out_h {
            let dst = &mut tmp[y * w * c..(y + 1) * w * c];
            for (iy, wt) in cy.row(y) {
                let line = &src[iy * w * c..(iy + 1) * w * c];
                for (d, s) in dst.iter_mut().zip(line) {
                    *d += wt * s;
                }
            }
        }
    }
    if out_w == w {
        return tmp;
    }
    let cx = Contributions::new(w, out_w);
    let mut out = vec![0.0; out_h * out_w * c];
    for y in 0..out_h {
        for x in 0..out_w {
            let o = (y * out_w + x) * c;
            for (ix, wt) in cx.row(x) {
                let s = (y * w + ix) * c;
                for ch in 0..c {
                    out[o + ch] += wt * tmp[s + ch];
                }
            }
        }
    }
    out
}

/// Output keeps the input's representation; 8-bit images are rounded.
pub fn bicubic_resize(img: &ImageBuffer, out_h: usize, out_w: usize) -> Result<ImageBuffer> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!("target size {out_h}x{out_w} must be positive")));
    }
    let levels = resize_levels(&img.levels(), img.height(), img.width(), img.channels(), out_h, out_w);
    img.with_levels(out_h, out_w, &levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_kernel_values() {
        let taps = [cubic(-1.5), cubic(-0.5), cubic(0.5), cubic(1.5)];
        assert_eq!(taps, [-0.0625, 0.5625, 0.5625, -0.0625]);
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
    }

    #[test]
    fn halving_weights_match_reference_filter() {
        // antialiased 2x reduction taps of the widely used reference resizer
        let c = Contributions::new(32, 16);
        let mid: Vec<f64> = c.weights[5 * c.taps..6 * c.taps].to_vec();
        let expect = [
            -0.01171875,
            -0.03515625,
            0.11328125,
            0.43359375,
            0.43359375,
            0.11328125,
            -0.03515625,
            -0.01171875,
        ];
        let nz: Vec<f64> = mid.into_iter().filter(|w| *w != 0.0).collect();
        assert_eq!(nz.len(), 8);
        for (a, b) in nz.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn identity_size_is_exact() {
        let img = ImageBuffer::from_u8(5, 7, 3, (0..105).map(|v| (v * 37 % 256) as u8).collect()).unwrap();
        assert_eq!(bicubic_resize(&img, 5, 7).unwrap(), img);
    }

    #[test]
    fn constant_stays_constant() {
        let img = ImageBuffer::from_u8(9, 6, 1, vec![77; 54]).unwrap();
        for (h, w) in [(3, 2), (18, 12), (27, 5), (1, 1)] {
            let out = bicubic_resize(&img, h, w).unwrap();
            assert!(out.as_u8().iter().all(|&v| v == 77));
        }
    }

    #[test]
    fn smooth_image_survives_down_up() {
        let (h, w) = (64, 64);
        let levels: Vec<f64> = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                128.0
                    + 60.0
                        * (2.0 * std::f64::consts::PI * x / 64.0).sin()
                        * (2.0 * std::f64::consts::PI * y / 64.0).cos()
            })
            .collect();
        let img = ImageBuffer::from_f32(h, w, 1, levels.iter().map(|v| (v / 255.0) as f32).collect()).unwrap();
        let down = bicubic_resize(&img, 32, 32).unwrap();
        let up = bicubic_resize(&down, 64, 64).unwrap();
        let (a, b) = (img.levels(), up.levels());
        // interior only: edge replication bends the periodic signal at the border
        for y in 4..h - 4 {
            for x in 4..w - 4 {
                let i = y * w + x;
                assert!((a[i] - b[i]).abs() <= 2.0, "({y},{x}) {} vs {}", a[i], b[i]);
            }
        }
    }

    #[test]
    fn zero_target_rejected() {
        let img = ImageBuffer::from_u8(2, 2, 1, vec![0; 4]).unwrap();
        assert!(bicubic_resize(&img, 0, 2).is_err());
    }
}
