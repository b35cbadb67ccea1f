//! Procedural training images: smooth backdrops (ramps, value noise, slow
//! gratings) overlaid with opaque hard-edged shapes.

use std::f64::consts::PI;

use crate::error::Result;
use crate::rng::SeededRng;

use super::image::ImageBuffer;

fn value_noise(rng: &mut SeededRng, h: usize, w: usize, cell: usize) -> Vec<f64> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.uniform()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64 / cell as f64, (i % w) as f64 / cell as f64);
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (ty, tx) = (smooth(y.fract()), smooth(x.fract()));
            let g = |a: usize, b: usize| grid[a * gw + b];
            let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
            let bot = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
            top * (1.0 - ty) + bot * ty
        })
        .collect()
}

fn grating(rng: &mut SeededRng, h: usize, w: usize, min_period: f64, max_period: f64) -> Vec<f64> {
    let theta = rng.uniform() * PI;
    let period = rng.uniform_range(min_period, max_period);
    let phase = rng.uniform() * 2.0 * PI;
    let (c, s) = (theta.cos(), theta.sin());
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            0.5 + 0.5 * ((x * c + y * s) * 2.0 * PI / period + phase).sin()
        })
        .collect()
}

fn checkerboard(rng: &mut SeededRng, h: usize, w: usize) -> Vec<f64> {
    let cell = 3 + rng.below(6);
    let (oy, ox) = (rng.below(cell), rng.below(cell));
    (0..h * w)
        .map(|i| {
            if ((i / w + oy) / cell + (i % w + ox) / cell).is_multiple_of(2) {
                0.0
            } else {
                1.0
            }
        })
        .collect()
}

/// Smooth backdrop: a ramp, value noise or a slow grating.
fn background(rng: &mut SeededRng, h: usize, w: usize) -> Vec<f64> {
    let (hf, wf) = (h as f64, w as f64);
    match rng.below(3) {
        0 => {
            let (a, b) = (rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0));
            let c0 = rng.uniform();
            (0..h * w)
                .map(|i| {
                    let (y, x) = ((i / w) as f64 / hf, (i % w) as f64 / wf);
                    (c0 + 0.5 * (a * x + b * y)).clamp(0.0, 1.0)
                })
                .collect()
        }
        1 => {
            let cell = 6 + rng.below(10);
            value_noise(rng, h, w, cell)
        }
        _ => grating(rng, h, w, 12.0, 32.0),
    }
}

/// Fill of a foreground object: flat, striped or checkered, with a random
/// intensity range.
fn fill(rng: &mut SeededRng, h: usize, w: usize) -> Vec<f64> {
    let (lo, hi) = (rng.uniform(), rng.uniform());
    let pattern = match rng.below(4) {
        0 | 1 => vec![1.0; h * w],
        2 => grating(rng, h, w, 5.0, 12.0),
        _ => checkerboard(rng, h, w),
    };
    pattern.into_iter().map(|v| lo + (hi - lo) * v).collect()
}

/// Inside test for a random disk, rotated rectangle or triangle.
fn shape(rng: &mut SeededRng, h: usize, w: usize) -> Box<dyn Fn(f64, f64) -> bool> {
    let (hf, wf) = (h as f64, w as f64);
    let cy = rng.uniform() * hf;
    let cx = rng.uniform() * wf;
    let r = rng.uniform_range(3.0, hf.min(wf) / 2.5);
    match rng.below(3) {
        0 => Box::new(move |y, x| (y - cy).powi(2) + (x - cx).powi(2) < r * r),
        1 => {
            let theta = rng.uniform() * PI;
            let aspect = rng.uniform_range(0.3, 1.0);
            let (c, s) = (theta.cos(), theta.sin());
            Box::new(move |y, x| {
                let (dy, dx) = (y - cy, x - cx);
                let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
                u.abs() < r && v.abs() < r * aspect
            })
        }
        _ => {
            let pts: Vec<(f64, f64)> = (0..3)
                .map(|_| {
                    let a = rng.uniform() * 2.0 * PI;
                    (cy + r * a.sin(), cx + r * a.cos())
                })
                .collect();
            Box::new(move |y, x| {
                let side = |(ay, ax): (f64, f64), (by, bx): (f64, f64)| (bx - ax) * (y - ay) - (by - ay) * (x - ax);
                let d = [side(pts[0], pts[1]), side(pts[1], pts[2]), side(pts[2], pts[0])];
                d.iter().all(|&v| v >= 0.0) || d.iter().all(|&v| v <= 0.0)
            })
        }
    }
}

/// One `[0, 1]` intensity plane: a backdrop with opaque objects on top.
fn plane(rng: &mut SeededRng, h: usize, w: usize) -> Vec<f64> {
    let mut img = background(rng, h, w);
    for _ in 0..2 + rng.below(5) {
        let inside = shape(rng, h, w);
        let content = fill(rng, h, w);
        for (i, (p, &c)) in img.iter_mut().zip(&content).enumerate() {
            if inside((i / w) as f64 + 0.5, (i % w) as f64 + 0.5) {
                *p = c;
            }
        }
    }
    img
}

/// Deterministic textured image with `channels ∈ {1, 3}`.
pub fn synthetic_texture(h: usize, w: usize, channels: usize, seed: u64) -> Result<ImageBuffer> {
    let mut rng = SeededRng::new(seed);
    let base = plane(&mut rng, h, w);
    let mut levels = vec![0.0; h * w * channels];
    for ch in 0..channels {
        // colour planes share the geometry and differ by gain and offset
        let (gain, offset) = if channels == 1 {
            (1.0, 0.0)
        } else {
            (rng.uniform_range(0.6, 1.0), rng.uniform_range(0.0, 0.4))
        };
        for p in 0..h * w {
            levels[p * channels + ch] = 255.0 * (offset + gain * base[p]).clamp(0.0, 1.0);
        }
    }
    ImageBuffer::from_levels(h, w, channels, &levels)
}

/// `count` textures with independent seeds derived from `seed`.
pub fn synthetic_dataset(count: usize, h: usize, w: usize, channels: usize, seed: u64) -> Result<Vec<ImageBuffer>> {
    (0..count as u64)
        .map(|i| synthetic_texture(h, w, channels, SeededRng::derived(seed, &[i]).next_u64()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_varied() {
        let a = synthetic_dataset(8, 24, 24, 3, 5).unwrap();
        let b = synthetic_dataset(8, 24, 24, 3, 5).unwrap();
        assert_eq!(a, b);
        for img in &a {
            let px = img.as_u8();
            let (lo, hi) = (px.iter().min().unwrap(), px.iter().max().unwrap());
            assert!(hi > lo);
        }
        assert_ne!(a[0], a[1]);
    }
}
