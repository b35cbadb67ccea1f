//! Window partitioning, cyclic shifts and shifted-window attention masks.
//!
//! Feature maps here are `[N, H, W, C]`. Windows are `M×M` tiles taken in
//! row-major tile order, each flattened row-major into `M²` tokens, giving
//! `[N·(H/M)·(W/M), M², C]`. The relative-position bias indexing in
//! [`crate::attention`] depends on that intra-window order.

use crate::error::{Error, Result};
use crate::graph::{reflect_index, roll_data, Graph, Var};
use crate::tensor::{inverse_axes, Scalar, Tensor};

/// Additive logit offset for token pairs from different pre-shift regions.
pub const MASK_VALUE: f64 = -100.0;

// [N, H/M, M, W/M, M, C] -> [N, H/M, W/M, M, M, C]
const PARTITION_AXES: [usize; 6] = [0, 1, 3, 2, 4, 5];

/// Geometry of one windowed pass over a padded feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowGrid {
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub shift: usize,
}

impl WindowGrid {
    pub fn new(height: usize, width: usize, window: usize, shift: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::invalid("window size must be positive"));
        }
        if height == 0 || width == 0 || !height.is_multiple_of(window) || !width.is_multiple_of(window) {
            return Err(Error::shape(format!(
                "{height}x{width} is not a multiple of window {window}"
            )));
        }
        if shift >= window {
            return Err(Error::invalid(format!("shift {shift} must be below window {window}")));
        }
        Ok(Self {
            height,
            width,
            window,
            shift,
        })
    }

    pub fn windows_per_col(&self) -> usize {
        self.height / self.window
    }

    pub fn windows_per_row(&self) -> usize {
        self.width / self.window
    }

    /// `HW/M²`.
    pub fn num_windows(&self) -> usize {
        self.windows_per_col() * self.windows_per_row()
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window * self.window
    }
}

/// Per-window `M²×M²` additive attention mask, stored as `[nW, M², M²]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnMask<T: Scalar = f32> {
    values: Tensor<T>,
}

impl<T: Scalar> AttnMask<T> {
    pub fn as_tensor(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.values
    }

    pub fn num_windows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn get(&self, window: usize, i: usize, j: usize) -> T {
        self.values.at(&[window, i, j])
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.data().iter().all(|v| v.is_zero())
    }
}

fn region_of(coord: usize, extent: usize, window: usize, shift: usize) -> usize {
    // bands [0, E-M), [E-M, E-s), [E-s, E)
    if coord < extent - window {
        0
    } else if coord < extent - shift {
        1
    } else {
        2
    }
}

/// Mask for a `height×width` map shifted by `shift`: pairs whose pre-shift
/// regions differ get [`MASK_VALUE`], all others 0.
pub fn build_attn_mask<T: Scalar>(height: usize, width: usize, window: usize, shift: usize) -> Result<AttnMask<T>> {
    let grid = WindowGrid::new(height, width, window, shift)?;
    let labels: Vec<usize> = (0..height)
        .flat_map(|y| {
            (0..width).map(move |x| region_of(y, height, window, shift) * 3 + region_of(x, width, window, shift))
        })
        .collect();
    let nw = grid.num_windows();
    let n = grid.tokens_per_window();
    let mut data = vec![T::zero(); nw * n * n];
    if shift > 0 {
        let masked = T::of(MASK_VALUE);
        for wy in 0..grid.windows_per_col() {
            for wx in 0..grid.windows_per_row() {
                let w = wy * grid.windows_per_row() + wx;
                let label = |t: usize| labels[(wy * window + t / window) * width + wx * window + t % window];
                for i in 0..n {
                    for j in 0..n {
                        if label(i) != label(j) {
                            data[(w * n + i) * n + j] = masked;
                        }
                    }
                }
            }
        }
    }
    Ok(AttnMask {
        values: Tensor::new(vec![nw, n, n], data)?,
    })
}

fn nhwc(x: &[usize]) -> Result<[usize; 4]> {
    match *x {
        [n, h, w, c] => Ok([n, h, w, c]),
        _ => Err(Error::shape(format!("expected [N,H,W,C], got {x:?}"))),
    }
}

/// Reflect-pads bottom and right so both extents are multiples of `window`.
/// Returns the padded map and the original `(height, width)`.
pub fn pad_to_multiple<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<(Tensor<T>, (usize, usize))> {
    if window == 0 {
        return Err(Error::invalid("window size must be positive"));
    }
    let [n, h, w, c] = nhwc(x.shape())?;
    let hp = h.div_ceil(window) * window;
    let wp = w.div_ceil(window) * window;
    if (hp, wp) == (h, w) {
        return Ok((x.clone(), (h, w)));
    }
    let src = x.data();
    let mut data = Vec::with_capacity(n * hp * wp * c);
    for b in 0..n {
        for y in 0..hp {
            let sy = reflect_index(y, h);
            for xx in 0..wp {
                let sx = reflect_index(xx, w);
                let off = ((b * h + sy) * w + sx) * c;
                data.extend_from_slice(&src[off..off + c]);
            }
        }
    }
    Ok((Tensor::new(vec![n, hp, wp, c], data)?, (h, w)))
}

/// Top-left `height×width` region of an `[N,H,W,C]` map.
pub fn crop<T: Scalar>(x: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    let [n, h, w, c] = nhwc(x.shape())?;
    if height == 0 || width == 0 || height > h || width > w {
        return Err(Error::shape(format!("cannot crop {h}x{w} to {height}x{width}")));
    }
    let src = x.data();
    let mut data = Vec::with_capacity(n * height * width * c);
    for b in 0..n {
        for y in 0..height {
            let off = ((b * h + y) * w) * c;
            data.extend_from_slice(&src[off..off + width * c]);
        }
    }
    Tensor::new(vec![n, height, width, c], data)
}

/// `[N,H,W,C] → [N·HW/M², M², C]`.
pub fn window_partition<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let [n, h, w, c] = nhwc(x.shape())?;
    let grid = WindowGrid::new(h, w, window, 0)?;
    x.reshape(vec![n, h / window, window, w / window, window, c])?
        .permute(&PARTITION_AXES)?
        .reshape(vec![n * grid.num_windows(), window * window, c])
}

/// Inverse of [`window_partition`].
pub fn window_reverse<T: Scalar>(wins: &Tensor<T>, window: usize, height: usize, width: usize) -> Result<Tensor<T>> {
    let (n, c) = reverse_dims(wins.shape(), window, height, width)?;
    wins.reshape(vec![n, height / window, width / window, window, window, c])?
        .permute(&inverse_axes(&PARTITION_AXES))?
        .reshape(vec![n, height, width, c])
}

fn reverse_dims(s: &[usize], window: usize, height: usize, width: usize) -> Result<(usize, usize)> {
    let grid = WindowGrid::new(height, width, window, 0)?;
    match *s {
        [b, t, c] if t == window * window && b % grid.num_windows() == 0 => Ok((b / grid.num_windows(), c)),
        _ => Err(Error::shape(format!(
            "{s:?} is not a window stack for {height}x{width} with window {window}"
        ))),
    }
}

/// Toroidal roll of both spatial axes by `(-shift, -shift)`.
pub fn cyclic_shift<T: Scalar>(x: &Tensor<T>, shift: usize) -> Result<Tensor<T>> {
    roll_hw(x, -(shift as isize))
}

/// Inverse of [`cyclic_shift`].
pub fn cyclic_unshift<T: Scalar>(x: &Tensor<T>, shift: usize) -> Result<Tensor<T>> {
    roll_hw(x, shift as isize)
}

fn roll_hw<T: Scalar>(x: &Tensor<T>, by: isize) -> Result<Tensor<T>> {
    let shape = nhwc(x.shape())?.to_vec();
    let once = roll_data(x.data(), &shape, 1, by);
    Tensor::new(shape.clone(), roll_data(&once, &shape, 2, by))
}

/// Graph counterparts of the functions above.
pub(crate) mod ops {
    use super::*;

    pub fn pad_to_multiple<T: Scalar>(g: &mut Graph<T>, x: Var, window: usize) -> Result<(Var, (usize, usize))> {
        let [_, h, w, _] = nhwc(g.shape(x))?;
        let x = g.reflect_pad(x, 1, h.div_ceil(window) * window - h)?;
        let x = g.reflect_pad(x, 2, w.div_ceil(window) * window - w)?;
        Ok((x, (h, w)))
    }

    pub fn crop<T: Scalar>(g: &mut Graph<T>, x: Var, height: usize, width: usize) -> Result<Var> {
        let [_, h, w, _] = nhwc(g.shape(x))?;
        let x = if h == height { x } else { g.slice(x, 1, 0, height)? };
        if w == width {
            Ok(x)
        } else {
            g.slice(x, 2, 0, width)
        }
    }

    pub fn window_partition<T: Scalar>(g: &mut Graph<T>, x: Var, window: usize) -> Result<Var> {
        let [n, h, w, c] = nhwc(g.shape(x))?;
        let grid = WindowGrid::new(h, w, window, 0)?;
        let x = g.reshape(x, &[n, h / window, window, w / window, window, c])?;
        let x = g.permute(x, &PARTITION_AXES)?;
        g.reshape(x, &[n * grid.num_windows(), window * window, c])
    }

    pub fn window_reverse<T: Scalar>(
        g: &mut Graph<T>,
        wins: Var,
        window: usize,
        height: usize,
        width: usize,
    ) -> Result<Var> {
        let (n, c) = reverse_dims(g.shape(wins), window, height, width)?;
        let x = g.reshape(wins, &[n, height / window, width / window, window, window, c])?;
        let x = g.permute(x, &inverse_axes(&PARTITION_AXES))?;
        g.reshape(x, &[n, height, width, c])
    }

    pub fn roll_hw<T: Scalar>(g: &mut Graph<T>, x: Var, by: isize) -> Result<Var> {
        let x = g.roll(x, 1, by)?;
        g.roll(x, 2, by)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image(h: usize, w: usize, c: usize) -> Tensor<f32> {
        Tensor::from_fn([1, h, w, c], |i| i as f32).unwrap()
    }

    #[test]
    fn pad_aligned_is_unchanged() {
        let x = image(8, 8, 1);
        let (p, orig) = pad_to_multiple(&x, 8).unwrap();
        assert_eq!(orig, (8, 8));
        assert_eq!(p, x);
    }

    #[test]
    fn pad_uses_ceiling_extents() {
        let (p, orig) = pad_to_multiple(&image(7, 9, 2), 4).unwrap();
        assert_eq!(p.shape(), &[1, 8, 12, 2]);
        assert_eq!(orig, (7, 9));
        // reflected row 7 mirrors row 5
        assert_eq!(p.at(&[0, 7, 0, 0]), p.at(&[0, 5, 0, 0]));
    }

    #[test]
    fn pad_then_crop_roundtrips() {
        let x = image(7, 9, 2);
        let (p, (h, w)) = pad_to_multiple(&x, 4).unwrap();
        assert_eq!(crop(&p, h, w).unwrap(), x);
    }

    #[test]
    fn partition_single_window_is_flatten() {
        let x = image(4, 4, 3);
        let wins = window_partition(&x, 4).unwrap();
        assert_eq!(wins.shape(), &[1, 16, 3]);
        assert_eq!(wins.data(), x.data());
    }

    #[test]
    fn partition_tile_order() {
        let x = Tensor::<f32>::from_fn([1, 4, 4, 1], |i| i as f32).unwrap();
        let wins = window_partition(&x, 2).unwrap();
        assert_eq!(wins.shape(), &[4, 4, 1]);
        assert_eq!(&wins.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&wins.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn partition_rejects_non_multiples() {
        assert!(window_partition(&image(6, 8, 1), 4).is_err());
        let wins = window_partition(&image(8, 8, 1), 4).unwrap();
        assert!(window_reverse(&wins, 4, 8, 12).is_err());
    }

    #[test]
    fn shift_by_hand() {
        // [[a,b],[c,d]] with s=1 -> [[d,c],[b,a]]
        let x = Tensor::<f32>::new([1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = cyclic_shift(&x, 1).unwrap();
        assert_eq!(s.data(), &[4.0, 3.0, 2.0, 1.0]);
        assert_eq!(cyclic_shift(&x, 0).unwrap(), x);
    }

    #[test]
    fn unshifted_mask_is_zero() {
        let m = build_attn_mask::<f32>(8, 8, 4, 0).unwrap();
        assert!(m.is_all_zero());
        assert_eq!(m.num_windows(), 4);
    }

    #[test]
    fn tiny_shifted_mask_keeps_only_diagonal() {
        let m = build_attn_mask::<f32>(2, 2, 2, 1).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 0.0 } else { -100.0 };
                assert_eq!(m.get(0, i, j), expected);
            }
        }
    }

    #[test]
    fn interior_window_unmasked() {
        let m = build_attn_mask::<f32>(8, 8, 4, 2).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                assert_eq!(m.get(0, i, j), 0.0);
            }
        }
        // the bottom-right window straddles all four regions
        assert!((0..16).any(|j| m.get(3, 0, j) != 0.0));
    }

    proptest! {
        #[test]
        fn partition_reverse_roundtrip(hm in 1usize..4, wm in 1usize..4, m in 1usize..5, c in 1usize..4, n in 1usize..3) {
            let (h, w) = (hm * m, wm * m);
            let x = Tensor::<f32>::from_fn([n, h, w, c], |i| (i as f32).sin()).unwrap();
            let wins = window_partition(&x, m).unwrap();
            prop_assert_eq!(wins.shape()[0], n * hm * wm);
            prop_assert_eq!(window_reverse(&wins, m, h, w).unwrap(), x);
        }

        #[test]
        fn shift_unshift_roundtrip(h in 1usize..9, w in 1usize..9, c in 1usize..3, s in 0usize..8) {
            let x = Tensor::<f32>::from_fn([1, h, w, c], |i| i as f32 * 0.25).unwrap();
            let s = s % h.min(w);
            prop_assert_eq!(cyclic_unshift(&cyclic_shift(&x, s).unwrap(), s).unwrap(), x);
        }

        #[test]
        fn mask_is_symmetric(hm in 1usize..4, wm in 1usize..4, m in 2usize..6) {
            let mask = build_attn_mask::<f32>(hm * m, wm * m, m, m / 2).unwrap();
            let n = m * m;
            for w in 0..mask.num_windows() {
                for i in 0..n {
                    for j in 0..n {
                        prop_assert_eq!(mask.get(w, i, j), mask.get(w, j, i));
                    }
                }
            }
        }

        #[test]
        fn graph_and_tensor_paths_agree(h in 1usize..10, w in 1usize..10, m in 1usize..5) {
            let x = Tensor::<f32>::from_fn([1, h, w, 2], |i| (i as f32).cos()).unwrap();
            let (pt, _) = pad_to_multiple(&x, m).unwrap();
            let mut g = Graph::<f32>::new();
            let xv = g.constant(x.clone());
            let (pv, (oh, ow)) = ops::pad_to_multiple(&mut g, xv, m).unwrap();
            prop_assert_eq!(g.value(pv), &pt);
            let wins = ops::window_partition(&mut g, pv, m).unwrap();
            prop_assert_eq!(g.value(wins), &window_partition(&pt, m).unwrap());
            let back = ops::window_reverse(&mut g, wins, m, pt.shape()[1], pt.shape()[2]).unwrap();
            let c = ops::crop(&mut g, back, oh, ow).unwrap();
            prop_assert_eq!(g.value(c), &x);
        }
    }
}
