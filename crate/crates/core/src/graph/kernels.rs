//! Forward and backward kernels on flat row-major buffers.

use rayon::prelude::*;

use crate::tensor::Scalar;

// below this many multiply-adds a kernel stays on the calling thread
const PAR_THRESHOLD: usize = 1 << 15;

/// Neumaier-compensated sum accumulated in f64.
pub(crate) fn compensated_sum<T: Scalar>(xs: &[T]) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in xs {
        let v = x.to_f64c();
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Row/column element strides of a matrix view.
pub(crate) type Strides = [usize; 2];

pub(crate) fn row_major(cols: usize) -> Strides {
    [cols, 1]
}

/// Strides reading a row-major `cols×rows` buffer as its `rows×cols` transpose.
pub(crate) fn transposed(rows: usize) -> Strides {
    [1, rows]
}

fn extent(rows: usize, cols: usize, [rs, cs]: Strides) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// `c (m×n, row-major) += a (m×k) · b (k×n)` with strided operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: Strides,
    b: &[T],
    sb: Strides,
    c: &mut [T],
) {
    assert!(a.len() >= extent(m, k, sa), "gemm: lhs too short");
    assert!(b.len() >= extent(k, n, sb), "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let is = |[r, c]: Strides| [r as isize, c as isize];
    // SAFETY: the asserts above bound every addressed element.
    unsafe {
        T::gemm_acc(
            m,
            k,
            n,
            a.as_ptr(),
            is(sa),
            b.as_ptr(),
            is(sb),
            c.as_mut_ptr(),
            [n as isize, 1],
        );
    }
}

/// `out (m×n) += a (m×k) · b (k×n)`, all row-major.
pub(crate) fn gemm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    gemm_strided(m, k, n, a, row_major(k), b, row_major(n), out);
}

/// Batched product over `batch` independent `m×k · k×n` problems. When
/// `transpose_b` is set, each `b` block is stored as `n×k`.
pub(crate) fn bmm<T: Scalar>(
    a: &[T],
    b: &[T],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    transpose_b: bool,
) -> Vec<T> {
    let mut out = vec![T::zero(); batch * m * n];
    let sb = if transpose_b { transposed(k) } else { row_major(n) };
    for (bi, o) in out.chunks_mut((m * n).max(1)).enumerate().take(batch) {
        let a_blk = &a[bi * m * k..(bi + 1) * m * k];
        let b_blk = &b[bi * k * n..(bi + 1) * k * n];
        gemm_strided(m, k, n, a_blk, row_major(k), b_blk, sb, o);
    }
    out
}

/// Gradients of `C = A·B` (or `A·Bᵀ`) with respect to both operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bmm_backward<T: Scalar>(
    a: &[T],
    b: &[T],
    dc: &[T],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    transpose_b: bool,
) -> (Vec<T>, Vec<T>) {
    let mut da = vec![T::zero(); batch * m * k];
    let mut db = vec![T::zero(); batch * k * n];
    for bi in 0..batch {
        let a_blk = &a[bi * m * k..(bi + 1) * m * k];
        let b_blk = &b[bi * k * n..(bi + 1) * k * n];
        let dc_blk = &dc[bi * m * n..(bi + 1) * m * n];
        let da_blk = &mut da[bi * m * k..(bi + 1) * m * k];
        if transpose_b {
            // B stored n×k: dA = dC·B, dB = dCᵀ·A
            gemm_strided(m, n, k, dc_blk, row_major(n), b_blk, row_major(k), da_blk);
            let db_blk = &mut db[bi * k * n..(bi + 1) * k * n];
            gemm_strided(n, m, k, dc_blk, transposed(n), a_blk, row_major(k), db_blk);
        } else {
            gemm_strided(m, n, k, dc_blk, row_major(n), b_blk, transposed(n), da_blk);
            let db_blk = &mut db[bi * k * n..(bi + 1) * k * n];
            gemm_strided(k, m, n, a_blk, transposed(k), dc_blk, row_major(n), db_blk);
        }
    }
    (da, db)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvDims {
    /// Output column range `[lo, hi)` whose input column `ox + kx - pad` is in bounds.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.wo);
        (lo, hi.max(lo))
    }

    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy + ky).checked_sub(self.pad)?;
        (iy < self.h).then_some(iy)
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn plane_out(&self) -> usize {
        self.ho * self.wo
    }

    /// Visits every in-bounds run as (column offset, input offset, length).
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (plane_in, plane_out, kk) = (self.h * self.w, self.plane_out(), self.k * self.k);
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = ci * kk + ky * self.k + kx;
                    let (lo, hi) = self.col_range(kx);
                    if lo >= hi {
                        continue;
                    }
                    let ix_lo = lo + kx - self.pad;
                    for oy in 0..self.ho {
                        let Some(iy) = self.in_row(oy, ky) else { continue };
                        f(
                            row * plane_out + oy * self.wo + lo,
                            ci * plane_in + iy * self.w + ix_lo,
                            hi - lo,
                        );
                    }
                }
            }
        }
    }
}

/// Unfolds one image `[cin, h, w]` into `[cin·k·k, ho·wo]`.
fn im2col<T: Scalar>(x: &[T], d: &ConvDims) -> Vec<T> {
    let mut col = vec![T::zero(); d.patch_len() * d.plane_out()];
    d.for_each_run(|co, xo, len| col[co..co + len].copy_from_slice(&x[xo..xo + len]));
    col
}

fn col2im_acc<T: Scalar>(col: &[T], d: &ConvDims, dx: &mut [T]) {
    d.for_each_run(|co, xo, len| {
        for (o, &v) in dx[xo..xo + len].iter_mut().zip(&col[co..co + len]) {
            *o += v;
        }
    });
}

pub(crate) fn conv2d_forward<T: Scalar>(input: &[T], weight: &[T], bias: Option<&[T]>, d: ConvDims) -> Vec<T> {
    let (plane, pl, plane_in) = (d.plane_out(), d.patch_len(), d.cin * d.h * d.w);
    let mut out = vec![T::zero(); d.n * d.cout * plane];
    let run = |(ni, o): (usize, &mut [T])| {
        if let Some(b) = bias {
            for (row, &bv) in o.chunks_mut(plane).zip(b) {
                row.iter_mut().for_each(|v| *v = bv);
            }
        }
        let col = im2col(&input[ni * plane_in..][..plane_in], &d);
        gemm_strided(d.cout, pl, plane, weight, row_major(pl), &col, row_major(plane), o);
    };
    let chunk = (d.cout * plane).max(1);
    if d.n > 1 && d.n * d.cout * plane * pl >= PAR_THRESHOLD {
        out.par_chunks_mut(chunk).enumerate().for_each(run);
    } else {
        out.chunks_mut(chunk).enumerate().for_each(run);
    }
    out
}

/// Returns `(d_input, d_weight, d_bias)`.
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &[T],
    weight: &[T],
    dout: &[T],
    d: ConvDims,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (plane, pl, plane_in) = (d.plane_out(), d.patch_len(), d.cin * d.h * d.w);
    let per_image = |ni: usize, dxi: &mut [T]| -> Vec<T> {
        let g = &dout[ni * d.cout * plane..][..d.cout * plane];
        let col = im2col(&input[ni * plane_in..][..plane_in], &d);
        let mut dw = vec![T::zero(); d.cout * pl];
        gemm_strided(d.cout, plane, pl, g, row_major(plane), &col, transposed(plane), &mut dw);
        let mut dcol = vec![T::zero(); pl * plane];
        gemm_strided(
            pl,
            d.cout,
            plane,
            weight,
            transposed(pl),
            g,
            row_major(plane),
            &mut dcol,
        );
        col2im_acc(&dcol, &d, dxi);
        dw
    };
    let mut dx = vec![T::zero(); d.n * plane_in];
    let chunk = plane_in.max(1);
    let partials: Vec<Vec<T>> = if d.n > 1 && d.n * d.cout * plane * pl >= PAR_THRESHOLD {
        dx.par_chunks_mut(chunk)
            .enumerate()
            .map(|(ni, dxi)| per_image(ni, dxi))
            .collect()
    } else {
        dx.chunks_mut(chunk)
            .enumerate()
            .map(|(ni, dxi)| per_image(ni, dxi))
            .collect()
    };
    let mut dw = vec![T::zero(); d.cout * pl];
    for p in &partials {
        dw.iter_mut().zip(p).for_each(|(a, &v)| *a += v);
    }
    let mut db = vec![T::zero(); d.cout];
    for ni in 0..d.n {
        for (co, b) in db.iter_mut().enumerate() {
            let g = &dout[(ni * d.cout + co) * plane..][..plane];
            *b += g.iter().copied().sum::<T>();
        }
    }
    (dx, dw, db)
}

/// Per-row mean and reciprocal standard deviation (population variance).
pub(crate) fn layer_norm_forward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    c: usize,
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / c;
    let mut y = vec![T::zero(); x.len()];
    let mut mean = vec![T::zero(); rows];
    let mut rstd = vec![T::zero(); rows];
    let cf = T::from_usize(c).unwrap();
    type Row<'a, T> = ((&'a [T], &'a mut [T]), (&'a mut T, &'a mut T));
    let run = |((xr, yr), (m, r)): Row<T>| {
        let mu = xr.iter().copied().sum::<T>() / cf;
        let var = xr.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / cf;
        let rs = T::one() / (var + eps).sqrt();
        for ((yv, &xv), (&g, &b)) in yr.iter_mut().zip(xr).zip(gamma.iter().zip(beta)) {
            *yv = (xv - mu) * rs * g + b;
        }
        *m = mu;
        *r = rs;
    };
    if x.len() >= PAR_THRESHOLD {
        x.par_chunks(c)
            .zip(y.par_chunks_mut(c))
            .zip(mean.par_iter_mut().zip(rstd.par_iter_mut()))
            .for_each(run);
    } else {
        x.chunks(c)
            .zip(y.chunks_mut(c))
            .zip(mean.iter_mut().zip(rstd.iter_mut()))
            .for_each(run);
    }
    (y, mean, rstd)
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    mean: &[T],
    rstd: &[T],
    dy: &[T],
    c: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let cf = T::from_usize(c).unwrap();
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (row, ((xr, dyr), dxr)) in x.chunks(c).zip(dy.chunks(c)).zip(dx.chunks_mut(c)).enumerate() {
        let (mu, rs) = (mean[row], rstd[row]);
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for j in 0..c {
            let xhat = (xr[j] - mu) * rs;
            let dxhat = dyr[j] * gamma[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dgamma[j] += dyr[j] * xhat;
            dbeta[j] += dyr[j];
        }
        let m1 = sum_dxhat / cf;
        let m2 = sum_dxhat_xhat / cf;
        for j in 0..c {
            let xhat = (xr[j] - mu) * rs;
            dxr[j] = rs * (dyr[j] * gamma[j] - m1 - xhat * m2);
        }
    }
    (dx, dgamma, dbeta)
}

pub(crate) fn softmax_rows<T: Scalar>(x: &[T], d: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for (xr, yr) in x.chunks(d).zip(y.chunks_mut(d)) {
        let max = xr.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (yv, &xv) in yr.iter_mut().zip(xr) {
            *yv = (xv - max).exp();
            total += *yv;
        }
        for yv in yr.iter_mut() {
            *yv /= total;
        }
    }
    y
}

pub(crate) fn softmax_rows_backward<T: Scalar>(y: &[T], dy: &[T], d: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for ((yr, dyr), dxr) in y.chunks(d).zip(dy.chunks(d)).zip(dx.chunks_mut(d)) {
        let dot: T = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
        for ((o, &yv), &g) in dxr.iter_mut().zip(yr).zip(dyr) {
            *o = yv * (g - dot);
        }
    }
    dx
}

/// `x·Φ(x)` with the exact error function.
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    x * half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

/// Index into an axis of length `n` after reflecting across its ends
/// (edge sample not repeated).
pub(crate) fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m >= n {
        period - m
    } else {
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; a.len()];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = a[r * cols + c];
            }
        }
        out
    }

    fn naive_conv(x: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
        let mut out = vec![0.0; d.n * d.cout * d.ho * d.wo];
        for ni in 0..d.n {
            for co in 0..d.cout {
                for oy in 0..d.ho {
                    for ox in 0..d.wo {
                        let mut acc = 0.0;
                        for ci in 0..d.cin {
                            for ky in 0..d.k {
                                for kx in 0..d.k {
                                    let iy = (oy + ky) as isize - d.pad as isize;
                                    let ix = (ox + kx) as isize - d.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= d.h as isize || ix >= d.w as isize {
                                        continue;
                                    }
                                    let xv = x[((ni * d.cin + ci) * d.h + iy as usize) * d.w + ix as usize];
                                    acc += xv * w[((co * d.cin + ci) * d.k + ky) * d.k + kx];
                                }
                            }
                        }
                        out[((ni * d.cout + co) * d.ho + oy) * d.wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let d = ConvDims {
            n: 2,
            cin: 3,
            cout: 4,
            h: 5,
            w: 7,
            k: 3,
            pad: 1,
            ho: 5,
            wo: 7,
        };
        let x: Vec<f64> = (0..d.n * d.cin * d.h * d.w).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..d.cout * d.cin * 9).map(|i| (i as f64 * 0.11).cos()).collect();
        let fast = conv2d_forward(&x, &w, None, d);
        for (a, b) in fast.iter().zip(naive_conv(&x, &w, d)) {
            assert!((a - b).abs() < 1e-12);
        }
        // adjoint identity: <conv(x), g> = <x, dx> and = <w, dw>
        let g: Vec<f64> = (0..fast.len()).map(|i| (i as f64 * 0.23).cos()).collect();
        let (dx, dw, _) = conv2d_backward(&x, &w, &g, d);
        let lhs: f64 = fast.iter().zip(&g).map(|(a, b)| a * b).sum();
        let via_x: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        let via_w: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-9 && (lhs - via_w).abs() < 1e-9);
    }

    #[test]
    fn gemm_small() {
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut out = [0.0; 4];
        gemm(&a, &b, 2, 2, 2, &mut out);
        assert_eq!(out, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn bmm_transposed_matches_plain() {
        let a: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect();
        // b viewed as 2 batches of 3x2 (k×n); transposed copy is n×k
        let bt: Vec<f64> = b.chunks(6).flat_map(|blk| transpose(blk, 3, 2)).collect();
        let plain = bmm(&a, &b, 2, 2, 3, 2, false);
        let trans = bmm(&a, &bt, 2, 2, 3, 2, true);
        for (x, y) in plain.iter().zip(&trans) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn reflect_indices() {
        // axis of 3: 0 1 2 | 1 0 1 2
        let got: Vec<usize> = (0..7).map(|i| reflect_index(i, 3)).collect();
        assert_eq!(got, vec![0, 1, 2, 1, 0, 1, 2]);
        assert_eq!(reflect_index(5, 1), 0);
    }
}
