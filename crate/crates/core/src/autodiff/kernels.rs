//! Dense kernels behind the graph operators. All layouts are planar `[c][y][x]`.

use super::Scalar;

/// Unfolds `x` (`c × h × w`) into a `(c·k·k) × (h·w)` column matrix, clamping
/// reads at the border (replicate padding).
pub(crate) fn im2col_replicate<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let p = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![T::zero(); c * k * k * hw];
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let dst = &mut cols[row..row + hw];
                for y in 0..h {
                    let sy = clamp(y as isize + ky as isize - p, h);
                    let src = &plane[sy * w..(sy + 1) * w];
                    let out = &mut dst[y * w..(y + 1) * w];
                    let shift = kx as isize - p;
                    // interior run is a straight copy
                    let lo = (-shift).max(0) as usize;
                    let hi = (w as isize - shift.max(0)) as usize;
                    if lo < hi {
                        let s0 = (lo as isize + shift) as usize;
                        out[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                    for xx in (0..lo).chain(hi..w) {
                        out[xx] = src[clamp(xx as isize + shift, w)];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col_replicate`]: scatters column gradients back onto `dx`.
pub(crate) fn col2im_replicate_add<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    dx: &mut [T],
) {
    let p = (k / 2) as isize;
    let hw = h * w;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let src = &cols[row..row + hw];
                let shift = kx as isize - p;
                let lo = (-shift).max(0) as usize;
                let hi = (w as isize - shift.max(0)) as usize;
                for y in 0..h {
                    let sy = clamp(y as isize + ky as isize - p, h);
                    let g = &src[y * w..(y + 1) * w];
                    let dst = &mut plane[sy * w..(sy + 1) * w];
                    if lo < hi {
                        let s0 = (lo as isize + shift) as usize;
                        for (d, &v) in dst[s0..s0 + (hi - lo)].iter_mut().zip(&g[lo..hi]) {
                            *d += v;
                        }
                    }
                    for xx in (0..lo).chain(hi..w) {
                        dst[clamp(xx as isize + shift, w)] += g[xx];
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

/// Stride-1 same-size convolution with replicate padding.
/// Weight layout `[cout][cin][k][k]`. Returns the output and the column matrix.
pub(crate) fn conv_forward<T: Scalar>(x: &[T], weight: &[T], bias: &[T], g: &ConvGeom) -> (Vec<T>, Vec<T>) {
    let hw = g.h * g.w;
    let kk = g.cin * g.k * g.k;
    let cols = im2col_replicate(x, g.cin, g.h, g.w, g.k);
    let mut out = vec![T::zero(); g.cout * hw];
    for (o, row) in out.chunks_exact_mut(hw).enumerate() {
        row.fill(bias[o]);
    }
    T::gemm(g.cout, kk, hw, weight, kk, 1, &cols, hw, 1, &mut out, hw, 1, T::one());
    (out, cols)
}

/// Returns `(dx, dweight, dbias)`; `dx` is empty unless `need_dx`.
pub(crate) fn conv_backward<T: Scalar>(
    gout: &[T],
    cols: &[T],
    weight: &[T],
    g: &ConvGeom,
    need_dx: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hw = g.h * g.w;
    let kk = g.cin * g.k * g.k;
    let mut dw = vec![T::zero(); g.cout * kk];
    T::gemm(g.cout, hw, kk, gout, hw, 1, cols, 1, hw, &mut dw, kk, 1, T::zero());
    let db = gout.chunks_exact(hw).map(|r| r.iter().copied().sum()).collect();
    if !need_dx {
        return (Vec::new(), dw, db);
    }
    let mut dcols = vec![T::zero(); kk * hw];
    T::gemm(kk, g.cout, hw, weight, 1, kk, gout, hw, 1, &mut dcols, hw, 1, T::zero());
    let mut dx = vec![T::zero(); g.cin * hw];
    col2im_replicate_add(&dcols, g.cin, g.h, g.w, g.k, &mut dx);
    (dx, dw, db)
}

/// 3×3 transposed convolution, stride 2, padding 1, output padding 1: output is
/// `2h × 2w`. Weight layout `[cin][cout][3][3]`; input pixel `(y, x)` lands on
/// output `(2y - 1 + ky, 2x - 1 + kx)`.
pub(crate) fn conv_t_forward<T: Scalar>(x: &[T], weight: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let hw = g.h * g.w;
    let (oh, ow) = (2 * g.h, 2 * g.w);
    let co9 = g.cout * 9;
    // z[(o, ky, kx)][(y, x)] = sum_i w[i][o][ky][kx] * x[i][y][x]
    let mut z = vec![T::zero(); co9 * hw];
    T::gemm(co9, g.cin, hw, weight, 1, co9, x, hw, 1, &mut z, hw, 1, T::zero());
    let mut out = vec![T::zero(); g.cout * oh * ow];
    for o in 0..g.cout {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.fill(bias[o]);
        for ky in 0..3 {
            for kx in 0..3 {
                let zr = &z[(o * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..g.h {
                    let oy = 2 * y + ky;
                    if oy < 1 || oy > oh {
                        continue;
                    }
                    let orow = &mut plane[(oy - 1) * ow..oy * ow];
                    for xx in 0..g.w {
                        let ox = 2 * xx + kx;
                        if ox >= 1 && ox <= ow {
                            orow[ox - 1] += zr[y * g.w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_t_backward<T: Scalar>(
    gout: &[T],
    x: &[T],
    weight: &[T],
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hw = g.h * g.w;
    let (oh, ow) = (2 * g.h, 2 * g.w);
    let co9 = g.cout * 9;
    let mut dz = vec![T::zero(); co9 * hw];
    for o in 0..g.cout {
        let plane = &gout[o * oh * ow..(o + 1) * oh * ow];
        for ky in 0..3 {
            for kx in 0..3 {
                let zr = &mut dz[(o * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..g.h {
                    let oy = 2 * y + ky;
                    if oy < 1 || oy > oh {
                        continue;
                    }
                    let orow = &plane[(oy - 1) * ow..oy * ow];
                    for xx in 0..g.w {
                        let ox = 2 * xx + kx;
                        if ox >= 1 && ox <= ow {
                            zr[y * g.w + xx] = orow[ox - 1];
                        }
                    }
                }
            }
        }
    }
    let mut dx = vec![T::zero(); g.cin * hw];
    T::gemm(g.cin, co9, hw, weight, co9, 1, &dz, hw, 1, &mut dx, hw, 1, T::zero());
    let mut dw = vec![T::zero(); g.cin * co9];
    T::gemm(g.cin, hw, co9, x, hw, 1, &dz, 1, hw, &mut dw, co9, 1, T::zero());
    let db = gout
        .chunks_exact(oh * ow)
        .map(|r| r.iter().copied().sum())
        .collect();
    (dx, dw, db)
}

/// 2×2 max pooling; ties go to the first cell in row-major scan order.
pub(crate) fn max_pool2<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let base = ci * h * w;
                let cands = [
                    base + 2 * y * w + 2 * xx,
                    base + 2 * y * w + 2 * xx + 1,
                    base + (2 * y + 1) * w + 2 * xx,
                    base + (2 * y + 1) * w + 2 * xx + 1,
                ];
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub(crate) fn avg_pool2<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let p = &x[ci * h * w..];
        for y in 0..oh {
            for xx in 0..ow {
                let s = p[2 * y * w + 2 * xx]
                    + p[2 * y * w + 2 * xx + 1]
                    + p[(2 * y + 1) * w + 2 * xx]
                    + p[(2 * y + 1) * w + 2 * xx + 1];
                out.push(s * quarter);
            }
        }
    }
    out
}
