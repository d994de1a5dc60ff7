//! Factor-2 max-pooling and linear (bilinear/trilinear) upsampling.
//!
//! Both work on `[C, D, H, W]` volumes; a 2D map is `D = 1` and is never
//! resampled along depth.

use crate::tensor::Scalar;

/// Non-overlapping 2× max-pooling along the axes flagged in `axes` (`[d, h, w]`).
/// Returns the pooled values and, per output, the flat input index of the
/// winner. Ties go to the first element in row-major window order.
pub fn maxpool_forward<T: Scalar>(x: &[T], c: usize, spatial: [usize; 3], axes: [bool; 3]) -> (Vec<T>, Vec<u32>) {
    let f = axes.map(|a| if a { 2 } else { 1 });
    let [d, h, w] = spatial;
    let (od, oh, ow) = (d / f[0], h / f[1], w / f[2]);
    let n = c * od * oh * ow;
    let mut out = Vec::with_capacity(n);
    let mut arg = Vec::with_capacity(n);
    for ch in 0..c {
        for z in 0..od {
            for y in 0..oh {
                if f == [1, 2, 2] {
                    let r0 = ((ch * d + z) * h + 2 * y) * w;
                    let (a, b) = (&x[r0..r0 + w], &x[r0 + w..r0 + 2 * w]);
                    for (xo, (pa, pb)) in a.chunks_exact(2).zip(b.chunks_exact(2)).enumerate() {
                        let i = r0 + 2 * xo;
                        let (mut best, mut best_i) = (pa[0], i);
                        if pa[1] > best {
                            (best, best_i) = (pa[1], i + 1);
                        }
                        if pb[0] > best {
                            (best, best_i) = (pb[0], i + w);
                        }
                        if pb[1] > best {
                            (best, best_i) = (pb[1], i + w + 1);
                        }
                        out.push(best);
                        arg.push(best_i as u32);
                    }
                    continue;
                }
                for xo in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0usize;
                    for dz in 0..f[0] {
                        for dy in 0..f[1] {
                            let row = ((ch * d + z * f[0] + dz) * h + y * f[1] + dy) * w;
                            for dx in 0..f[2] {
                                let i = row + xo * f[2] + dx;
                                if x[i] > best {
                                    best = x[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i as u32);
                }
            }
        }
    }
    (out, arg)
}

/// Routes each output gradient to its recorded winner.
pub fn maxpool_backward<T: Scalar>(dy: &[T], argmax: &[u32], dx: &mut [T]) {
    dx.fill(T::zero());
    for (&g, &i) in dy.iter().zip(argmax) {
        dx[i as usize] = dx[i as usize] + g;
    }
}

/// Source taps for one upsampled coordinate, align-corners=false:
/// `src = (dst + 0.5) / 2 - 0.5`, clamped below at 0, upper tap clamped to
/// the last index.
#[inline]
pub fn taps(dst: usize, n: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) * 0.5 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, src - i0 as f64)
}

fn tap_table<T: Scalar>(n: usize) -> Vec<(usize, usize, T, T)> {
    (0..2 * n)
        .map(|o| {
            let (i0, i1, l) = taps(o, n);
            (i0, i1, T::of(1.0 - l), T::of(l))
        })
        .collect()
}

/// Linear 2× upsampling of `[outer, n, inner]` along the middle axis into `out`.
fn upsample_axis<T: Scalar>(x: &[T], outer: usize, n: usize, inner: usize, out: &mut [T]) {
    let tap = tap_table::<T>(n);
    for o in 0..outer {
        let src = &x[o * n * inner..(o + 1) * n * inner];
        let dst = &mut out[o * 2 * n * inner..(o + 1) * 2 * n * inner];
        if inner == 1 {
            // Interior pairs blend neighbours 3:1; the ends clamp.
            let (q, t) = (T::of(0.25), T::of(0.75));
            dst[0] = src[0];
            dst[2 * n - 1] = src[n - 1];
            for (pair, win) in dst[1..2 * n - 1].chunks_exact_mut(2).zip(src.windows(2)) {
                pair[0] = t * win[0] + q * win[1];
                pair[1] = q * win[0] + t * win[1];
            }
        } else {
            for (row, &(i0, i1, w0, w1)) in dst.chunks_mut(inner).zip(&tap) {
                let a = &src[i0 * inner..(i0 + 1) * inner];
                let b = &src[i1 * inner..(i1 + 1) * inner];
                for ((v, &p), &q) in row.iter_mut().zip(a).zip(b) {
                    *v = w0 * p + w1 * q;
                }
            }
        }
    }
}

/// Transpose of [`upsample_axis`], overwriting `dx`.
fn upsample_axis_backward<T: Scalar>(dy: &[T], outer: usize, n: usize, inner: usize, dx: &mut [T]) {
    dx.fill(T::zero());
    let tap = tap_table::<T>(n);
    for o in 0..outer {
        let g = &dy[o * 2 * n * inner..(o + 1) * 2 * n * inner];
        let acc = &mut dx[o * n * inner..(o + 1) * n * inner];
        if inner == 1 {
            let (q, t) = (T::of(0.25), T::of(0.75));
            acc[0] = g[0];
            for (j, pair) in g[1..2 * n - 1].chunks_exact(2).enumerate() {
                acc[j] = acc[j] + t * pair[0] + q * pair[1];
                acc[j + 1] = q * pair[0] + t * pair[1];
            }
            acc[n - 1] = acc[n - 1] + g[2 * n - 1];
        } else {
            for (row, &(i0, i1, w0, w1)) in g.chunks(inner).zip(&tap) {
                for (a, &gv) in acc[i0 * inner..(i0 + 1) * inner].iter_mut().zip(row) {
                    *a = *a + w0 * gv;
                }
                for (a, &gv) in acc[i1 * inner..(i1 + 1) * inner].iter_mut().zip(row) {
                    *a = *a + w1 * gv;
                }
            }
        }
    }
}

/// 2× linear upsampling along the flagged axes, innermost axis first.
pub fn upsample_forward<T: Scalar>(x: &[T], c: usize, spatial: [usize; 3], axes: [bool; 3]) -> Vec<T> {
    let [d, h, w] = spatial;
    if axes == [false, true, true] {
        // Planar: both passes per plane, so the intermediate stays in cache.
        let mut out = vec![T::zero(); c * d * 4 * h * w];
        let mut wide = vec![T::zero(); 2 * h * w];
        for (src, dst) in x.chunks_exact(h * w).zip(out.chunks_exact_mut(4 * h * w)) {
            upsample_axis(src, h, w, 1, &mut wide);
            upsample_axis(&wide, 1, h, 2 * w, dst);
        }
        return out;
    }
    let mut cur = x.to_vec();
    let mut dims = spatial;
    for axis in (0..3).rev() {
        if !axes[axis] {
            continue;
        }
        let outer = c * dims[..axis].iter().product::<usize>();
        let inner: usize = dims[axis + 1..].iter().product();
        let mut next = vec![T::zero(); 2 * cur.len()];
        upsample_axis(&cur, outer, dims[axis], inner, &mut next);
        cur = next;
        dims[axis] *= 2;
    }
    cur
}

pub fn upsample_backward<T: Scalar>(dy: &[T], c: usize, spatial: [usize; 3], axes: [bool; 3]) -> Vec<T> {
    let [d, h, w] = spatial;
    if axes == [false, true, true] {
        let mut dx = vec![T::zero(); c * d * h * w];
        let mut tall = vec![T::zero(); 2 * h * w];
        for (g, acc) in dy.chunks_exact(4 * h * w).zip(dx.chunks_exact_mut(h * w)) {
            upsample_axis_backward(g, 1, h, 2 * w, &mut tall);
            upsample_axis_backward(&tall, h, w, 1, acc);
        }
        return dx;
    }
    let mut dims = spatial;
    for axis in 0..3 {
        if axes[axis] {
            dims[axis] *= 2;
        }
    }
    let mut cur = dy.to_vec();
    for axis in 0..3 {
        if !axes[axis] {
            continue;
        }
        dims[axis] /= 2;
        let outer = c * dims[..axis].iter().product::<usize>();
        let inner: usize = dims[axis + 1..].iter().product();
        let mut next = vec![T::zero(); cur.len() / 2];
        upsample_axis_backward(&cur, outer, dims[axis], inner, &mut next);
        cur = next;
    }
    cur
}
