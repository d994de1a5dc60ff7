//! Same-padded, stride-1 convolution over `[C, D, H, W]` volumes.
//!
//! 2D maps are handled as `D = 1` with a kernel depth of 1. Kernel extents
//! are odd and padding is `k / 2` per axis, so output extents equal input
//! extents. All three passes lower to [`gemm`]:
//!
//! - forward: `Y[Cout, P] = W[Cout, K] · patches(X)[K, P]`
//! - input gradient: a forward pass over `dY` with the kernel transposed in
//!   channels and flipped spatially
//! - weight gradient: `dW[Cout, K] = dY[Cout, P] · patches(X)ᵀ[P, K]`
//!
//! Patches are gathered straight into packed GEMM panels.

use super::gemm::{gemm, PackB, Strided, NR};
use crate::tensor::Scalar;

/// Spatial geometry shared by the three passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub cin: usize,
    pub cout: usize,
    /// `[D, H, W]`
    pub spatial: [usize; 3],
    /// `[kd, kh, kw]`, each odd.
    pub kernel: [usize; 3],
}

impl Geometry {
    pub fn voxels(&self) -> usize {
        self.spatial.iter().product()
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Rows of the patch matrix.
    pub fn patch_len(&self) -> usize {
        self.cin * self.taps()
    }

    fn pads(&self) -> [usize; 3] {
        [self.kernel[0] / 2, self.kernel[1] / 2, self.kernel[2] / 2]
    }
}

/// Patch matrix `[cin·taps, voxels]` of an input volume.
struct Patches<'a, T> {
    x: &'a [T],
    g: Geometry,
}

impl<T: Scalar> Patches<'_, T> {
    #[inline]
    fn decode_row(&self, k: usize) -> (usize, [usize; 3]) {
        let [kd, kh, kw] = self.g.kernel;
        let dx = k % kw;
        let dy = (k / kw) % kh;
        let dz = (k / (kw * kh)) % kd;
        let ci = k / (kw * kh * kd);
        (ci, [dz, dy, dx])
    }
}

/// A horizontal stretch of output voxels sharing one image row.
#[derive(Clone, Copy, Default)]
struct Run {
    /// Offset inside the panel row.
    j: usize,
    z: usize,
    y: usize,
    x0: usize,
    len: usize,
}

impl<T: Scalar> PackB<T> for Patches<'_, T> {
    fn pack(&self, k0: usize, kc: usize, n0: usize, nc: usize, out: &mut [T]) {
        let [d, h, w] = self.g.spatial;
        let [kd, kh, kw] = self.g.kernel;
        let pads = self.g.pads();
        let hw = h * w;
        let mut runs = [Run::default(); NR];
        for (jp, panel) in out.chunks_mut(kc * NR).take(nc.div_ceil(NR)).enumerate() {
            let pstart = n0 + jp * NR;
            let pend = (pstart + NR).min(n0 + nc);
            let mut nruns = 0;
            let mut p = pstart;
            while p < pend {
                let (z, y, x0) = (p / hw, (p % hw) / w, p % w);
                let len = (w - x0).min(pend - p);
                runs[nruns] = Run {
                    j: p - pstart,
                    z,
                    y,
                    x0,
                    len,
                };
                nruns += 1;
                p += len;
            }
            let used = pend - pstart;
            let (mut ci, [mut dz, mut dy, mut dx]) = self.decode_row(k0);
            for row in panel.chunks_exact_mut(NR).take(kc) {
                let shift = dx as isize - pads[2] as isize;
                for r in &runs[..nruns] {
                    let dst = &mut row[r.j..r.j + r.len];
                    let sz = (r.z + dz) as isize - pads[0] as isize;
                    let sy = (r.y + dy) as isize - pads[1] as isize;
                    if sz < 0 || sz >= d as isize || sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let base = (ci * d + sz as usize) * hw + sy as usize * w;
                    let start = r.x0 as isize + shift;
                    let lo = (-start).clamp(0, r.len as isize) as usize;
                    let hi = (w as isize - start).clamp(0, r.len as isize) as usize;
                    dst[..lo].fill(T::zero());
                    if hi > lo {
                        let s0 = (start + lo as isize) as usize;
                        dst[lo..hi].copy_from_slice(&self.x[base + s0..base + s0 + (hi - lo)]);
                    }
                    dst[hi.max(lo)..].fill(T::zero());
                }
                row[used..].fill(T::zero());
                dx += 1;
                if dx == kw {
                    dx = 0;
                    dy += 1;
                    if dy == kh {
                        dy = 0;
                        dz += 1;
                        if dz == kd {
                            dz = 0;
                            ci += 1;
                        }
                    }
                }
            }
        }
    }
}

/// Transposed patch matrix `[voxels, cin·taps]`, the operand of the weight gradient.
struct PatchesT<'a, T> {
    x: &'a [T],
    g: Geometry,
}

impl<T: Scalar> PackB<T> for PatchesT<'_, T> {
    fn pack(&self, k0: usize, kc: usize, n0: usize, nc: usize, out: &mut [T]) {
        let [d, h, w] = self.g.spatial;
        let pads = self.g.pads();
        let hw = h * w;
        let vol = d * hw;
        let patches = Patches { x: self.x, g: self.g };
        let mut offs = [(0usize, [0isize; 3], 0isize); NR];
        for (jp, panel) in out.chunks_mut(kc * NR).take(nc.div_ceil(NR)).enumerate() {
            let c0 = n0 + jp * NR;
            let width = NR.min(n0 + nc - c0);
            for (j, o) in offs[..width].iter_mut().enumerate() {
                let (ci, t) = patches.decode_row(c0 + j);
                let s = [
                    t[0] as isize - pads[0] as isize,
                    t[1] as isize - pads[1] as isize,
                    t[2] as isize - pads[2] as isize,
                ];
                let flat = (ci * vol) as isize + s[0] * hw as isize + s[1] * w as isize + s[2];
                *o = (ci, s, flat);
            }
            let (mut z, mut y, mut x) = {
                let p = k0;
                (p / hw, (p % hw) / w, p % w)
            };
            for kk in 0..kc {
                let p = k0 + kk;
                let row = &mut panel[kk * NR..(kk + 1) * NR];
                let interior = z >= pads[0]
                    && z + pads[0] < d
                    && y >= pads[1]
                    && y + pads[1] < h
                    && x >= pads[2]
                    && x + pads[2] < w;
                if interior {
                    for (v, o) in row[..width].iter_mut().zip(&offs[..width]) {
                        *v = self.x[(p as isize + o.2) as usize];
                    }
                } else {
                    for (v, o) in row[..width].iter_mut().zip(&offs[..width]) {
                        let sz = z as isize + o.1[0];
                        let sy = y as isize + o.1[1];
                        let sx = x as isize + o.1[2];
                        let inside =
                            sz >= 0 && sz < d as isize && sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize;
                        *v = if inside {
                            self.x[(p as isize + o.2) as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
                row[width..].fill(T::zero());
                x += 1;
                if x == w {
                    x = 0;
                    y += 1;
                    if y == h {
                        y = 0;
                        z += 1;
                    }
                }
            }
        }
    }
}

/// `y[cout, voxels] = conv(x[cin, voxels], w[cout, cin, kd, kh, kw]) + b`.
pub fn forward<T: Scalar>(g: Geometry, x: &[T], w: &[T], bias: Option<&[T]>, y: &mut [T]) {
    let p = g.voxels();
    debug_assert_eq!(x.len(), g.cin * p);
    debug_assert_eq!(w.len(), g.cout * g.patch_len());
    debug_assert_eq!(y.len(), g.cout * p);
    let accumulate = match bias {
        Some(b) => {
            for (row, &bv) in y.chunks_mut(p).zip(b) {
                row.fill(bv);
            }
            true
        }
        None => false,
    };
    gemm(
        g.cout,
        p,
        g.patch_len(),
        Strided::row_major(w, g.patch_len()),
        &Patches { x, g },
        y,
        p,
        accumulate,
    );
}

/// Kernel with input/output channels swapped and all spatial taps reversed.
pub fn flipped_kernel<T: Scalar>(g: Geometry, w: &[T]) -> Vec<T> {
    let taps = g.taps();
    let mut out = vec![T::zero(); w.len()];
    for co in 0..g.cout {
        for ci in 0..g.cin {
            let src = &w[(co * g.cin + ci) * taps..][..taps];
            let dst = &mut out[(ci * g.cout + co) * taps..][..taps];
            for (t, v) in src.iter().enumerate() {
                dst[taps - 1 - t] = *v;
            }
        }
    }
    out
}

/// Gradient with respect to the input.
pub fn backward_input<T: Scalar>(g: Geometry, dy: &[T], w: &[T], dx: &mut [T]) {
    let flipped = flipped_kernel(g, w);
    let gt = Geometry {
        cin: g.cout,
        cout: g.cin,
        ..g
    };
    forward(gt, dy, &flipped, None, dx);
}

/// Gradient with respect to the kernel, `dw[cout, cin·taps]`.
pub fn backward_weight<T: Scalar>(g: Geometry, x: &[T], dy: &[T], dw: &mut [T]) {
    let p = g.voxels();
    gemm(
        g.cout,
        g.patch_len(),
        p,
        Strided::row_major(dy, p),
        &PatchesT { x, g },
        dw,
        g.patch_len(),
        false,
    );
}

/// Per-channel sum of `dy`.
pub fn backward_bias<T: Scalar>(g: Geometry, dy: &[T], db: &mut [T]) {
    for (b, row) in db.iter_mut().zip(dy.chunks(g.voxels())) {
        *b = row.iter().copied().sum();
    }
}
