//! Packed matrix multiply, `C (+)= A · B`.
//!
//! Classic three-level blocking over packed panels: `B` is packed into
//! `NR`-wide column panels per `KC × NC` block and `A` into `MR`-tall row
//! panels per `MC × KC` block; an `MR × NR` register tile does the arithmetic.
//! `B` is supplied through [`PackB`], which lets convolution feed image
//! patches straight into the packed buffer without materializing im2col.
//!
//! Every output element is reduced over `k` in ascending order, block by
//! block, independent of how columns are split between threads, so results
//! do not depend on the thread count.

use std::sync::OnceLock;

use crate::parallel;
use crate::tensor::Scalar;

pub const MR: usize = 12;
pub const NR: usize = 32;
const KC: usize = 256;
const MC: usize = 144;
const NC: usize = 1024;

/// `kernel(kc, a_panel, b_panel, c, ldc, accumulate)` computes one full
/// `MR × NR` tile of `c` (row stride `ldc`).
pub type KernelFn<T> = unsafe fn(usize, *const T, *const T, *mut T, usize, bool);

/// Register-tile implementation chosen for an element type.
pub trait Microkernel: Sized + Copy {
    fn microkernel() -> KernelFn<Self>;
}

unsafe fn kernel_portable<T: num_traits::Float>(
    kc: usize,
    a: *const T,
    b: *const T,
    c: *mut T,
    ldc: usize,
    accumulate: bool,
) {
    let mut ab = [[T::zero(); NR]; MR];
    for p in 0..kc {
        let ap = std::slice::from_raw_parts(a.add(p * MR), MR);
        let bp = std::slice::from_raw_parts(b.add(p * NR), NR);
        for i in 0..MR {
            let ai = ap[i];
            for j in 0..NR {
                ab[i][j] = ab[i][j] + ai * bp[j];
            }
        }
    }
    for (i, row) in ab.iter().enumerate() {
        let cr = std::slice::from_raw_parts_mut(c.add(i * ldc), NR);
        for j in 0..NR {
            cr[j] = if accumulate { cr[j] + row[j] } else { row[j] };
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn kernel_f32_avx512(kc: usize, a: *const f32, b: *const f32, c: *mut f32, ldc: usize, accumulate: bool) {
    use std::arch::x86_64::*;
    let mut acc = [_mm512_setzero_ps(); 2 * MR];
    let mut ap = a;
    let mut bp = b;
    for _ in 0..kc {
        let b0 = _mm512_loadu_ps(bp);
        let b1 = _mm512_loadu_ps(bp.add(16));
        for i in 0..MR {
            let ai = _mm512_set1_ps(*ap.add(i));
            acc[2 * i] = _mm512_fmadd_ps(ai, b0, acc[2 * i]);
            acc[2 * i + 1] = _mm512_fmadd_ps(ai, b1, acc[2 * i + 1]);
        }
        ap = ap.add(MR);
        bp = bp.add(NR);
    }
    for i in 0..MR {
        let cp = c.add(i * ldc);
        let (mut lo, mut hi) = (acc[2 * i], acc[2 * i + 1]);
        if accumulate {
            lo = _mm512_add_ps(lo, _mm512_loadu_ps(cp));
            hi = _mm512_add_ps(hi, _mm512_loadu_ps(cp.add(16)));
        }
        _mm512_storeu_ps(cp, lo);
        _mm512_storeu_ps(cp.add(16), hi);
    }
}

impl Microkernel for f32 {
    fn microkernel() -> KernelFn<f32> {
        static CHOICE: OnceLock<KernelFn<f32>> = OnceLock::new();
        *CHOICE.get_or_init(|| {
            #[cfg(target_arch = "x86_64")]
            if std::is_x86_feature_detected!("avx512f") {
                return kernel_f32_avx512;
            }
            kernel_portable::<f32>
        })
    }
}

impl Microkernel for f64 {
    fn microkernel() -> KernelFn<f64> {
        kernel_portable::<f64>
    }
}

/// The portable tile, exposed so tests can compare it with the dispatched one.
pub fn portable_kernel<T: Scalar>() -> KernelFn<T> {
    kernel_portable::<T>
}

/// Dense strided matrix view: element `(r, c)` is `data[r * rs + c * cs]`.
#[derive(Clone, Copy)]
pub struct Strided<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> Strided<'a, T> {
    pub fn row_major(data: &'a [T], cols: usize) -> Self {
        Strided { data, rs: cols, cs: 1 }
    }

    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        Strided { data, rs: 1, cs: cols }
    }
}

/// Source of the right-hand operand.
pub trait PackB<T>: Sync {
    /// Packs rows `k0..k0+kc` and columns `n0..n0+nc` as consecutive
    /// `NR`-wide panels; within a panel each of the `kc` rows holds `NR`
    /// values, zero beyond `nc`.
    fn pack(&self, k0: usize, kc: usize, n0: usize, nc: usize, out: &mut [T]);
}

impl<T: Scalar> PackB<T> for Strided<'_, T> {
    fn pack(&self, k0: usize, kc: usize, n0: usize, nc: usize, out: &mut [T]) {
        for (jp, panel) in out.chunks_mut(kc * NR).take(nc.div_ceil(NR)).enumerate() {
            let c0 = n0 + jp * NR;
            let width = NR.min(n0 + nc - c0);
            for p in 0..kc {
                let row = &mut panel[p * NR..(p + 1) * NR];
                let base = (k0 + p) * self.rs + c0 * self.cs;
                if self.cs == 1 {
                    row[..width].copy_from_slice(&self.data[base..base + width]);
                } else {
                    for (j, r) in row[..width].iter_mut().enumerate() {
                        *r = self.data[base + j * self.cs];
                    }
                }
                row[width..].fill(T::zero());
            }
        }
    }
}

fn pack_a<T: Scalar>(a: &Strided<'_, T>, i0: usize, mc: usize, k0: usize, kc: usize, out: &mut [T]) {
    for (ip, panel) in out.chunks_mut(kc * MR).take(mc.div_ceil(MR)).enumerate() {
        let r0 = i0 + ip * MR;
        let height = MR.min(i0 + mc - r0);
        for p in 0..kc {
            let col = &mut panel[p * MR..(p + 1) * MR];
            let base = r0 * a.rs + (k0 + p) * a.cs;
            for (i, v) in col[..height].iter_mut().enumerate() {
                *v = a.data[base + i * a.rs];
            }
            col[height..].fill(T::zero());
        }
    }
}

#[derive(Clone, Copy)]
struct SendPtr<T>(*mut T);
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

#[allow(clippy::too_many_arguments)]
unsafe fn gemm_columns<T: Scalar, B: PackB<T>>(
    kernel: KernelFn<T>,
    m: usize,
    cols: std::ops::Range<usize>,
    k: usize,
    a: &Strided<'_, T>,
    b: &B,
    c: *mut T,
    ldc: usize,
    accumulate: bool,
) {
    let mut bpack = vec![T::zero(); KC * NC];
    let mut apack = vec![T::zero(); MC * KC];
    let mut tile = [T::zero(); MR * NR];
    let mut jc = cols.start;
    while jc < cols.end {
        let nc = NC.min(cols.end - jc);
        let mut pc = 0;
        while pc < k {
            let kc = KC.min(k - pc);
            b.pack(pc, kc, jc, nc, &mut bpack);
            let acc = accumulate || pc > 0;
            let mut ic = 0;
            while ic < m {
                let mc = MC.min(m - ic);
                pack_a(a, ic, mc, pc, kc, &mut apack);
                for jr in 0..nc.div_ceil(NR) {
                    let width = NR.min(nc - jr * NR);
                    let bp = bpack.as_ptr().add(jr * kc * NR);
                    for ir in 0..mc.div_ceil(MR) {
                        let height = MR.min(mc - ir * MR);
                        let ap = apack.as_ptr().add(ir * kc * MR);
                        let cp = c.add((ic + ir * MR) * ldc + jc + jr * NR);
                        if width == NR && height == MR {
                            kernel(kc, ap, bp, cp, ldc, acc);
                        } else {
                            if acc {
                                for i in 0..height {
                                    for j in 0..width {
                                        tile[i * NR + j] = *cp.add(i * ldc + j);
                                    }
                                }
                            }
                            kernel(kc, ap, bp, tile.as_mut_ptr(), NR, acc);
                            for i in 0..height {
                                for j in 0..width {
                                    *cp.add(i * ldc + j) = tile[i * NR + j];
                                }
                            }
                        }
                    }
                }
                ic += mc;
            }
            pc += kc;
        }
        jc += nc;
    }
}

/// `C[m × n] = A[m × k] · B[k × n]`, or `C += A · B` when `accumulate`.
/// `c` is row-major with row stride `ldc ≥ n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar, B: PackB<T>>(
    m: usize,
    n: usize,
    k: usize,
    a: Strided<'_, T>,
    b: &B,
    c: &mut [T],
    ldc: usize,
    accumulate: bool,
) {
    gemm_with(T::microkernel(), m, n, k, a, b, c, ldc, accumulate)
}

#[allow(clippy::too_many_arguments)]
pub fn gemm_with<T: Scalar, B: PackB<T>>(
    kernel: KernelFn<T>,
    m: usize,
    n: usize,
    k: usize,
    a: Strided<'_, T>,
    b: &B,
    c: &mut [T],
    ldc: usize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(ldc >= n && c.len() >= (m - 1) * ldc + n, "output buffer too small");
    if k == 0 {
        if !accumulate {
            for r in 0..m {
                c[r * ldc..r * ldc + n].fill(T::zero());
            }
        }
        return;
    }
    let panels = n.div_ceil(NR);
    let threads = parallel::threads().min(panels);
    let cptr = SendPtr(c.as_mut_ptr());
    if threads <= 1 {
        unsafe { gemm_columns(kernel, m, 0..n, k, &a, b, cptr.0, ldc, accumulate) };
        return;
    }
    let per = panels.div_ceil(threads) * NR;
    std::thread::scope(|s| {
        for t in 0..threads {
            let start = t * per;
            let end = n.min(start + per);
            if start >= end {
                continue;
            }
            let a = &a;
            s.spawn(move || {
                let p = cptr;
                // Each thread owns a disjoint column range of `c`.
                unsafe { gemm_columns(kernel, m, start..end, k, a, b, p.0, ldc, accumulate) }
            });
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn naive(m: usize, n: usize, k: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    fn check(m: usize, n: usize, k: usize, kernel: KernelFn<f32>) {
        let mut rng = Rng::new((m * 1000 + n * 10 + k) as u64);
        let a: Vec<f32> = (0..m * k).map(|_| rng.next_f32() - 0.5).collect();
        let b: Vec<f32> = (0..k * n).map(|_| rng.next_f32() - 0.5).collect();
        let want = naive(
            m,
            n,
            k,
            &a.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            &b.iter().map(|&v| v as f64).collect::<Vec<_>>(),
        );
        let mut c = vec![1.0f32; m * n];
        gemm_with(
            kernel,
            m,
            n,
            k,
            Strided::row_major(&a, k),
            &Strided::row_major(&b, n),
            &mut c,
            n,
            false,
        );
        for (x, y) in c.iter().zip(&want) {
            assert!(
                (*x as f64 - y).abs() < 1e-4 * (1.0 + k as f64).sqrt(),
                "{m}x{n}x{k}: {x} vs {y}"
            );
        }
        // accumulate adds on top
        let before = c.clone();
        gemm_with(
            kernel,
            m,
            n,
            k,
            Strided::row_major(&a, k),
            &Strided::row_major(&b, n),
            &mut c,
            n,
            true,
        );
        for (x, y) in c.iter().zip(&before) {
            assert!((x - 2.0 * y).abs() < 1e-4 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn matches_naive_on_ragged_shapes() {
        for &(m, n, k) in &[(1, 1, 1), (12, 32, 7), (13, 33, 300), (130, 70, 513), (5, 2100, 9)] {
            check(m, n, k, f32::microkernel());
            check(m, n, k, portable_kernel());
        }
    }

    #[test]
    fn transposed_operands() {
        let (m, n, k) = (7, 45, 19);
        let mut rng = Rng::new(5);
        let at: Vec<f64> = (0..m * k).map(|_| rng.next_f64()).collect(); // k x m
        let bt: Vec<f64> = (0..k * n).map(|_| rng.next_f64()).collect(); // n x k
        let mut a = vec![0.0; m * k];
        let mut b = vec![0.0; k * n];
        for i in 0..m {
            for p in 0..k {
                a[i * k + p] = at[p * m + i];
            }
        }
        for p in 0..k {
            for j in 0..n {
                b[p * n + j] = bt[j * k + p];
            }
        }
        let want = naive(m, n, k, &a, &b);
        let mut c = vec![0.0; m * n];
        gemm(
            m,
            n,
            k,
            Strided::transposed(&at, m),
            &Strided::transposed(&bt, k),
            &mut c,
            n,
            false,
        );
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
