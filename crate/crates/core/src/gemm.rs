//! Row-major matrix products backing the dense and convolution layers.
//!
//! Every output element of [`matmul`] is accumulated from zero in increasing
//! inner index, so results equal the naive triple loop bit for bit. The
//! transposed variants use a fixed accumulation order as well, independent of
//! the SIMD width picked at runtime.

use crate::tensor::Scalar;

const COL_BLOCK: usize = 512;

/// `A (m x k) * B (k x n)`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    gemm_nn(a, b, &mut c, m, k, n);
    c
}

/// Overwrites `c (m x n)` with `A (m x k) * B (k x n)`.
pub fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    dispatch_rows(a, k, 1, b, c, m, k, n);
}

/// Overwrites `c (m x n)` with `A^T * B` where `A` is stored `k x m`.
pub fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    dispatch_rows(a, 1, m, b, c, m, k, n);
}

/// Overwrites `c (m x n)` with `A * B^T` where `A` is `m x k` and `B` is `n x k`.
pub fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports AVX2, checked above.
        unsafe { nt_avx2(a, b, c, m, k, n) };
        return;
    }
    nt_kernel(a, b, c, m, k, n);
}

/// Dot product with eight interleaved partial sums combined in a fixed tree.
#[inline(always)]
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [T::zero(); 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (xs, ys) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] += xs[l] * ys[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (&a, &b) in xr.iter().zip(yr) {
        s += a * b;
    }
    s
}

#[cfg(target_arch = "x86_64")]
fn has_avx2() -> bool {
    use std::sync::OnceLock;
    static AVX2: OnceLock<bool> = OnceLock::new();
    *AVX2.get_or_init(|| std::arch::is_x86_feature_detected!("avx2"))
}

#[allow(clippy::too_many_arguments)]
fn dispatch_rows<T: Scalar>(a: &[T], a_row: usize, a_col: usize, b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports AVX2, checked above.
        unsafe { rows_avx2(a, a_row, a_col, b, c, m, k, n) };
        return;
    }
    rows_kernel(a, a_row, a_col, b, c, m, k, n);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn rows_avx2<T: Scalar>(
    a: &[T],
    a_row: usize,
    a_col: usize,
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    rows_kernel(a, a_row, a_col, b, c, m, k, n)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn nt_avx2<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    nt_kernel(a, b, c, m, k, n)
}

#[inline(always)]
fn nt_kernel<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Row-broadcast kernel: `c[i, :] = sum_kk a(i, kk) * b[kk, :]`, four rows
/// of `c` at a time, with `a(i, kk) = a[i * a_row + kk * a_col]`.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn rows_kernel<T: Scalar>(a: &[T], a_row: usize, a_col: usize, b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let c = &mut c[..m * n];
    c.fill(T::zero());
    let mut j0 = 0;
    while j0 < n {
        let j1 = (j0 + COL_BLOCK).min(n);
        let mut i = 0;
        while i + 4 <= m {
            let block = &mut c[i * n..(i + 4) * n];
            let (r0, rest) = block.split_at_mut(n);
            let (r1, rest) = rest.split_at_mut(n);
            let (r2, r3) = rest.split_at_mut(n);
            let (r0, r1, r2, r3) = (&mut r0[j0..j1], &mut r1[j0..j1], &mut r2[j0..j1], &mut r3[j0..j1]);
            for kk in 0..k {
                let brow = &b[kk * n + j0..kk * n + j1];
                let a0 = a[i * a_row + kk * a_col];
                let a1 = a[(i + 1) * a_row + kk * a_col];
                let a2 = a[(i + 2) * a_row + kk * a_col];
                let a3 = a[(i + 3) * a_row + kk * a_col];
                for (j, &bv) in brow.iter().enumerate() {
                    r0[j] += a0 * bv;
                    r1[j] += a1 * bv;
                    r2[j] += a2 * bv;
                    r3[j] += a3 * bv;
                }
            }
            i += 4;
        }
        while i < m {
            let r = &mut c[i * n + j0..i * n + j1];
            for kk in 0..k {
                let brow = &b[kk * n + j0..kk * n + j1];
                let av = a[i * a_row + kk * a_col];
                for (x, &bv) in r.iter_mut().zip(brow) {
                    *x += av * bv;
                }
            }
            i += 1;
        }
        j0 = j1;
    }
}
