//! Matrix kernels shared by the layers.
//!
//! Every output element is accumulated in a fixed order (ascending inner
//! index) with separate multiply and add, so results do not depend on the
//! vector width the compiler picks. The AVX2 entry points compile the same
//! bodies with wider registers and are selected at runtime.

const MR: usize = 4;
const NR: usize = 8;

#[inline(always)]
fn gemm_rows<const R: usize>(a: &[f64], i: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    let mut j = 0;
    while j + NR <= n {
        let mut acc = [[0.0f64; NR]; R];
        for (r, acc_r) in acc.iter_mut().enumerate() {
            acc_r.copy_from_slice(&c[(i + r) * n + j..(i + r) * n + j + NR]);
        }
        for p in 0..k {
            let brow: &[f64; NR] = b[p * n + j..p * n + j + NR].try_into().unwrap();
            for (r, acc_r) in acc.iter_mut().enumerate() {
                let av = a[(i + r) * k + p];
                for q in 0..NR {
                    acc_r[q] += av * brow[q];
                }
            }
        }
        for (r, acc_r) in acc.iter().enumerate() {
            c[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(acc_r);
        }
        j += NR;
    }
    if j < n {
        for r in 0..R {
            let row = i + r;
            for jj in j..n {
                let mut s = c[row * n + jj];
                for p in 0..k {
                    s += a[row * k + p] * b[p * n + jj];
                }
                c[row * n + jj] = s;
            }
        }
    }
}

#[inline(always)]
fn gemm_acc_body(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    let mut i = 0;
    while i + MR <= m {
        gemm_rows::<MR>(a, i, k, b, n, c);
        i += MR;
    }
    while i < m {
        gemm_rows::<1>(a, i, k, b, n, c);
        i += 1;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_acc_avx2(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    gemm_acc_body(a, m, k, b, n, c)
}

/// `C (m x n) += A (m x k) * B (k x n)`, all row-major.
pub fn gemm_acc(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        unsafe { gemm_acc_avx2(a, m, k, b, n, c) };
        return;
    }
    gemm_acc_body(a, m, k, b, n, c)
}

/// Portable reference path, used by tests to pin the dispatched kernel.
pub fn gemm_acc_portable(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    gemm_acc_body(a, m, k, b, n, c)
}

/// Row-major transpose of an `rows x cols` matrix into `out` (`cols x rows`).
pub fn transpose(src: &[f64], rows: usize, cols: usize, out: &mut Vec<f64>) {
    out.clear();
    out.resize(rows * cols, 0.0);
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
}
