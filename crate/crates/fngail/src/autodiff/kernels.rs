//! Flat-slice float kernels behind the tape ops. Every loop accumulates in a
//! fixed per-element order, and parallel paths only split *output* rows
//! across threads, so results are bitwise identical for any FNGAIL_THREADS.

use crate::Scalar;
use std::sync::OnceLock;

/// Worker count from FNGAIL_THREADS (default 1). Read once per process.
pub fn threads() -> usize {
    static N: OnceLock<usize> = OnceLock::new();
    *N.get_or_init(|| {
        std::env::var("FNGAIL_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or(1)
            .min(64)
    })
}

const PAR_FLOPS: usize = 1 << 15;

/// c += a @ b for row-major a [m,k], b [k,n], c [m,n].
pub fn gemm(m: usize, k: usize, n: usize, a: &[Scalar], b: &[Scalar], c: &mut [Scalar]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let t = threads();
    if t > 1 && m >= 2 * t && m * k * n > PAR_FLOPS {
        let rows = (m + t - 1) / t;
        std::thread::scope(|s| {
            for (ac, cc) in a.chunks(rows * k).zip(c.chunks_mut(rows * n)) {
                s.spawn(move || gemm_serial(ac.len() / k, k, n, ac, b, cc));
            }
        });
    } else {
        gemm_serial(m, k, n, a, b, c);
    }
}

fn gemm_serial(m: usize, k: usize, n: usize, a: &[Scalar], b: &[Scalar], c: &mut [Scalar]) {
    // Register tiles: up to 8 output rows x 16 columns accumulate in local
    // arrays the compiler keeps in vector registers, so each b row chunk
    // is loaded once per eight rows. Every c element still sums over k in
    // index order — tiling never changes the result bits.
    let mut j = 0;
    while j + 16 <= n {
        let mut i = 0;
        while i + 8 <= m {
            gemm_tile::<8, 16>(i, j, k, n, a, b, c);
            i += 8;
        }
        while i < m {
            gemm_tile::<1, 16>(i, j, k, n, a, b, c);
            i += 1;
        }
        j += 16;
    }
    if j < n {
        gemm_cols_tail(m, k, n, j, a, b, c);
    }
}

#[inline(always)]
fn gemm_tile<const R: usize, const W: usize>(
    i0: usize,
    j0: usize,
    k: usize,
    n: usize,
    a: &[Scalar],
    b: &[Scalar],
    c: &mut [Scalar],
) {
    let mut acc = [[0.0 as Scalar; W]; R];
    for (r, row) in acc.iter_mut().enumerate() {
        row.copy_from_slice(&c[(i0 + r) * n + j0..(i0 + r) * n + j0 + W]);
    }
    for kk in 0..k {
        let brow = &b[kk * n + j0..kk * n + j0 + W];
        for (r, row) in acc.iter_mut().enumerate() {
            let aik = a[(i0 + r) * k + kk];
            for (av, &bv) in row.iter_mut().zip(brow) {
                *av += aik * bv;
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        c[(i0 + r) * n + j0..(i0 + r) * n + j0 + W].copy_from_slice(row);
    }
}

/// Leftover columns past the last full 16-wide tile.
fn gemm_cols_tail(m: usize, k: usize, n: usize, j0: usize, a: &[Scalar], b: &[Scalar], c: &mut [Scalar]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n + j0..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n + j0..kk * n + n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
}

/// c += aᵀ @ b for a [m,k], b [m,n], c [k,n]. Used for weight gradients.
pub fn gemm_at_b(m: usize, k: usize, n: usize, a: &[Scalar], b: &[Scalar], c: &mut [Scalar]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    let t = threads();
    if t > 1 && k >= 2 * t && m * k * n > PAR_FLOPS {
        let rows = (k + t - 1) / t;
        std::thread::scope(|s| {
            for (chunk, cc) in (0..k).step_by(rows).zip(c.chunks_mut(rows * n)) {
                let hi = (chunk + rows).min(k);
                s.spawn(move || gemm_at_b_range(m, k, n, a, b, cc, chunk, hi));
            }
        });
    } else {
        gemm_at_b_range(m, k, n, a, b, c, 0, k);
    }
}

fn gemm_at_b_range(
    m: usize,
    k: usize,
    n: usize,
    a: &[Scalar],
    b: &[Scalar],
    c: &mut [Scalar],
    k_lo: usize,
    k_hi: usize,
) {
    // Same register-tile idea as gemm_serial with the roles swapped: the
    // tile rows are kk values, the reduction runs over a's m rows, and
    // each element of c still accumulates over i in index order.
    let mut j = 0;
    while j + 16 <= n {
        let mut kk = k_lo;
        while kk + 8 <= k_hi {
            at_b_tile::<8, 16>(m, k, n, a, b, c, kk, k_lo, j);
            kk += 8;
        }
        while kk < k_hi {
            at_b_tile::<1, 16>(m, k, n, a, b, c, kk, k_lo, j);
            kk += 1;
        }
        j += 16;
    }
    if j < n {
        for i in 0..m {
            let brow = &b[i * n + j..(i + 1) * n];
            for kk in k_lo..k_hi {
                let v = a[i * k + kk];
                let crow = &mut c[(kk - k_lo) * n + j..(kk - k_lo + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += v * bv;
                }
            }
        }
    }
}

#[inline(always)]
fn at_b_tile<const R: usize, const W: usize>(
    m: usize,
    k: usize,
    n: usize,
    a: &[Scalar],
    b: &[Scalar],
    c: &mut [Scalar],
    kk0: usize,
    k_lo: usize,
    j0: usize,
) {
    let mut acc = [[0.0 as Scalar; W]; R];
    for (r, row) in acc.iter_mut().enumerate() {
        let base = (kk0 - k_lo + r) * n + j0;
        row.copy_from_slice(&c[base..base + W]);
    }
    for i in 0..m {
        let brow = &b[i * n + j0..i * n + j0 + W];
        for (r, row) in acc.iter_mut().enumerate() {
            let v = a[i * k + kk0 + r];
            for (av, &bv) in row.iter_mut().zip(brow) {
                *av += v * bv;
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        let base = (kk0 - k_lo + r) * n + j0;
        c[base..base + W].copy_from_slice(row);
    }
}

/// c += a @ bᵀ for a [m,n], b [k,n], c [m,k]. Used for input gradients.
pub fn gemm_a_bt(m: usize, n: usize, k: usize, a: &[Scalar], b: &[Scalar], c: &mut [Scalar]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    let t = threads();
    if t > 1 && m >= 2 * t && m * k * n > PAR_FLOPS {
        let rows = (m + t - 1) / t;
        std::thread::scope(|s| {
            for (ac, cc) in a.chunks(rows * n).zip(c.chunks_mut(rows * k)) {
                s.spawn(move || gemm_a_bt_serial(ac.len() / n, n, k, ac, b, cc));
            }
        });
    } else {
        gemm_a_bt_serial(m, n, k, a, b, c);
    }
}

fn gemm_a_bt_serial(m: usize, n: usize, k: usize, a: &[Scalar], b: &[Scalar], c: &mut [Scalar]) {
    // Row-of-b dots run at a fraction of the axpy kernels' speed, so
    // materialize bᵀ once (k*n floats, tiny next to the m*n*k work) and
    // reuse the blocked row kernel.
    let mut bt = vec![0.0; n * k];
    for i in 0..k {
        for j in 0..n {
            bt[j * k + i] = b[i * n + j];
        }
    }
    gemm_serial(m, n, k, a, &bt, c);
}

/// Eight-lane dot product: fixed association order, vectorizable.
pub fn dot(a: &[Scalar], b: &[Scalar]) -> Scalar {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0 as Scalar; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        for l in 0..8 {
            acc[l] += a[i * 8 + l] * b[i * 8 + l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}
