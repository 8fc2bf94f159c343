//! Row-major matrix kernels shared by the convolution and linear layers.
//!
//! Plain triple loops with the innermost loop contiguous; accumulation
//! order is fixed, so results are deterministic.

use crate::scalar::Scalar;

/// out(m x n) += a(m x k) * b(k x n)
///
/// Four k-steps are fused per pass over the output row; the adds stay in
/// k order, so results are bit-identical to the plain loop while the
/// output row is loaded and stored a quarter as often.
pub(crate) fn acc_a_b<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let k4 = k - k % 4;
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        let mut kk = 0;
        while kk < k4 {
            let (a0, a1, a2, a3) = (a_row[kk], a_row[kk + 1], a_row[kk + 2], a_row[kk + 3]);
            let b0 = &b[kk * n..(kk + 1) * n];
            let b1 = &b[(kk + 1) * n..(kk + 2) * n];
            let b2 = &b[(kk + 2) * n..(kk + 3) * n];
            let b3 = &b[(kk + 3) * n..(kk + 4) * n];
            for j in 0..n {
                let mut acc = out_row[j];
                acc += a0 * b0[j];
                acc += a1 * b1[j];
                acc += a2 * b2[j];
                acc += a3 * b3[j];
                out_row[j] = acc;
            }
            kk += 4;
        }
        while kk < k {
            let av = a_row[kk];
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
            kk += 1;
        }
    }
}

/// out(k x n) += a(m x k)^T * b(m x n)
///
/// Four rows of `a` are folded into each output row per pass, in row
/// order, so the accumulation sequence matches the plain loop.
pub(crate) fn acc_at_b<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    let m4 = m - m % 4;
    for kk in 0..k {
        let out_row = &mut out[kk * n..(kk + 1) * n];
        let mut i = 0;
        while i < m4 {
            let (a0, a1, a2, a3) = (
                a[i * k + kk],
                a[(i + 1) * k + kk],
                a[(i + 2) * k + kk],
                a[(i + 3) * k + kk],
            );
            let b0 = &b[i * n..(i + 1) * n];
            let b1 = &b[(i + 1) * n..(i + 2) * n];
            let b2 = &b[(i + 2) * n..(i + 3) * n];
            let b3 = &b[(i + 3) * n..(i + 4) * n];
            for j in 0..n {
                let mut acc = out_row[j];
                acc += a0 * b0[j];
                acc += a1 * b1[j];
                acc += a2 * b2[j];
                acc += a3 * b3[j];
                out_row[j] = acc;
            }
            i += 4;
        }
        while i < m {
            let av = a[i * k + kk];
            let b_row = &b[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
            i += 1;
        }
    }
}

/// out(m x k) += a(m x n) * b(k x n)^T
///
/// Each dot product accumulates into four fixed lanes so the loop
/// vectorizes without reassociation, and two `a` rows share each pass
/// over a `b` row to halve memory traffic; lane and row order are fixed,
/// so results stay deterministic.
pub(crate) fn acc_a_bt<S: Scalar>(m: usize, n: usize, k: usize, a: &[S], b: &[S], out: &mut [S]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);

    fn dot_pair<S: Scalar>(a0: &[S], a1: &[S], b: &[S]) -> (S, S) {
        let mut l0 = [S::ZERO; 4];
        let mut l1 = [S::ZERO; 4];
        let mut c0 = a0.chunks_exact(4);
        let mut c1 = a1.chunks_exact(4);
        let mut cb = b.chunks_exact(4);
        for ((x0, x1), y) in (&mut c0).zip(&mut c1).zip(&mut cb) {
            l0[0] += x0[0] * y[0];
            l0[1] += x0[1] * y[1];
            l0[2] += x0[2] * y[2];
            l0[3] += x0[3] * y[3];
            l1[0] += x1[0] * y[0];
            l1[1] += x1[1] * y[1];
            l1[2] += x1[2] * y[2];
            l1[3] += x1[3] * y[3];
        }
        let mut d0 = (l0[0] + l0[1]) + (l0[2] + l0[3]);
        let mut d1 = (l1[0] + l1[1]) + (l1[2] + l1[3]);
        for ((&x0, &x1), &y) in c0
            .remainder()
            .iter()
            .zip(c1.remainder())
            .zip(cb.remainder())
        {
            d0 += x0 * y;
            d1 += x1 * y;
        }
        (d0, d1)
    }

    fn dot_one<S: Scalar>(a: &[S], b: &[S]) -> S {
        let mut lanes = [S::ZERO; 4];
        let mut ca = a.chunks_exact(4);
        let mut cb = b.chunks_exact(4);
        for (x, y) in (&mut ca).zip(&mut cb) {
            lanes[0] += x[0] * y[0];
            lanes[1] += x[1] * y[1];
            lanes[2] += x[2] * y[2];
            lanes[3] += x[3] * y[3];
        }
        let mut acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
        for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
            acc += x * y;
        }
        acc
    }

    let m2 = m - m % 2;
    let mut i = 0;
    while i < m2 {
        let a0 = &a[i * n..(i + 1) * n];
        let a1 = &a[(i + 1) * n..(i + 2) * n];
        for kk in 0..k {
            let b_row = &b[kk * n..(kk + 1) * n];
            let (d0, d1) = dot_pair(a0, a1, b_row);
            out[i * k + kk] += d0;
            out[(i + 1) * k + kk] += d1;
        }
        i += 2;
    }
    if i < m {
        let a_row = &a[i * n..(i + 1) * n];
        for kk in 0..k {
            out[i * k + kk] += dot_one(a_row, &b[kk * n..(kk + 1) * n]);
        }
    }
}
