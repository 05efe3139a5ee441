//! Row vector times matrix, the recurrent product for batches too small to
//! be worth packing for gemm.

use super::Real;

/// `acc += x · m` with `m` of shape `(x.len(), acc.len())`, row-major.
pub(crate) fn vec_mat_acc<F: Real>(acc: &mut [F], x: &[F], m: &[F]) {
    debug_assert_eq!(m.len(), x.len() * acc.len());
    let n = acc.len();
    for (k, &xk) in x.iter().enumerate() {
        for (a, &w) in acc.iter_mut().zip(&m[k * n..(k + 1) * n]) {
            *a += xk * w;
        }
    }
}

/// `f32` version; uses AVX2 and FMA when the CPU has them.
pub(crate) fn vec_mat_acc_f32(acc: &mut [f32], x: &[f32], m: &[f32]) {
    #[cfg(target_arch = "x86_64")]
    if super::activation::has_avx2_fma() {
        // SAFETY: the features were just detected.
        unsafe { vec_mat_acc_fma(acc, x, m) };
        return;
    }
    vec_mat_acc(acc, x, m)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn vec_mat_acc_fma(acc: &mut [f32], x: &[f32], m: &[f32]) {
    assert_eq!(m.len(), x.len() * acc.len());
    let n = acc.len();
    if n == 0 {
        return;
    }
    // Four rows per pass so each accumulator load and store is shared by
    // four multiply-adds; the summation order is unchanged.
    let mut rows = m.chunks_exact(4 * n);
    let mut xs = x.chunks_exact(4);
    for (r, x4) in (&mut rows).zip(&mut xs) {
        let (r0, rest) = r.split_at(n);
        let (r1, rest) = rest.split_at(n);
        let (r2, r3) = rest.split_at(n);
        for j in 0..n {
            let a = x4[0].mul_add(r0[j], acc[j]);
            let a = x4[1].mul_add(r1[j], a);
            let a = x4[2].mul_add(r2[j], a);
            acc[j] = x4[3].mul_add(r3[j], a);
        }
    }
    for (r, &xk) in rows.remainder().chunks_exact(n).zip(xs.remainder()) {
        for (a, &w) in acc.iter_mut().zip(r) {
            *a = xk.mul_add(w, *a);
        }
    }
}
