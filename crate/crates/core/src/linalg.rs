//! Small dense kernels over row-major slices.
//!
//! Inner loops always run over contiguous memory; dot products keep eight
//! partial sums so the compiler can vectorize them without reassociation
//! licences.

use crate::Scalar;

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = S::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[m×n] (+)= a[m×k] · b[k×n]`
pub fn gemm_nn<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize, accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if !accumulate {
        out.fill(S::zero());
    }
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != S::zero() {
                axpy(av, &b[p * n..(p + 1) * n], row);
            }
        }
    }
}

/// `out[m×n] (+)= a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize, accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let v = dot(ar, &b[j * k..(j + 1) * k]);
            if accumulate {
                out[i * n + j] += v;
            } else {
                out[i * n + j] = v;
            }
        }
    }
}

/// `out[m×n] (+)= a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize, accumulate: bool) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if !accumulate {
        out.fill(S::zero());
    }
    for p in 0..k {
        let br = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av != S::zero() {
                axpy(av, br, &mut out[i * n..(i + 1) * n]);
            }
        }
    }
}

pub fn l2_norm<S: Scalar>(v: &[S]) -> S {
    dot(v, v).sqrt()
}
