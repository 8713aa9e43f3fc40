use rayon::prelude::*;

use crate::Real;

/// Below this many multiply-adds the kernels stay on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

/// `a [m x k] * b [k x n]`. Rows of the output are independent, so the result does
/// not depend on the number of worker threads.
pub fn matmul_nn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    if n == 0 {
        return out;
    }
    let row = |(i, dst): (usize, &mut [T])| {
        let ai = &a[i * k..(i + 1) * k];
        for (p, &av) in ai.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in dst.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// `a [m x k] * b^T` with `b [n x k]`.
pub fn matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    if n == 0 {
        return out;
    }
    let row = |(i, dst): (usize, &mut [T])| {
        let ai = &a[i * k..(i + 1) * k];
        for (j, o) in dst.iter_mut().enumerate() {
            *o = dot(ai, &b[j * k..(j + 1) * k]);
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// `a^T * b` with `a [m x k]`, `b [m x n]`; output `k x n`.
pub fn matmul_tn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    if n == 0 {
        return out;
    }
    let row = |(p, dst): (usize, &mut [T])| {
        for i in 0..m {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in dst.iter_mut().zip(&b[i * n..(i + 1) * n]) {
                *o += av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub(crate) fn gelu<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let inner = c * (x + T::lit(GELU_K) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let k = T::lit(GELU_K);
    let t = (c * (x + k * x * x * x)).tanh();
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * x * x)
}

/// Softmax over the valid slots of one row, written into `out`; invalid slots get 0.
/// Rows without valid slots become all zeros.
pub(crate) fn masked_softmax_row<T: Real>(x: &[T], mask: &[bool], out: &mut [T]) {
    let max = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        out.iter_mut().for_each(|o| *o = T::zero());
        return;
    }
    let mut total = T::zero();
    for ((o, &v), &m) in out.iter_mut().zip(x).zip(mask) {
        *o = if m { (v - max).exp() } else { T::zero() };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 3x4
        let c = matmul_nn(&a, &b, 2, 3, 4);
        let bt = transpose(&b, 3, 4);
        assert_eq!(c, matmul_nt(&a, &bt, 2, 3, 4));
        let at = transpose(&a, 2, 3);
        let c2 = matmul_tn(&at, &b, 3, 2, 4);
        for (x, y) in c.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn large_matmul_parallel_path_matches_serial_definition() {
        let (m, k, n) = (67, 45, 31);
        let a: Vec<f64> = (0..m * k).map(|v| ((v * 7) % 13) as f64 / 13.0).collect();
        let b: Vec<f64> = (0..k * n).map(|v| ((v * 5) % 11) as f64 / 11.0).collect();
        let c = matmul_nn(&a, &b, m, k, n);
        for i in [0, 33, 66] {
            for j in [0, 15, 30] {
                let expect: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                assert!((c[i * n + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(1.0f64) - 0.841_191_990_607_766).abs() < 1e-12);
        let h = 1e-6;
        for x in [-2.0f64, -0.3, 0.0, 0.7, 3.0] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_row_stability_and_empty_rows() {
        let mut out = [0.0f64; 3];
        masked_softmax_row(&[1e4, 1e4 - 1.0, -1e4], &[true, true, true], &mut out);
        assert!(out.iter().all(|v| v.is_finite()));
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        masked_softmax_row(&[1.0, 2.0, 3.0], &[false, false, false], &mut out);
        assert_eq!(out, [0.0; 3]);
    }
}
