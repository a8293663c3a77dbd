//! Dense row-major kernels used by the forward and backward passes.

use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn max_abs_diff(&self, other: &Matrix<T>) -> T {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

/// `c[m x n] += a[m x k] * b[k x n]`
pub(crate) fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    matmul_acc(a, b, &mut c, m, k, n);
    c
}

/// `c[k x n] += a[m x k]^T * b[m x n]`
pub(crate) fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let brow = &b[r * n..(r + 1) * n];
        for p in 0..k {
            let arp = a[r * k + p];
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += arp * bj;
            }
        }
    }
}

/// `c[m x n] += a[m x k] * b[n x k]^T`
pub(crate) fn matmul_nt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    matmul_nt_acc(a, b, &mut c, m, k, n);
    c
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

pub(crate) fn add_assign<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn added<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

const RMS_EPS: f64 = 1e-6;

/// Row-wise RMS normalisation with a learned gain. Returns the output and the
/// per-row reciprocal RMS.
pub(crate) fn rms_norm<T: Scalar>(x: &[T], gain: &[T], d: usize) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(rows);
    let df = T::from_usize(d).unwrap();
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let ms = dot(xr, xr) / df;
        let s = T::one() / (ms + T::lit(RMS_EPS)).sqrt();
        inv.push(s);
        for ((yk, &xk), &gk) in y[r * d..(r + 1) * d].iter_mut().zip(xr).zip(gain) {
            *yk = xk * s * gk;
        }
    }
    (y, inv)
}

/// Backward of [`rms_norm`]; accumulates the gain gradient and returns `dx`.
pub(crate) fn rms_norm_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    gain: &[T],
    inv: &[T],
    d: usize,
    dgain: &mut [T],
) -> Vec<T> {
    let rows = x.len() / d;
    let mut dx = vec![T::zero(); x.len()];
    let df = T::from_usize(d).unwrap();
    for r in 0..rows {
        let s = inv[r];
        let xr = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut proj = T::zero();
        for k in 0..d {
            dgain[k] += dyr[k] * xr[k] * s;
            proj += dyr[k] * gain[k] * xr[k];
        }
        let coef = proj * s * s * s / df;
        for k in 0..d {
            dx[r * d + k] = dyr[k] * gain[k] * s - xr[k] * coef;
        }
    }
    dx
}

/// In-place log-softmax of one row; returns the log partition.
pub(crate) fn log_softmax_row<T: Scalar>(row: &mut [T]) -> T {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let sum = row.iter().fold(T::zero(), |s, &v| s + (v - max).exp());
    let lse = max + sum.ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
    lse
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, -1.0, 2.0, 0.5, 1.0]; // 3x2
        assert_eq!(matmul(&a, &b, 2, 3, 2), vec![0.5, 7.0, 2.0, 16.0]);
        // a^T (3x2) * a (2x3)
        let mut c = vec![0.0; 9];
        matmul_tn_acc(&a, &a, &mut c, 2, 3, 3);
        assert_eq!(c, vec![17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
        // a * a^T
        assert_eq!(matmul_nt(&a, &a, 2, 3, 2), vec![14.0, 32.0, 32.0, 77.0]);
    }

    #[test]
    fn rms_norm_unit_rms() {
        let x = [3.0f64, 4.0, 0.0, 0.0];
        let (y, _) = rms_norm(&x, &[1.0, 1.0, 1.0, 1.0], 4);
        let rms = (y.iter().map(|v| v * v).sum::<f64>() / 4.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-6);
    }

    #[test]
    fn log_softmax_normalises() {
        let mut r = [1.0f64, 2.0, 3.0];
        log_softmax_row(&mut r);
        let s: f64 = r.iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
