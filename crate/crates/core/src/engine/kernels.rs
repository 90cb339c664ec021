//! Tape-free numeric kernels shared by the differentiable ops.

use crate::par;
use crate::tensor::Real;

/// `C[m,n] = A[m,k] · B[k,n]`.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![T::zero(); m * n];
    if n == 0 {
        return c;
    }
    let rows_per_chunk = rows_per_chunk(m, k * n);
    par::for_each_chunk_mut(&mut c, rows_per_chunk * n, m * k * n, |ci, chunk| {
        let row0 = ci * rows_per_chunk;
        for (r, crow) in chunk.chunks_mut(n).enumerate() {
            let i = row0 + r;
            let arow = &a[i * k..(i + 1) * k];
            for (p, &aip) in arow.iter().enumerate() {
                if aip == T::zero() {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv = *cv + aip * bv;
                }
            }
        }
    });
    c
}

/// `C[k,n] = A[m,k]ᵀ · G[m,n]`.
pub fn matmul_tn<T: Real>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let at = transpose(a, m, k);
    matmul(&at, g, k, m, n)
}

/// `C[m,k] = G[m,n] · B[k,n]ᵀ`.
pub fn matmul_nt<T: Real>(g: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let bt = transpose(b, k, n);
    matmul(g, &bt, m, n, k)
}

pub fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// Column sums of a `[rows, cols]` matrix.
pub fn col_sums<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut s = vec![T::zero(); cols];
    for r in 0..rows {
        for (acc, &v) in s.iter_mut().zip(&a[r * cols..(r + 1) * cols]) {
            *acc = *acc + v;
        }
    }
    s
}

pub fn add_row_bias<T: Real>(a: &mut [T], bias: &[T]) {
    for row in a.chunks_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn rows_per_chunk(m: usize, row_work: usize) -> usize {
    // Roughly 64k multiply-adds per task.
    (65_536 / row_work.max(1)).clamp(1, m.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_variants_agree_with_triple_loop() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|v| (v as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64 * 0.11).cos()).collect();
        let c = matmul(&a, &b, m, k, n);
        let r = naive(&a, &b, m, k, n);
        for (x, y) in c.iter().zip(&r) {
            assert!((x - y).abs() < 1e-12);
        }
        let at = transpose(&a, m, k);
        let c2 = matmul_tn(&at, &b, k, m, n);
        for (x, y) in c2.iter().zip(&r) {
            assert!((x - y).abs() < 1e-12);
        }
        let bt = transpose(&b, k, n);
        let c3 = matmul_nt(&a, &bt, m, k, n);
        for (x, y) in c3.iter().zip(&r) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_stable() {
        let mut row = [1000.0f64, 0.0];
        softmax_in_place(&mut row);
        assert!((row[0] - 1.0).abs() < 1e-12);
        assert!(row[1] >= 0.0 && row[1] < 1e-300);
    }
}
