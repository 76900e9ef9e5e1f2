//! Small dense linear algebra: a row-major matrix, vector kernels, a
//! Householder QR and a cyclic Jacobi eigensolver for symmetric matrices.

use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a != 0.0 {
                    axpy(a, other.row(k), out.row_mut(r));
                }
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators let the compiler keep several lanes busy.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        sum += a[j] * b[j];
    }
    sum
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        (dot(a, b) / denom).clamp(-1.0, 1.0)
    }
}

/// Thin Householder QR of an `n × p` matrix with `n ≥ p`.
#[derive(Debug, Clone)]
pub struct Qr {
    /// Householder vectors below the diagonal, `R` on and above it.
    packed: Matrix,
    /// Diagonal of `R`.
    r_diag: Vec<f64>,
}

impl Qr {
    pub fn new(a: &Matrix) -> Self {
        let (n, p) = (a.rows(), a.cols());
        assert!(n >= p, "QR needs at least as many rows as columns");
        let mut qr = a.clone();
        let mut r_diag = vec![0.0; p];
        for k in 0..p {
            let mut nrm = 0.0f64;
            for i in k..n {
                nrm = nrm.hypot(qr.get(i, k));
            }
            if nrm != 0.0 {
                if qr.get(k, k) < 0.0 {
                    nrm = -nrm;
                }
                for i in k..n {
                    qr.set(i, k, qr.get(i, k) / nrm);
                }
                qr.set(k, k, qr.get(k, k) + 1.0);
                for j in k + 1..p {
                    let mut s = 0.0;
                    for i in k..n {
                        s += qr.get(i, k) * qr.get(i, j);
                    }
                    s = -s / qr.get(k, k);
                    for i in k..n {
                        qr.set(i, j, qr.get(i, j) + s * qr.get(i, k));
                    }
                }
            }
            r_diag[k] = -nrm;
        }
        Qr { packed: qr, r_diag }
    }

    pub fn r_diag(&self) -> &[f64] {
        &self.r_diag
    }

    /// Upper-triangular `R` as a `p × p` matrix.
    pub fn r(&self) -> Matrix {
        let p = self.packed.cols();
        let mut r = Matrix::zeros(p, p);
        for i in 0..p {
            r.set(i, i, self.r_diag[i]);
            for j in i + 1..p {
                r.set(i, j, self.packed.get(i, j));
            }
        }
        r
    }

    /// Least-squares solution of `A x ≈ b`. Assumes full column rank.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, p) = (self.packed.rows(), self.packed.cols());
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        // y ← Qᵀ b
        for k in 0..p {
            let mut s = 0.0;
            for i in k..n {
                s += self.packed.get(i, k) * y[i];
            }
            s = -s / self.packed.get(k, k);
            for i in k..n {
                y[i] += s * self.packed.get(i, k);
            }
        }
        // back substitution R x = (Qᵀ b)[..p]
        let mut x = vec![0.0; p];
        for k in (0..p).rev() {
            let mut s = y[k];
            for j in k + 1..p {
                s -= self.packed.get(k, j) * x[j];
            }
            x[k] = s / self.r_diag[k];
        }
        x
    }

    /// `R⁻¹` by back substitution; `(AᵀA)⁻¹ = R⁻¹ R⁻ᵀ`.
    pub fn r_inverse(&self) -> Matrix {
        let r = self.r();
        let p = r.rows();
        let mut inv = Matrix::zeros(p, p);
        for col in 0..p {
            for i in (0..=col).rev() {
                let mut s = if i == col { 1.0 } else { 0.0 };
                for j in i + 1..=col {
                    s -= r.get(i, j) * inv.get(j, col);
                }
                inv.set(i, col, s / r.get(i, i));
            }
        }
        inv
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues come back in descending order; column `i` of the returned
/// matrix is the eigenvector for eigenvalue `i`.
pub fn symmetric_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    assert_eq!(n, a.cols(), "eigen needs a square matrix");
    let mut m = a.clone();
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let scale: f64 = m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j) * m.get(i, j))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m.get(k, p), m.get(k, q));
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let (mpk, mqk) = (m.get(p, k), m.get(q, k));
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, dst, v.get(k, src));
        }
    }
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_solves_square_system() {
        let a = Matrix::from_rows(&[[2.0, 1.0], [1.0, 3.0]]);
        let x = Qr::new(&a).solve(&[3.0, 5.0]);
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12, "{x:?}");
    }

    #[test]
    fn r_inverse_is_inverse() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 0.5], [0.0, 1.0, 4.0], [3.0, -1.0, 1.0], [1.0, 1.0, 1.0]]);
        let qr = Qr::new(&a);
        let prod = qr.r().matmul(&qr.r_inverse());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobi_diagonalizes() {
        let a = Matrix::from_rows(&[[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]]);
        let (vals, vecs) = symmetric_eigen(&a);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        for i in 0..3 {
            let v: Vec<f64> = (0..3).map(|k| vecs.get(k, i)).collect();
            let av: Vec<f64> = (0..3).map(|r| dot(a.row(r), &v)).collect();
            for k in 0..3 {
                assert!((av[k] - vals[i] * v[k]).abs() < 1e-10);
            }
        }
        assert!((vals.iter().sum::<f64>() - 9.0).abs() < 1e-12);
    }
}
