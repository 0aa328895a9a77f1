//! Small dense linear algebra: row-major matrices, a cyclic Jacobi
//! eigensolver for symmetric matrices, and a one-sided Jacobi SVD.
//!
//! Everything here is written for desk-scale problems (dimension up to a
//! couple of thousand) where *accuracy of tiny eigenvalues and singular
//! values* matters more than raw speed: zero-eigenvalue counting and rank
//! decisions downstream hinge on resolving values ten or more orders of
//! magnitude below the spectral radius. Jacobi methods deliver that high
//! relative accuracy at O(n^3)-per-sweep cost, which is plenty fast here.

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix from a slice of rows; every row must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("rows of unequal length".into()));
        }
        Ok(Mat { rows: r, cols: c, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul: inner dimensions differ");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self[(i, k)];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += aik * other[(k, j)];
                }
            }
        }
        out
    }

    /// `self * v` for a column vector `v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec: dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute difference between the matrix and its transpose.
    pub fn symmetry_defect(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "symmetry_defect: matrix not square");
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Replaces the matrix with its symmetric part `(A + A^T) / 2`.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols, "symmetrize: matrix not square");
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = avg;
                self[(j, i)] = avg;
            }
        }
    }

    pub fn scale(&self, a: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| a * x).collect() }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Eigendecomposition of a symmetric matrix: `a = vectors * diag(values) * vectors^T`.
#[derive(Debug, Clone)]
pub struct Eigh {
    /// Eigenvalues sorted ascending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, in the same order as `values`.
    pub vectors: Mat,
}

/// Relative off-diagonal threshold at which the Jacobi iteration stops.
pub const JACOBI_OFF_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 50;

fn off_diagonal_norm(a: &Mat) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// The input is symmetrized first (callers may carry ~1e-16 asymmetry from
/// accumulation order). Sweeps run until the off-diagonal Frobenius norm
/// falls below `1e-14 * ||A||_F`, so eigenvalues are resolved with high
/// relative accuracy even when they are many orders of magnitude below the
/// spectral radius — exactly what zero-eigenvalue counting needs.
pub fn jacobi_eigh(a: &Mat) -> Result<Eigh> {
    if a.rows() != a.cols() {
        return Err(Error::Argument(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::Argument("matrix contains non-finite entries".into()));
    }
    let n = a.rows();
    let mut h = a.clone();
    h.symmetrize();
    let mut v = Mat::identity(n);
    let norm = h.frob_norm();
    let target = JACOBI_OFF_TOL * norm;

    if norm > 0.0 {
        for _sweep in 0..JACOBI_MAX_SWEEPS {
            if off_diagonal_norm(&h) <= target {
                break;
            }
            for p in 0..n - 1 {
                for q in p + 1..n {
                    let apq = h[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = h[(p, p)];
                    let aqq = h[(q, q)];
                    let tau = (aqq - app) / (2.0 * apq);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;

                    h[(p, p)] = app - t * apq;
                    h[(q, q)] = aqq + t * apq;
                    h[(p, q)] = 0.0;
                    h[(q, p)] = 0.0;
                    for i in 0..n {
                        if i != p && i != q {
                            let hip = h[(i, p)];
                            let hiq = h[(i, q)];
                            h[(i, p)] = c * hip - s * hiq;
                            h[(p, i)] = h[(i, p)];
                            h[(i, q)] = s * hip + c * hiq;
                            h[(q, i)] = h[(i, q)];
                        }
                    }
                    for i in 0..n {
                        let vip = v[(i, p)];
                        let viq = v[(i, q)];
                        v[(i, p)] = c * vip - s * viq;
                        v[(i, q)] = s * vip + c * viq;
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| h[(i, i)].partial_cmp(&h[(j, j)]).expect("finite eigenvalues"));
    let values: Vec<f64> = order.iter().map(|&i| h[(i, i)]).collect();
    let vectors = Mat::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok(Eigh { values, vectors })
}

/// Thin singular value decomposition `a = u * diag(sigma) * v^T`.
///
/// `u` is `rows x k` and `v` is `cols x k` with `k = min(rows, cols)`;
/// singular values are sorted descending. Columns of `u` belonging to zero
/// singular values are zero (they are not completed to an orthonormal basis).
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub sigma: Vec<f64>,
    pub v: Mat,
}

const SVD_MAX_SWEEPS: usize = 60;

/// One-sided Jacobi SVD. Columns of a working copy are rotated pairwise
/// until mutually orthogonal; like the eigensolver this resolves small
/// singular values with high relative accuracy.
pub fn svd(a: &Mat) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::Argument("matrix contains non-finite entries".into()));
    }
    if a.rows() < a.cols() {
        // One-sided Jacobi wants a tall matrix; transpose and swap factors.
        let t = svd(&a.transpose())?;
        return Ok(Svd { u: t.v, sigma: t.sigma, v: t.u });
    }
    let (rows, cols) = (a.rows(), a.cols());
    let mut b = a.clone();
    let mut v = Mat::identity(cols);

    let dot = |m: &Mat, p: usize, q: usize| -> f64 {
        (0..rows).map(|i| m[(i, p)] * m[(i, q)]).sum()
    };

    for _sweep in 0..SVD_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols.saturating_sub(1) {
            for q in p + 1..cols {
                let alpha = dot(&b, p, p);
                let beta = dot(&b, q, q);
                let gamma = dot(&b, p, q);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let bip = b[(i, p)];
                    let biq = b[(i, q)];
                    b[(i, p)] = c * bip - s * biq;
                    b[(i, q)] = s * bip + c * biq;
                }
                for i in 0..cols {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<f64> = (0..cols).map(|j| dot(&b, j, j).sqrt()).collect();
    let mut u = Mat::zeros(rows, cols);
    for j in 0..cols {
        if sigma[j] > 0.0 {
            for i in 0..rows {
                u[(i, j)] = b[(i, j)] / sigma[j];
            }
        }
    }

    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).expect("finite singular values"));
    sigma = order.iter().map(|&j| sigma[j]).collect();
    let u = Mat::from_fn(rows, cols, |i, j| u[(i, order[j])]);
    let v = Mat::from_fn(cols, cols, |i, j| v[(i, order[j])]);
    Ok(Svd { u, sigma, v })
}

impl Svd {
    /// Moore-Penrose pseudoinverse, treating singular values at or below
    /// `tau_abs` as zero.
    pub fn pseudoinverse(&self, tau_abs: f64) -> Mat {
        let (rows, k) = (self.u.rows(), self.sigma.len());
        let cols = self.v.rows();
        let mut out = Mat::zeros(cols, rows);
        for j in 0..k {
            if self.sigma[j] > tau_abs {
                let inv = 1.0 / self.sigma[j];
                for r in 0..cols {
                    for c in 0..rows {
                        out[(r, c)] += inv * self.v[(r, j)] * self.u[(c, j)];
                    }
                }
            }
        }
        out
    }

    /// Number of singular values strictly above `tau_abs`.
    pub fn rank_at(&self, tau_abs: f64) -> usize {
        self.sigma.iter().filter(|&&s| s > tau_abs).count()
    }
}

/// Minimum-norm least-squares solution of `a x = b`, with singular values
/// at or below `tau_abs` treated as zero.
pub fn lstsq_min_norm(a: &Mat, b: &[f64], tau_abs: f64) -> Result<Vec<f64>> {
    assert_eq!(a.rows(), b.len(), "lstsq: rhs length mismatch");
    let dec = svd(a)?;
    Ok(dec.pseudoinverse(tau_abs).matvec(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a} (tol {tol})");
    }

    #[test]
    fn eigh_of_diag_2_minus2() {
        let mut a = Mat::zeros(2, 2);
        a[(0, 0)] = 2.0;
        a[(1, 1)] = -2.0;
        let e = jacobi_eigh(&a).unwrap();
        assert_eq!(e.values, vec![-2.0, 2.0]);
        // Eigenvectors are the coordinate axes, up to sign.
        assert_close(e.vectors[(1, 0)].abs(), 1.0, 1e-15);
        assert_close(e.vectors[(0, 1)].abs(), 1.0, 1e-15);
    }

    #[test]
    fn eigh_of_zero_matrix() {
        let e = jacobi_eigh(&Mat::zeros(5, 5)).unwrap();
        assert_eq!(e.values, vec![0.0; 5]);
        assert_eq!(e.vectors, Mat::identity(5));
    }

    #[test]
    fn eigh_reconstructs_input() {
        // Deterministic pseudo-random symmetric matrix.
        let n = 12;
        let mut seed = 42u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let x = next();
                a[(i, j)] = x;
                a[(j, i)] = x;
            }
        }
        let e = jacobi_eigh(&a).unwrap();
        // A = V diag(lambda) V^T
        let mut lam = Mat::zeros(n, n);
        for i in 0..n {
            lam[(i, i)] = e.values[i];
        }
        let recon = e.vectors.matmul(&lam).matmul(&e.vectors.transpose());
        assert!(recon.sub(&a).max_abs() <= 1e-13 * a.frob_norm().max(1.0));
        // Orthonormality of eigenvectors.
        let vtv = e.vectors.transpose().matmul(&e.vectors);
        assert!(vtv.sub(&Mat::identity(n)).max_abs() <= 1e-13);
    }

    #[test]
    fn eigh_rejects_non_square_and_non_finite() {
        assert!(jacobi_eigh(&Mat::zeros(2, 3)).is_err());
        let mut a = Mat::zeros(2, 2);
        a[(0, 0)] = f64::NAN;
        assert!(jacobi_eigh(&a).is_err());
    }

    #[test]
    fn svd_of_rank_one_tall_matrix() {
        // Columns [0,0,0,1] and [0,0,0,1]: sigma = {sqrt(2), 0}.
        let a = Mat::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let d = svd(&a).unwrap();
        assert_close(d.sigma[0], 2.0f64.sqrt(), 1e-15);
        assert_close(d.sigma[1], 0.0, 1e-15);
        assert_eq!(d.rank_at(1e-12), 1);
    }

    #[test]
    fn svd_reconstructs_and_handles_wide_input() {
        let a = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let d = svd(&a).unwrap();
        let mut sig = Mat::zeros(d.sigma.len(), d.sigma.len());
        for i in 0..d.sigma.len() {
            sig[(i, i)] = d.sigma[i];
        }
        let recon = d.u.matmul(&sig).matmul(&d.v.transpose());
        assert!(recon.sub(&a).max_abs() <= 1e-13 * a.frob_norm());
        assert_eq!(d.rank_at(1e-10), 2);
    }

    #[test]
    fn pseudoinverse_satisfies_penrose_identity() {
        let a = Mat::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 2.0],
            vec![1.0, 2.0],
        ])
        .unwrap();
        let pinv = svd(&a).unwrap().pseudoinverse(1e-12);
        let apa = a.matmul(&pinv).matmul(&a);
        assert!(apa.sub(&a).max_abs() <= 1e-12);
    }

    #[test]
    fn lstsq_solves_consistent_overdetermined_system() {
        // x = (1, -2) exactly.
        let a = Mat::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let b = [1.0, -2.0, -1.0];
        let x = lstsq_min_norm(&a, &b, 1e-12).unwrap();
        assert_close(x[0], 1.0, 1e-12);
        assert_close(x[1], -2.0, 1e-12);
    }
}
