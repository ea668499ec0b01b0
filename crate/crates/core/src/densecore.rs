//! Small dense linear algebra: square solves, affine preimages with explicit
//! null-space bases, and condition estimates.
//!
//! Sizes in this crate are at most a few hundred, so everything is plain
//! row-major `f64` with partial pivoting.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative pivot threshold (against the matrix max-abs entry).
pub const PIVOT_TOL: f64 = 1e-12;
/// Residual bound used by callers and tests: `|a v - rhs|_inf <= RESIDUAL_TOL * (1 + |rhs|_inf)`.
pub const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite entry at ({}, {})",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds from nested rows; panics on ragged input (test and literal use).
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Self {
        let rows = columns.first().map_or(0, |c| c.as_ref().len());
        let mut m = Self::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            for (i, &v) in c.as_ref().iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, cols.len());
        for r in 0..self.rows {
            let src = self.row(r);
            for (j, &c) in cols.iter().enumerate() {
                out.data[r * cols.len() + j] = src[c];
            }
        }
        out
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(rows.len(), self.cols);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(r));
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "mul_vec dimension mismatch");
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `self^T v` without materializing the transpose.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "tr_mul_vec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            if vr != 0.0 {
                axpy(vr, self.row(r), &mut out);
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), dst);
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// LU factorization with partial pivoting, `P a = L U`.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Lu> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "LU needs a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let scale = a.max_abs();
        let tol = PIVOT_TOL * scale;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|r| (r, lu[(r, k)].abs()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            if pivot <= tol || pivot == 0.0 {
                return Err(Error::SingularMatrix { column: k, pivot });
            }
            if p != k {
                perm.swap(p, k);
                for c in 0..n {
                    lu.data.swap(k * n + c, p * n + c);
                }
            }
            let diag = lu[(k, k)];
            for r in k + 1..n {
                let f = lu[(r, k)] / diag;
                lu[(r, k)] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        lu.data[r * n + c] -= f * lu.data[k * n + c];
                    }
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for r in 0..n {
            let s: f64 = (0..r).map(|c| self.lu[(r, c)] * x[c]).sum();
            x[r] -= s;
        }
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| self.lu[(r, c)] * x[c]).sum();
            x[r] = (x[r] - s) / self.lu[(r, r)];
        }
        x
    }

    /// Solves `a^T x = rhs`.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        // U^T w = rhs, L^T v = w, x = P^T v
        let mut w = rhs.to_vec();
        for r in 0..n {
            let s: f64 = (0..r).map(|c| self.lu[(c, r)] * w[c]).sum();
            w[r] = (w[r] - s) / self.lu[(r, r)];
        }
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| self.lu[(c, r)] * w[c]).sum();
            w[r] -= s;
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = w[i];
        }
        x
    }
}

/// Solves `a v = rhs` for square `a`.
pub fn solve_square(a: &Matrix, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != a.rows {
        return Err(Error::DimensionMismatch(format!(
            "rhs of length {} for {} rows",
            rhs.len(),
            a.rows
        )));
    }
    Ok(Lu::factor(a)?.solve(rhs))
}

/// A particular solution of `a p = target` plus an orthonormal basis of the
/// null space of `a`. For an `m x (m + delta)` matrix of full row rank the
/// basis has exactly `delta` vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePreimage {
    pub particular: Vec<f64>,
    pub null_basis: Vec<Vec<f64>>,
}

/// Reduces `[a | target]` to reduced row echelon form with partial pivoting.
/// Free columns get a unit value in their own null vector, then the set is
/// orthonormalized.
pub fn preimage_affine(a: &Matrix, target: &[f64]) -> Result<AffinePreimage> {
    let (m, s) = (a.rows, a.cols);
    if target.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "target of length {} for {m} rows",
            target.len()
        )));
    }
    if s < m {
        return Err(Error::RankDeficient {
            rank: s,
            expected: m,
        });
    }
    let tol = PIVOT_TOL * a.max_abs();
    let w = s + 1;
    let mut aug = vec![0.0; m * w];
    for r in 0..m {
        aug[r * w..r * w + s].copy_from_slice(a.row(r));
        aug[r * w + s] = target[r];
    }
    let mut pivot_cols = Vec::with_capacity(m);
    let mut row = 0;
    for col in 0..s {
        if row == m {
            break;
        }
        let (p, best) = (row..m)
            .map(|r| (r, aug[r * w + col].abs()))
            .fold((row, -1.0), |b, c| if c.1 > b.1 { c } else { b });
        if best <= tol || best == 0.0 {
            continue;
        }
        if p != row {
            for c in 0..w {
                aug.swap(row * w + c, p * w + c);
            }
        }
        let d = aug[row * w + col];
        for c in 0..w {
            aug[row * w + c] /= d;
        }
        for r in 0..m {
            if r != row {
                let f = aug[r * w + col];
                if f != 0.0 {
                    for c in 0..w {
                        aug[r * w + c] -= f * aug[row * w + c];
                    }
                }
            }
        }
        pivot_cols.push(col);
        row += 1;
    }
    if pivot_cols.len() < m {
        return Err(Error::RankDeficient {
            rank: pivot_cols.len(),
            expected: m,
        });
    }
    let mut particular = vec![0.0; s];
    for (r, &pc) in pivot_cols.iter().enumerate() {
        particular[pc] = aug[r * w + s];
    }
    let mut is_pivot = vec![false; s];
    for &pc in &pivot_cols {
        is_pivot[pc] = true;
    }
    let raw: Vec<Vec<f64>> = (0..s)
        .filter(|&c| !is_pivot[c])
        .map(|free| {
            let mut v = vec![0.0; s];
            v[free] = 1.0;
            for (r, &pc) in pivot_cols.iter().enumerate() {
                v[pc] = -aug[r * w + free];
            }
            v
        })
        .collect();
    // The unit-assigned vectors can be nearly parallel when the pivot block is
    // ill-conditioned; two Gram-Schmidt passes make them orthonormal.
    let null_basis = orthonormalize(&orthonormalize(&raw, 0.0), 0.0);
    if null_basis.len() != raw.len() {
        return Err(Error::RankDeficient {
            rank: pivot_cols.len(),
            expected: m,
        });
    }
    Ok(AffinePreimage {
        particular,
        null_basis,
    })
}

/// Estimate of the infinity-norm condition number `|a|_inf |a^-1|_inf`,
/// with `|a^-1|_inf` from Hager's estimator applied to `a^-T`.
/// Returns `f64::INFINITY` when the factorization hits a zero pivot.
pub fn condition_estimate(a: &Matrix) -> f64 {
    assert!(a.is_square(), "condition_estimate needs a square matrix");
    let n = a.rows;
    if n == 0 {
        return 1.0;
    }
    let lu = match Lu::factor(a) {
        Ok(lu) => lu,
        Err(_) => return f64::INFINITY,
    };
    // |a^-1|_inf = |a^-T|_1; B = a^-T, B x = solve_transpose(x), B^T x = solve(x).
    let mut x = vec![1.0 / n as f64; n];
    let mut est = 0.0;
    for _ in 0..5 {
        let y = lu.solve_transpose(&x);
        est = y.iter().map(|v| v.abs()).sum::<f64>();
        let xi: Vec<f64> = y
            .iter()
            .map(|&v| if v >= 0.0 { 1.0 } else { -1.0 })
            .collect();
        let z = lu.solve(&xi);
        let (j, zmax) =
            z.iter().enumerate().fold(
                (0, -1.0),
                |b, (i, v)| if v.abs() > b.1 { (i, v.abs()) } else { b },
            );
        if zmax <= dot(&z, &x) {
            break;
        }
        x = vec![0.0; n];
        x[j] = 1.0;
    }
    // Higham's alternating-sign probe guards against the estimator stalling.
    let alt: Vec<f64> = (0..n)
        .map(|i| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            s * (1.0 + i as f64 / (n as f64 - 1.0).max(1.0))
        })
        .collect();
    let ya = lu.solve_transpose(&alt);
    let alt_est = 2.0 * ya.iter().map(|v| v.abs()).sum::<f64>() / (3.0 * n as f64);
    let inv_norm = est.max(alt_est);
    let kappa = a.norm_inf() * inv_norm;
    if kappa.is_finite() {
        kappa.max(1.0)
    } else {
        f64::INFINITY
    }
}

/// Modified Gram-Schmidt; drops vectors whose remainder is below `tol`
/// relative to their original norm.
pub fn orthonormalize(vectors: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let orig = norm2(v);
        if orig == 0.0 {
            continue;
        }
        let mut w = v.clone();
        for q in &out {
            let c = dot(q, &w);
            axpy(-c, q, &mut w);
        }
        let nrm = norm2(&w);
        if nrm > tol * orig {
            w.iter_mut().for_each(|x| *x /= nrm);
            out.push(w);
        }
    }
    out
}

/// Determinant of the Gram matrix of the normalized vectors; 1 for an
/// orthonormal set, 0 for a dependent one.
pub fn normalized_gram_determinant(vectors: &[Vec<f64>]) -> f64 {
    let k = vectors.len();
    if k == 0 {
        return 1.0;
    }
    let normed: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            let n = norm2(v);
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    let mut g = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            g[(i, j)] = dot(&normed[i], &normed[j]);
        }
    }
    determinant(&g)
}

pub fn determinant(a: &Matrix) -> f64 {
    assert!(a.is_square());
    let n = a.rows;
    let mut m = a.clone();
    let mut det = 1.0;
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[(i, k)].abs().total_cmp(&m[(j, k)].abs()))
            .unwrap();
        if m[(p, k)] == 0.0 {
            return 0.0;
        }
        if p != k {
            for c in 0..n {
                m.data.swap(k * n + c, p * n + c);
            }
            det = -det;
        }
        let d = m[(k, k)];
        det *= d;
        for r in k + 1..n {
            let f = m[(r, k)] / d;
            for c in k..n {
                m.data[r * n + c] -= f * m.data[k * n + c];
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(r: &mut rng::Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| r.sample(StandardNormal)).collect();
        Matrix::from_row_major(rows, cols, data).unwrap()
    }

    /// Diagonally dominated random matrix; condition number stays modest.
    fn well_conditioned(r: &mut rng::Rng, n: usize) -> Matrix {
        let mut a = random_matrix(r, n, n);
        for i in 0..n {
            a[(i, i)] += 2.0 * n as f64;
        }
        a
    }

    fn residual_ok(a: &Matrix, v: &[f64], rhs: &[f64]) -> bool {
        let r = sub(&a.mul_vec(v), rhs);
        norm_inf(&r) <= RESIDUAL_TOL * (1.0 + norm_inf(rhs))
    }

    #[test]
    fn identity_solve() {
        let v = solve_square(&Matrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(v, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn diagonal_solve() {
        let v = solve_square(&Matrix::diag(&[2.0, 4.0]), &[2.0, 4.0]).unwrap();
        assert_eq!(v, vec![1.0, 1.0]);
    }

    #[test]
    fn round_trip_10x10() {
        let mut r = rng::seeded(7);
        let a = well_conditioned(&mut r, 10);
        let v: Vec<f64> = (0..10).map(|_| r.sample(StandardNormal)).collect();
        let rhs = a.mul_vec(&v);
        let got = solve_square(&a, &rhs).unwrap();
        for (g, e) in got.iter().zip(&v) {
            assert!((g - e).abs() <= 1e-9, "{g} vs {e}");
        }
    }

    #[test]
    fn singular_is_reported() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        assert!(matches!(
            solve_square(&a, &[1.0, 1.0]),
            Err(Error::SingularMatrix { .. })
        ));
        assert_eq!(condition_estimate(&a), f64::INFINITY);
    }

    #[test]
    fn solve_transpose_matches() {
        let mut r = rng::seeded(3);
        let a = well_conditioned(&mut r, 6);
        let rhs: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let x = Lu::factor(&a).unwrap().solve_transpose(&rhs);
        assert!(residual_ok(&a.transpose(), &x, &rhs));
    }

    #[test]
    fn preimage_coordinate_projection() {
        let a = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let p = preimage_affine(&a, &[3.0, 4.0]).unwrap();
        assert_eq!(p.particular, vec![3.0, 4.0, 0.0]);
        assert_eq!(p.null_basis, vec![vec![0.0, 0.0, 1.0]]);
    }

    #[test]
    fn preimage_square_reduces_to_solve() {
        let mut r = rng::seeded(11);
        let a = well_conditioned(&mut r, 5);
        let t: Vec<f64> = (0..5).map(|_| r.sample(StandardNormal)).collect();
        let p = preimage_affine(&a, &t).unwrap();
        let v = solve_square(&a, &t).unwrap();
        assert!(p.null_basis.is_empty());
        for (x, y) in p.particular.iter().zip(&v) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn preimage_random_3x4_residuals() {
        let mut r = rng::seeded(5);
        let a = random_matrix(&mut r, 3, 4);
        let t = [0.5, -1.0, 2.0];
        let p = preimage_affine(&a, &t).unwrap();
        assert!(residual_ok(&a, &p.particular, &t));
        assert_eq!(p.null_basis.len(), 1);
        assert!(norm_inf(&a.mul_vec(&p.null_basis[0])) <= RESIDUAL_TOL);
    }

    #[test]
    fn preimage_rank_deficient() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]]);
        assert!(matches!(
            preimage_affine(&a, &[1.0, 2.0]),
            Err(Error::RankDeficient {
                rank: 1,
                expected: 2
            })
        ));
    }

    #[test]
    fn condition_identity_and_diagonal() {
        assert_eq!(condition_estimate(&Matrix::identity(4)), 1.0);
        let k = condition_estimate(&Matrix::diag(&[1.0, 1e-8]));
        assert!((1e7..=1e9).contains(&k), "{k}");
    }

    /// Exact infinity-norm condition number through the explicit inverse.
    fn exact_kappa(a: &Matrix) -> f64 {
        let n = a.rows();
        let lu = Lu::factor(a).unwrap();
        let mut inv = Matrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = lu.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        a.norm_inf() * inv.norm_inf()
    }

    #[test]
    fn condition_of_orthogonal_factor() {
        let mut r = rng::seeded(19);
        for _ in 0..20 {
            let a = random_matrix(&mut r, 5, 5);
            let cols: Vec<Vec<f64>> = (0..5).map(|c| a.column(c)).collect();
            let q = Matrix::from_columns(&orthonormalize(&cols, 1e-12));
            let est = condition_estimate(&q);
            let exact = exact_kappa(&q);
            assert!(est <= 100.0, "{est}");
            assert!(
                est <= exact * (1.0 + 1e-12) && est >= exact / 5.0,
                "{est} vs {exact}"
            );
        }
    }

    #[test]
    fn condition_estimate_tracks_exact() {
        let mut r = rng::seeded(23);
        for _ in 0..200 {
            let a = random_matrix(&mut r, 5, 5);
            let est = condition_estimate(&a);
            let exact = exact_kappa(&a);
            assert!(est <= exact * (1.0 + 1e-9), "{est} > {exact}");
            assert!(est >= exact / 10.0, "{est} << {exact}");
        }
    }

    #[test]
    fn residual_sweep() {
        let mut r = rng::seeded(101);
        for trial in 0..10_000 {
            let n = 1 + trial % 20;
            let a = well_conditioned(&mut r, n);
            let rhs: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
            let v = solve_square(&a, &rhs).unwrap();
            assert!(residual_ok(&a, &v, &rhs));
            if n >= 2 {
                let delta = 1 + trial % 3;
                let wide = random_matrix(&mut r, n, n + delta);
                let pre = preimage_affine(&wide, &rhs).unwrap();
                assert!(residual_ok(&wide, &pre.particular, &rhs));
                assert_eq!(pre.null_basis.len(), delta);
                for nv in &pre.null_basis {
                    assert!(norm_inf(&wide.mul_vec(nv)) <= RESIDUAL_TOL * (1.0 + norm_inf(nv)));
                }
                assert!(normalized_gram_determinant(&pre.null_basis) > 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn solve_is_deterministic(seed in any::<u64>(), n in 1usize..12) {
            let mut r = rng::seeded(seed);
            let a = well_conditioned(&mut r, n);
            let rhs: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
            let v1 = solve_square(&a, &rhs).unwrap();
            let v2 = solve_square(&a.clone(), &rhs.clone()).unwrap();
            prop_assert!(v1.iter().zip(&v2).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
