//! Hyperplane arrangements and moving between their cells in few coordinates.
//!
//! `m` hyperplanes `M x + b = 0` in `R^n` cut space into cells named by the
//! sign vector of `M x + b`. If some vector `d` with at most `k` nonzero
//! entries has `sign(M d)` equal to the target cell's sign vector, then
//! `x + c d` lands in that cell for all large enough `c`, so any point can be
//! moved there by changing `k` coordinates. Whether such a `d` exists is a
//! question about which orthants of `R^m` the spans of `k` columns of `M`
//! pass through.

mod coverage;
mod feasibility;
mod pair;

use std::fmt;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::densecore::{preimage_affine, Matrix};
use crate::{rng, Error, Result};

pub use coverage::{coverage_experiment, independence_estimate, CoverageReport};
pub use feasibility::strict_sign_solution;
pub use pair::{orthants_of_pair, orthants_of_pair_witnessed, pair_orthant_bits};

/// Values with magnitude at or below this are treated as lying on a hyperplane.
pub const BOUNDARY_TOL: f64 = 1e-12;
/// `cross_cell` gives up once the scale factor passes this.
pub const MAX_CROSS_SCALE: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperplaneArrangement {
    coeffs: Matrix,
    offsets: Vec<f64>,
}

impl HyperplaneArrangement {
    pub fn new(coeffs: Matrix, offsets: Vec<f64>) -> Result<Self> {
        if coeffs.rows() == 0 || coeffs.cols() == 0 {
            return Err(Error::InvalidArgument(
                "arrangement needs at least one hyperplane and one dimension".into(),
            ));
        }
        if offsets.len() != coeffs.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} offsets for {} hyperplanes",
                offsets.len(),
                coeffs.rows()
            )));
        }
        if let Some(r) = (0..coeffs.rows()).find(|&r| coeffs.row(r).iter().all(|&v| v == 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "hyperplane {r} has all-zero coefficients"
            )));
        }
        Ok(HyperplaneArrangement { coeffs, offsets })
    }

    /// Through the origin (`b = 0`).
    pub fn linear(coeffs: Matrix) -> Result<Self> {
        let m = coeffs.rows();
        Self::new(coeffs, vec![0.0; m])
    }

    pub fn m(&self) -> usize {
        self.coeffs.rows()
    }

    pub fn n(&self) -> usize {
        self.coeffs.cols()
    }

    pub fn coeffs(&self) -> &Matrix {
        &self.coeffs
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// `M x + b`
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.coeffs.mul_vec(x);
        v.iter_mut().zip(&self.offsets).for_each(|(a, b)| *a += b);
        v
    }
}

/// A pattern of `+1` / `-1` entries naming a cell of an arrangement or an
/// orthant of `R^m`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SignVector(Vec<i8>);

impl SignVector {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidArgument(
                "sign entries must be +1 or -1".into(),
            ));
        }
        Ok(SignVector(signs))
    }

    /// Signs of `values`; `None` if any entry is zero or NaN.
    pub fn of(values: &[f64]) -> Option<Self> {
        values
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    Some(1)
                } else if v < 0.0 {
                    Some(-1)
                } else {
                    None
                }
            })
            .collect::<Option<Vec<i8>>>()
            .map(SignVector)
    }

    /// Parses strings like `"+-+"`.
    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '+' => Ok(1),
                '-' => Ok(-1),
                other => Err(Error::InvalidArgument(format!(
                    "bad sign character {other:?}"
                ))),
            })
            .collect::<Result<Vec<i8>>>()
            .map(SignVector)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn signs(&self) -> &[i8] {
        &self.0
    }

    pub fn negated(&self) -> Self {
        SignVector(self.0.iter().map(|s| -s).collect())
    }

    /// Bitmap index: bit `i` set iff entry `i` is `+`. Requires `len <= 64`.
    pub fn to_index(&self) -> u64 {
        assert!(self.0.len() <= 64, "orthant index needs m <= 64");
        self.0.iter().enumerate().fold(
            0u64,
            |acc, (i, &s)| if s > 0 { acc | (1 << i) } else { acc },
        )
    }

    pub fn from_index(index: u64, m: usize) -> Self {
        SignVector(
            (0..m)
                .map(|i| if index >> i & 1 == 1 { 1 } else { -1 })
                .collect(),
        )
    }

    /// Whether `values` has exactly these signs (zeros never match).
    pub fn matches(&self, values: &[f64]) -> bool {
        values.len() == self.0.len()
            && values
                .iter()
                .zip(&self.0)
                .all(|(&v, &s)| (s > 0 && v > 0.0) || (s < 0 && v < 0.0))
    }
}

impl fmt::Display for SignVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.0 {
            f.write_str(if s > 0 { "+" } else { "-" })?;
        }
        Ok(())
    }
}

/// The cell containing `x`.
pub fn cell_of(arr: &HyperplaneArrangement, x: &[f64]) -> Result<SignVector> {
    if x.len() != arr.n() {
        return Err(Error::DimensionMismatch(format!(
            "point of length {} in R^{}",
            x.len(),
            arr.n()
        )));
    }
    let values = arr.evaluate(x);
    if let Some(i) = values.iter().position(|v| v.abs() <= BOUNDARY_TOL) {
        return Err(Error::OnHyperplane(i));
    }
    Ok(SignVector::of(&values).expect("nonzero values"))
}

/// Upper bound on the number of cells of `m` hyperplanes in `R^n`:
/// `sum_{i=0}^{n} C(m, i)`.
pub fn max_cells(m: u64, n: u64) -> Result<u128> {
    let mut total: u128 = 0;
    let mut binom: u128 = 1;
    for i in 0..=n.min(m) {
        if i > 0 {
            // C(m, i) = C(m, i-1) * (m - i + 1) / i, exact at every step.
            binom = binom
                .checked_mul((m - i + 1) as u128)
                .ok_or(Error::Overflow)?
                / i as u128;
        }
        total = total.checked_add(binom).ok_or(Error::Overflow)?;
    }
    Ok(total)
}

/// Number of orthants of `R^m` met by a generic `k`-dimensional linear
/// subspace: `2 * sum_{d=0}^{k-1} C(m-1, d)`.
pub fn orthant_count_formula(m: u64, k: u64) -> Result<u128> {
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k <= m, got k={k}, m={m}"
        )));
    }
    let half = max_cells(m - 1, k - 1)?;
    half.checked_mul(2).ok_or(Error::Overflow)
}

/// Input dimension beyond which a `k`-sparse move between cells is expected
/// to exist: `2^{m/k} / m^{(k-1)/k}`.
pub fn dimension_bound(m: u64, k: u64) -> f64 {
    assert!(k >= 1 && k <= m, "need 1 <= k <= m");
    let (m, k) = (m as f64, k as f64);
    (m / k).exp2() / m.powf((k - 1.0) / k)
}

/// Search limits for [`sparse_direction_with`] when `k >= 3`.
#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    /// Column subsets tried before giving up.
    pub max_subsets: usize,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            max_subsets: 10_000,
            seed: 0,
        }
    }
}

pub fn sparse_direction(
    arr: &HyperplaneArrangement,
    target: &SignVector,
    k: usize,
) -> Result<Option<Vec<f64>>> {
    sparse_direction_with(arr, target, k, SearchOptions::default())
}

/// Finds `d` with at most `k` nonzero entries and `sign(M d) = target`.
///
/// `k = 1` scans columns (and their negations), `k = 2` decides every column
/// pair exactly, `k >= m` tries an invertible `m x m` subsystem first, and
/// other `k` test column subsets with a phase-one feasibility solve, all of
/// them when they fit in the budget and a seeded random sample otherwise.
/// `Ok(None)` means the search found nothing, not that nothing exists.
pub fn sparse_direction_with(
    arr: &HyperplaneArrangement,
    target: &SignVector,
    k: usize,
    opts: SearchOptions,
) -> Result<Option<Vec<f64>>> {
    let (m, n) = (arr.m(), arr.n());
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    if target.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "sign vector of length {} for {m} hyperplanes",
            target.len()
        )));
    }
    let m_mat = arr.coeffs();
    let accept =
        |d: Vec<f64>| -> Option<Vec<f64>> { target.matches(&m_mat.mul_vec(&d)).then_some(d) };

    // Single columns: a line through the origin meets sign(c) and -sign(c).
    for j in 0..n {
        let col = m_mat.column(j);
        for s in [1.0, -1.0] {
            if target.matches(&col.iter().map(|v| s * v).collect::<Vec<_>>()) {
                let mut d = vec![0.0; n];
                d[j] = s;
                return Ok(Some(d));
            }
        }
    }
    if k == 1 {
        return Ok(None);
    }

    if k >= m {
        if let Some(d) = square_subsystem_direction(m_mat, target).and_then(accept) {
            return Ok(Some(d));
        }
    }

    if k == 2 {
        let cols: Vec<Vec<f64>> = (0..n).map(|j| m_mat.column(j)).collect();
        for i in 0..n {
            for j in i + 1..n {
                if let Some((u, v)) = pair::pair_reaches(&cols[i], &cols[j], target) {
                    let mut d = vec![0.0; n];
                    d[i] = u;
                    d[j] = v;
                    if let Some(d) = accept(d) {
                        return Ok(Some(d));
                    }
                }
            }
        }
        return Ok(None);
    }

    let try_subset = |subset: &[usize]| -> Option<Vec<f64>> {
        let sub = m_mat.select_columns(subset);
        let coef = strict_sign_solution(&sub, target)?;
        let mut d = vec![0.0; n];
        for (&j, c) in subset.iter().zip(coef) {
            d[j] = c;
        }
        accept(d)
    };

    match binomial_u128(n as u64, k as u64) {
        Some(count) if count <= opts.max_subsets as u128 => {
            let mut subset: Vec<usize> = (0..k).collect();
            loop {
                if let Some(d) = try_subset(&subset) {
                    return Ok(Some(d));
                }
                if !next_combination(&mut subset, n) {
                    break;
                }
            }
        }
        _ => {
            let mut r = rng::seeded(opts.seed);
            for _ in 0..opts.max_subsets {
                let mut subset = sample(&mut r, n, k).into_vec();
                subset.sort_unstable();
                if let Some(d) = try_subset(&subset) {
                    return Ok(Some(d));
                }
            }
        }
    }
    Ok(None)
}

/// Pivot columns of `M` give an invertible `m x m` block; solving it against
/// the target's `+-1` pattern yields a direction in exactly that orthant.
fn square_subsystem_direction(m_mat: &Matrix, target: &SignVector) -> Option<Vec<f64>> {
    let rhs: Vec<f64> = target.signs().iter().map(|&s| s as f64).collect();
    let pre = preimage_affine(m_mat, &rhs).ok()?;
    Some(pre.particular)
}

fn binomial_u128(n: u64, k: u64) -> Option<u128> {
    let mut b: u128 = 1;
    for i in 1..=k.min(n) {
        b = b.checked_mul((n - i + 1) as u128)? / i as u128;
    }
    Some(if k > n { 0 } else { b })
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Moves `x` along `d` (whose image `M d` has the target signs) by doubling
/// the scale from 1 until the target cell is reached.
pub fn cross_cell(
    arr: &HyperplaneArrangement,
    x: &[f64],
    target: &SignVector,
    d: &[f64],
) -> Result<Vec<f64>> {
    if x.len() != arr.n() || d.len() != arr.n() {
        return Err(Error::DimensionMismatch(
            "point/direction length differs from n".into(),
        ));
    }
    if !target.matches(&arr.coeffs().mul_vec(d)) {
        return Err(Error::InvalidArgument(
            "direction does not map into the target orthant".into(),
        ));
    }
    let mut c = 1.0;
    while c <= MAX_CROSS_SCALE {
        let y: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + c * di).collect();
        if let Ok(cell) = cell_of(arr, &y) {
            if &cell == target {
                return Ok(y);
            }
        }
        c *= 2.0;
    }
    Err(Error::NoConvergence(MAX_CROSS_SCALE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_arrangement(seed: u64, m: usize, n: usize) -> HyperplaneArrangement {
        let mut r = rng::seeded(seed);
        let data = (0..m * n).map(|_| r.sample(StandardNormal)).collect();
        let offsets = (0..m).map(|_| r.sample(StandardNormal)).collect();
        HyperplaneArrangement::new(Matrix::from_row_major(m, n, data).unwrap(), offsets).unwrap()
    }

    fn hamming(a: &[f64], b: &[f64]) -> usize {
        a.iter().zip(b).filter(|(x, y)| x != y).count()
    }

    #[test]
    fn identity_cell() {
        let arr = HyperplaneArrangement::linear(Matrix::identity(2)).unwrap();
        assert_eq!(cell_of(&arr, &[1.0, -1.0]).unwrap().to_string(), "+-");
        assert!(matches!(
            cell_of(&arr, &[0.0, 1.0]),
            Err(Error::OnHyperplane(0))
        ));
    }

    #[test]
    fn rejects_zero_rows() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]);
        assert!(HyperplaneArrangement::linear(m).is_err());
    }

    #[test]
    fn cell_of_agrees_with_per_row_signs() {
        let arr = random_arrangement(2, 5, 8);
        let mut r = rng::seeded(3);
        for _ in 0..100 {
            let x: Vec<f64> = (0..8).map(|_| r.sample(StandardNormal)).collect();
            let cell = cell_of(&arr, &x).unwrap();
            for i in 0..5 {
                let row = arr.coeffs().row(i);
                let v: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + arr.offsets()[i];
                assert_eq!(cell.signs()[i], if v > 0.0 { 1 } else { -1 });
            }
            assert_eq!(cell_of(&arr, &x).unwrap(), cell);
        }
    }

    #[test]
    fn max_cells_values() {
        assert_eq!(max_cells(20, 20).unwrap(), 1_048_576);
        assert_eq!(max_cells(20, 25).unwrap(), 1_048_576);
        assert_eq!(max_cells(3, 2).unwrap(), 7);
        assert_eq!(max_cells(20, 2).unwrap(), 211);
        assert_eq!(max_cells(0, 0).unwrap(), 1);
        assert_eq!(max_cells(100, 100).unwrap(), 1u128 << 100);
        assert!(matches!(max_cells(200, 200), Err(Error::Overflow)));
    }

    #[test]
    fn count_formula() {
        for m in 1..=64 {
            assert_eq!(orthant_count_formula(m, 1).unwrap(), 2);
        }
        for m in 2..=64 {
            assert_eq!(orthant_count_formula(m, 2).unwrap(), 2 * m as u128);
        }
        assert_eq!(orthant_count_formula(20, 2).unwrap(), 40);
        assert_eq!(orthant_count_formula(5, 3).unwrap(), 22);
        assert_eq!(orthant_count_formula(5, 5).unwrap(), 32);
        assert!(orthant_count_formula(3, 4).is_err());
    }

    #[test]
    fn dimension_bound_values() {
        for m in 1..=30 {
            assert_eq!(dimension_bound(m, 1), (m as f64).exp2());
        }
        let b = dimension_bound(20, 2);
        assert!((b - 1024.0 / 20f64.sqrt()).abs() < 1e-9 && (225.0..=235.0).contains(&b));
        for m in 2..=30 {
            for k in 1..m {
                assert!(
                    dimension_bound(m, k + 1) < dimension_bound(m, k),
                    "m={m} k={k}"
                );
            }
        }
    }

    #[test]
    fn single_column_direction() {
        let m = Matrix::from_rows(&[[0.5, 1.0], [0.5, -1.0], [0.5, 2.0]]);
        let arr = HyperplaneArrangement::linear(m).unwrap();
        let target = SignVector::parse("+-+").unwrap();
        assert_eq!(
            sparse_direction(&arr, &target, 1).unwrap(),
            Some(vec![0.0, 1.0])
        );
        let neg = SignVector::parse("-+-").unwrap();
        assert_eq!(
            sparse_direction(&arr, &neg, 1).unwrap(),
            Some(vec![0.0, -1.0])
        );
        let none = SignVector::parse("++-").unwrap();
        assert_eq!(sparse_direction(&arr, &none, 1).unwrap(), None);
    }

    #[test]
    fn pair_direction_matches_span_membership() {
        let g = [1.0, 1.0, 1.0];
        let h = [1.0, -1.0, 2.0];
        let arr = HyperplaneArrangement::linear(Matrix::from_columns(&[g, h])).unwrap();
        let reachable = orthants_of_pair(&g, &h).unwrap();
        for idx in 0..8u64 {
            let target = SignVector::from_index(idx, 3);
            let d = sparse_direction(&arr, &target, 2).unwrap();
            assert_eq!(d.is_some(), reachable.contains(&target), "{target}");
            if let Some(d) = d {
                assert!(target.matches(&arr.coeffs().mul_vec(&d)));
            }
        }
        // (u, v) = (0, -1) gives (-1, 1, -2)
        let target = SignVector::parse("-+-").unwrap();
        let mc = crate::oracle::mc_orthant_sample(&[g.to_vec(), h.to_vec()], 100_000, 9);
        assert_eq!(
            sparse_direction(&arr, &target, 2).unwrap().is_some(),
            mc.contains(&target)
        );
    }

    #[test]
    fn full_budget_always_succeeds() {
        let mut r = rng::seeded(41);
        for trial in 0..50 {
            let arr = random_arrangement(100 + trial, 6, 9);
            let target = SignVector::from_index(r.random_range(0..64), 6);
            let d = sparse_direction(&arr, &target, 6)
                .unwrap()
                .expect("k = m succeeds");
            assert!(target.matches(&arr.coeffs().mul_vec(&d)));
            assert!(d.iter().filter(|v| **v != 0.0).count() <= 6);
        }
    }

    #[test]
    fn lp_search_for_k3() {
        let arr = random_arrangement(8, 7, 12);
        let mut found = 0;
        for idx in 0..128u64 {
            let target = SignVector::from_index(idx, 7);
            if let Some(d) = sparse_direction(&arr, &target, 3).unwrap() {
                assert!(d.iter().filter(|v| **v != 0.0).count() <= 3);
                assert!(target.matches(&arr.coeffs().mul_vec(&d)));
                found += 1;
            }
        }
        assert!(found > 0);
    }

    #[test]
    fn cross_cell_coordinate_arrangement() {
        let arr = HyperplaneArrangement::linear(Matrix::identity(2)).unwrap();
        let target = SignVector::parse("--").unwrap();
        let y = cross_cell(&arr, &[1.0, 1.0], &target, &[-1.0, -1.0]).unwrap();
        // c = 1 lands on both hyperplanes, c = 2 is the first scale inside
        assert_eq!(y, vec![-1.0, -1.0]);
    }

    #[test]
    fn cross_cell_already_inside() {
        let arr = HyperplaneArrangement::linear(Matrix::identity(2)).unwrap();
        let target = SignVector::parse("+-").unwrap();
        let y = cross_cell(&arr, &[1.0, -1.0], &target, &[0.1, -0.1]).unwrap();
        assert_eq!(cell_of(&arr, &y).unwrap(), target);
    }

    #[test]
    fn cross_cell_rejects_bad_direction() {
        let arr = HyperplaneArrangement::linear(Matrix::identity(2)).unwrap();
        let target = SignVector::parse("--").unwrap();
        assert!(cross_cell(&arr, &[1.0, 1.0], &target, &[1.0, -1.0]).is_err());
    }

    #[test]
    fn sparse_crossing_end_to_end() {
        let arr = random_arrangement(77, 10, 50);
        let mut r = rng::seeded(78);
        let mut successes = 0;
        for _ in 0..40 {
            let x: Vec<f64> = (0..50).map(|_| r.sample(StandardNormal)).collect();
            let target = SignVector::from_index(r.random_range(0..1024), 10);
            if let Some(d) = sparse_direction(&arr, &target, 2).unwrap() {
                let y = cross_cell(&arr, &x, &target, &d).unwrap();
                assert_eq!(cell_of(&arr, &y).unwrap(), target);
                assert!(hamming(&x, &y) <= 2);
                successes += 1;
            }
        }
        assert!(successes > 10, "{successes}");
    }

    #[test]
    fn sign_vector_index_round_trip() {
        for idx in [0u64, 1, 5, 1023] {
            assert_eq!(SignVector::from_index(idx, 10).to_index(), idx);
        }
        assert_eq!(SignVector::parse("+-").unwrap().to_index(), 1);
    }
}
