//! Orthants of `R^m` crossed by the plane spanned by two vectors.
//!
//! Write a span point as `u g + v h`. For `v != 0` its `i`-th entry is
//! `v g_i (u/v + h_i/g_i)`, so as the ratio `u/v` sweeps the real line the
//! sign of row `i` flips exactly once, at `u/v = -h_i/g_i`. With distinct
//! ratios that gives `m + 1` sign patterns for each sign of `v`. The two
//! outermost intervals of both branches give `sign(g)` and `sign(-g)`, so
//! they are counted twice and the plane meets exactly `2m` orthants.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use super::SignVector;
use crate::{Error, Result};

/// Relative tolerance under which two critical ratios count as equal.
const RATIO_TOL: f64 = 1e-12;

fn critical_points(g: &[f64], h: &[f64]) -> Result<Vec<(f64, usize)>> {
    if g.len() != h.len() || g.is_empty() {
        return Err(Error::DegeneratePair(format!(
            "vectors of lengths {} and {}",
            g.len(),
            h.len()
        )));
    }
    if let Some(i) = g.iter().zip(h).position(|(a, b)| *a == 0.0 || *b == 0.0) {
        return Err(Error::DegeneratePair(format!("zero entry in row {i}")));
    }
    // Sign of row i flips where u/v = -h_i / g_i.
    let mut crit: Vec<(f64, usize)> = g
        .iter()
        .zip(h)
        .enumerate()
        .map(|(i, (a, b))| (-b / a, i))
        .collect();
    crit.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in crit.windows(2) {
        let (a, b) = (w[0].0, w[1].0);
        if (b - a).abs() <= RATIO_TOL * a.abs().max(b.abs()).max(1.0) {
            return Err(Error::DegeneratePair(format!(
                "rows {} and {} share the critical ratio {a}",
                w[0].1, w[1].1
            )));
        }
    }
    Ok(crit)
}

/// The `2m` orthants met by `span(g, h)`, each with a witness `(u, v)` such
/// that `u g + v h` lies strictly inside it.
pub fn orthants_of_pair_witnessed(g: &[f64], h: &[f64]) -> Result<Vec<(SignVector, (f64, f64))>> {
    let crit = critical_points(g, h)?;
    let m = crit.len();
    let first = crit[0].0;
    let last = crit[m - 1].0;
    let mut probes = Vec::with_capacity(m + 1);
    probes.push(first - 1.0 - first.abs());
    for w in crit.windows(2) {
        probes.push(0.5 * (w[0].0 + w[1].0));
    }
    probes.push(last + 1.0 + last.abs());

    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(2 * m);
    for v in [1.0, -1.0] {
        for &ratio in &probes {
            let u = ratio * v;
            let point: Vec<f64> = g.iter().zip(h).map(|(a, b)| u * a + v * b).collect();
            let signs = SignVector::of(&point).unwrap_or_else(|| {
                // Cancellation produced an exact zero; read the sign from the
                // factored form v * g_i * (ratio - critical_i) instead.
                let mut s = vec![0i8; m];
                for &(c, i) in &crit {
                    let positive = ((v > 0.0) == (g[i] > 0.0)) == (ratio > c);
                    s[i] = if positive { 1 } else { -1 };
                }
                SignVector::new(s).expect("nonzero signs")
            });
            if seen.insert(signs.clone()) {
                out.push((signs, (u, v)));
            }
        }
    }
    Ok(out)
}

pub fn orthants_of_pair(g: &[f64], h: &[f64]) -> Result<BTreeSet<SignVector>> {
    Ok(orthants_of_pair_witnessed(g, h)?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

/// Bitmap indices (bit `i` set iff row `i` is positive) of the orthants met
/// by `span(g, h)`, appended to `out` by walking the sorted flip points.
///
/// Zero entries are replaced by the smallest positive double and tied
/// critical ratios are ordered by row index, which is the limit of an
/// infinitesimal perturbation; returns `true` when either was needed.
/// Requires `m <= 63`.
pub fn pair_orthant_bits(
    g: &[f64],
    h: &[f64],
    scratch: &mut Vec<(f64, u32)>,
    out: &mut Vec<u64>,
) -> bool {
    let m = g.len();
    debug_assert!(m <= 63 && h.len() == m);
    let mask = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
    let mut degenerate = false;
    scratch.clear();
    let mut start = 0u64;
    for i in 0..m {
        let (mut a, mut b) = (g[i], h[i]);
        if a == 0.0 {
            a = f64::MIN_POSITIVE;
            degenerate = true;
        }
        if b == 0.0 {
            b = f64::MIN_POSITIVE;
            degenerate = true;
        }
        // ratio -> -inf with v > 0: sign(v g_i (ratio + h_i/g_i)) = -sign(g_i)
        if a < 0.0 {
            start |= 1 << i;
        }
        scratch.push((-b / a, i as u32));
    }
    scratch.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    if scratch.windows(2).any(|w| w[0].0 == w[1].0) {
        degenerate = true;
    }
    let mut cur = start;
    for &(_, i) in scratch.iter() {
        out.push(cur);
        out.push(!cur & mask);
        cur ^= 1 << i;
    }
    degenerate
}

/// Coefficients `(u, v)` with `sign(u g + v h) = target`, if the plane
/// reaches that orthant. Works for arbitrary entries, zeros included.
///
/// Each row asks for `w . a_i > 0` with `a_i = target_i (g_i, h_i)`, an open
/// half-circle of directions `w`. Their intersection, when nonempty, is one
/// of the arcs between consecutive half-circle endpoints, so probing the
/// middle of every such arc decides feasibility.
pub(crate) fn pair_reaches(g: &[f64], h: &[f64], target: &SignVector) -> Option<(f64, f64)> {
    let rows: Vec<(f64, f64)> = target
        .signs()
        .iter()
        .zip(g.iter().zip(h))
        .map(|(&s, (&a, &b))| (s as f64 * a, s as f64 * b))
        .collect();
    if rows.iter().any(|&(a, b)| a == 0.0 && b == 0.0) {
        return None;
    }
    let feasible = |w: (f64, f64)| rows.iter().all(|&(a, b)| a * w.0 + b * w.1 > 0.0);
    let mut ends: Vec<f64> = Vec::with_capacity(2 * rows.len());
    for &(a, b) in &rows {
        let theta = b.atan2(a);
        for e in [theta - PI / 2.0, theta + PI / 2.0] {
            ends.push(e.rem_euclid(2.0 * PI));
        }
    }
    ends.sort_by(f64::total_cmp);
    let k = ends.len();
    for i in 0..k {
        let lo = ends[i];
        let hi = if i + 1 < k {
            ends[i + 1]
        } else {
            ends[0] + 2.0 * PI
        };
        if hi - lo <= 0.0 {
            continue;
        }
        let phi = 0.5 * (lo + hi);
        let w = (phi.cos(), phi.sin());
        if feasible(w) {
            return Some(w);
        }
    }
    None
}
