//! Phase-one simplex for homogeneous strict sign systems.
//!
//! `sign(B d) = target` has a solution iff `target_i (B d)_i >= 1` does (scale
//! any strict solution up). Free `d` is split as `p - q`, each row gets a
//! surplus and an artificial variable, and the artificial sum is minimized
//! with Bland's rule.

use super::SignVector;
use crate::densecore::Matrix;

const EPS: f64 = 1e-10;

/// A `d` with `sign(b d) = target`, or `None` if the system is infeasible.
pub fn strict_sign_solution(b: &Matrix, target: &SignVector) -> Option<Vec<f64>> {
    let (m, k) = (b.rows(), b.cols());
    assert_eq!(target.len(), m, "target length must equal row count");
    // columns: p[0..k], q[k..2k], surplus[2k..2k+m], artificial[2k+m..2k+2m], rhs
    let nvar = 2 * k + 2 * m;
    let width = nvar + 1;
    let mut t = vec![0.0; m * width];
    for i in 0..m {
        let s = target.signs()[i] as f64;
        let row = &mut t[i * width..(i + 1) * width];
        for j in 0..k {
            row[j] = s * b[(i, j)];
            row[k + j] = -s * b[(i, j)];
        }
        row[2 * k + i] = -1.0;
        row[2 * k + m + i] = 1.0;
        row[nvar] = 1.0;
    }
    let mut basis: Vec<usize> = (0..m).map(|i| 2 * k + m + i).collect();
    // Reduced costs of the phase-one objective (sum of artificials).
    let mut cost = vec![0.0; width];
    for i in 0..m {
        for j in 0..width {
            cost[j] -= t[i * width + j];
        }
    }
    for i in 0..m {
        cost[2 * k + m + i] = 0.0;
    }

    let max_iter = 50 * (nvar + m) + 100;
    for _ in 0..max_iter {
        let Some(enter) = (0..nvar).find(|&j| cost[j] < -EPS) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = t[i * width + enter];
            if a > EPS {
                let ratio = t[i * width + nvar] / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - EPS || (ratio <= lr + EPS && basis[i] < basis[li]) {
                            Some((i, ratio))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
        }
        // Phase one is bounded below by zero, so an entering column always has a pivot row.
        let (row, _) = leave?;
        let piv = t[row * width + enter];
        for j in 0..width {
            t[row * width + j] /= piv;
        }
        for i in 0..m {
            if i != row {
                let f = t[i * width + enter];
                if f != 0.0 {
                    for j in 0..width {
                        t[i * width + j] -= f * t[row * width + j];
                    }
                }
            }
        }
        let f = cost[enter];
        for j in 0..width {
            cost[j] -= f * t[row * width + j];
        }
        basis[row] = enter;
    }

    let infeasibility: f64 = basis
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= 2 * k + m)
        .map(|(i, _)| t[i * width + nvar])
        .sum();
    if infeasibility > 1e-9 {
        return None;
    }
    let mut d = vec![0.0; k];
    for (i, &v) in basis.iter().enumerate() {
        let val = t[i * width + nvar];
        if v < k {
            d[v] += val;
        } else if v < 2 * k {
            d[v - k] -= val;
        }
    }
    Some(d)
}
