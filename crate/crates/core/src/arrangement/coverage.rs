//! How many of the `2^m` orthants are reachable with `k`-sparse directions for
//! a random `m x n` coefficient matrix.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{orthant_count_formula, pair::pair_orthant_bits};
use crate::{rng, Error, Result};

/// Largest `m` the orthant bitmap supports (2^24 bits = 2 MiB per worker).
pub const MAX_COVERAGE_M: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub covered: u64,
    pub total: u64,
    pub fraction: f64,
    /// Coverage expected if every `k`-subset hit its orthants independently.
    pub independence_estimate: f64,
    pub elapsed_seconds: f64,
    /// Pairs that needed a zero-entry or tied-ratio perturbation.
    pub degenerate_pairs: u64,
}

/// `1 - (1 - q / 2^m)^{C(n, k)}` with `q` orthants per `k`-subset.
pub fn independence_estimate(m: usize, n: usize, k: usize) -> f64 {
    let per_subset = orthant_count_formula(m as u64, k as u64).map_or(0.0, |q| q as f64);
    let p = per_subset / (m as f64).exp2();
    let subsets = (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    if p >= 1.0 {
        return 1.0;
    }
    1.0 - (subsets * (-p).ln_1p()).exp()
}

/// Draws an `m x n` standard normal matrix and marks every orthant crossed by
/// a single column (`k = 1`, the column and its negation) or by the span of a
/// column pair (`k = 2`). Workers own private bitmaps merged by OR, so the
/// result does not depend on the thread count.
pub fn coverage_experiment(m: usize, n: usize, k: usize, seed: u64) -> Result<CoverageReport> {
    if m == 0 || m > MAX_COVERAGE_M {
        return Err(Error::InvalidArgument(format!(
            "coverage needs 1 <= m <= {MAX_COVERAGE_M}, got {m}"
        )));
    }
    if !(k == 1 || k == 2) {
        return Err(Error::InvalidArgument(format!(
            "coverage supports k in {{1, 2}}, got {k}"
        )));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "need n >= k, got n={n}, k={k}"
        )));
    }
    let started = Instant::now();
    let mut r = rng::seeded(seed);
    // Row-major draw; stored by column for the pair sweep.
    let mut columns = vec![vec![0.0f64; m]; n];
    for i in 0..m {
        for col in columns.iter_mut() {
            col[i] = r.sample(StandardNormal);
        }
    }

    let total: u64 = 1 << m;
    let words = (total as usize).div_ceil(64);
    let mask = total - 1;
    let workers = rayon::current_num_threads().max(1).min(n);

    let partials: Vec<(Vec<u64>, u64)> = (0..workers)
        .into_par_iter()
        .map(|w| {
            let mut bitmap = vec![0u64; words];
            let mut degenerate = 0u64;
            let mut mark = |idx: u64| bitmap[(idx >> 6) as usize] |= 1 << (idx & 63);
            if k == 1 {
                for col in columns.iter().skip(w).step_by(workers) {
                    let mut idx = 0u64;
                    let mut zero = false;
                    for (i, &v) in col.iter().enumerate() {
                        if v > 0.0 {
                            idx |= 1 << i;
                        }
                        zero |= v == 0.0;
                    }
                    degenerate += zero as u64;
                    mark(idx);
                    mark(!idx & mask);
                }
            } else {
                let mut scratch = Vec::with_capacity(m);
                let mut bits = Vec::with_capacity(2 * m);
                for i in (w..n).step_by(workers) {
                    for j in i + 1..n {
                        bits.clear();
                        if pair_orthant_bits(&columns[i], &columns[j], &mut scratch, &mut bits) {
                            degenerate += 1;
                        }
                        for &b in &bits {
                            mark(b);
                        }
                    }
                }
            }
            (bitmap, degenerate)
        })
        .collect();

    let mut bitmap = vec![0u64; words];
    let mut degenerate_pairs = 0;
    for (part, d) in partials {
        for (a, b) in bitmap.iter_mut().zip(part) {
            *a |= b;
        }
        degenerate_pairs += d;
    }
    let covered: u64 = bitmap.iter().map(|w| w.count_ones() as u64).sum();
    Ok(CoverageReport {
        m,
        n,
        k,
        seed,
        covered,
        total,
        fraction: covered as f64 / total as f64,
        independence_estimate: independence_estimate(m, n, k),
        elapsed_seconds: started.elapsed().as_secs_f64(),
        degenerate_pairs,
    })
}
