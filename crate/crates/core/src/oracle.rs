//! Brute-force checks that share no code paths with the fast implementations
//! beyond the forward pass: region enumeration by sampling, central finite
//! differences and Monte-Carlo span sampling.

use std::collections::{BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arrangement::SignVector;
use crate::densecore::Matrix;
use crate::relunet::{
    local_affine_map, ActivationPattern, DenseLayer, InputSubset, LocalAffineMap, MlpNetwork,
};
use crate::{rng, Error, Result};

pub const DEFAULT_FD_STEP: f64 = 1e-6;
pub const DEFAULT_BOX_RADIUS: f64 = 10.0;
/// Enumeration keeps patterns in a hash map; beyond this many units the
/// catalog stops being a meaningful sample.
pub const MAX_ENUMERATION_UNITS: usize = 20;

#[derive(Debug, Clone)]
pub struct RegionEntry {
    pub pattern: ActivationPattern,
    pub witness: Vec<f64>,
    pub affine: LocalAffineMap,
}

#[derive(Debug, Clone, Default)]
pub struct RegionCatalog {
    pub entries: Vec<RegionEntry>,
}

impl RegionCatalog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, pattern: &ActivationPattern) -> Option<&RegionEntry> {
        self.entries.iter().find(|e| &e.pattern == pattern)
    }
}

/// Samples `samples` points uniformly from `[-box_radius, box_radius]^n` and
/// records each distinct activation pattern with its first witness and the
/// full-input affine map there. Points on a boundary are skipped.
pub fn enumerate_regions(
    net: &MlpNetwork,
    box_radius: f64,
    samples: usize,
    seed: u64,
) -> Result<RegionCatalog> {
    if net.relu_count() > MAX_ENUMERATION_UNITS {
        return Err(Error::InvalidArgument(format!(
            "region enumeration supports at most {MAX_ENUMERATION_UNITS} units, network has {}",
            net.relu_count()
        )));
    }
    let n = net.input_dim();
    let all = InputSubset::all(n);
    let mut r = rng::seeded(seed);
    let mut seen: HashMap<ActivationPattern, usize> = HashMap::new();
    let mut catalog = RegionCatalog::default();
    for _ in 0..samples {
        let x: Vec<f64> = (0..n)
            .map(|_| r.random_range(-box_radius..=box_radius))
            .collect();
        let eval = net.evaluate(&x)?;
        if eval.boundary_unit().is_some() {
            continue;
        }
        let pattern = eval.pattern();
        if seen.contains_key(&pattern) {
            continue;
        }
        let affine = local_affine_map(net, &x, &all)?;
        seen.insert(pattern.clone(), catalog.entries.len());
        catalog.entries.push(RegionEntry {
            pattern,
            witness: x,
            affine,
        });
    }
    Ok(catalog)
}

/// Central differences in the subset coordinates. Fails if any probe lands
/// in a different activation region than `x`.
pub fn fd_jacobian(net: &MlpNetwork, x: &[f64], subset: &InputSubset, h: f64) -> Result<Matrix> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {h}"
        )));
    }
    let base = net.evaluate(x)?;
    if let Some(u) = base.boundary_unit() {
        return Err(Error::OnBoundary {
            layer: u.layer,
            unit: u.index,
        });
    }
    let pattern = base.pattern();
    let mut jac = Matrix::zeros(net.output_dim(), subset.len());
    for (j, &i) in subset.indices().iter().enumerate() {
        let mut xp = x.to_vec();
        xp[i] += h;
        let mut xm = x.to_vec();
        xm[i] -= h;
        let ep = net.evaluate(&xp)?;
        let em = net.evaluate(&xm)?;
        if ep.pattern() != pattern || em.pattern() != pattern {
            return Err(Error::BoundaryTooClose(j));
        }
        for k in 0..net.output_dim() {
            jac[(k, j)] = (ep.output[k] - em.output[k]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Sign vectors of `sum_j c_j v_j` for standard normal `c`, resampling any
/// draw with a zero component.
pub fn mc_orthant_sample(vectors: &[Vec<f64>], samples: usize, seed: u64) -> BTreeSet<SignVector> {
    assert!(!vectors.is_empty(), "need at least one vector");
    let m = vectors[0].len();
    let mut r = rng::seeded(seed);
    let mut out = BTreeSet::new();
    let mut point = vec![0.0; m];
    for _ in 0..samples {
        // a zero component has probability zero unless the vectors force it
        for _attempt in 0..16 {
            point.iter_mut().for_each(|p| *p = 0.0);
            for v in vectors {
                let c: f64 = r.sample(StandardNormal);
                for (p, &vi) in point.iter_mut().zip(v) {
                    *p += c * vi;
                }
            }
            if let Some(s) = SignVector::of(&point) {
                out.insert(s);
                break;
            }
        }
    }
    out
}

/// Signature of [`local_affine_map`], so the suite can be pointed at another
/// implementation.
pub type LocalMapFn = fn(&MlpNetwork, &[f64], &InputSubset) -> Result<LocalAffineMap>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: usize,
    pub failed: usize,
    /// First failure, if any.
    pub detail: Option<String>,
}

impl CheckOutcome {
    fn new(name: &str) -> Self {
        CheckOutcome {
            name: name.into(),
            passed: 0,
            failed: 0,
            detail: None,
        }
    }

    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
            if self.detail.is_none() {
                self.detail = Some(detail());
            }
        }
    }

    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

/// Random network with He-scaled weights and `N(0, 0.25)` biases, the
/// generator used for the tiny-net checks.
pub fn random_network(dims: &[usize], seed: u64) -> MlpNetwork {
    let mut r = rng::seeded(seed);
    let layers = dims
        .windows(2)
        .map(|w| {
            let scale = (2.0 / w[0] as f64).sqrt();
            let data = (0..w[0] * w[1])
                .map(|_| scale * r.sample::<f64, _>(StandardNormal))
                .collect();
            let biases = (0..w[1])
                .map(|_| 0.5 * r.sample::<f64, _>(StandardNormal))
                .collect();
            DenseLayer::new(
                Matrix::from_row_major(w[1], w[0], data).expect("sizes match"),
                biases,
            )
            .expect("sizes match")
        })
        .collect();
    MlpNetwork::new(layers).expect("layers chain")
}

/// Compares `local_map` with finite differences and with exact affinity at
/// `points` random inputs; points too close to a boundary are redrawn.
#[allow(clippy::too_many_arguments)]
fn check_local_maps(
    net: &MlpNetwork,
    subset: &InputSubset,
    points: usize,
    draw: &mut dyn FnMut(&mut rng::Rng) -> Vec<f64>,
    r: &mut rng::Rng,
    local_map: LocalMapFn,
    jac: &mut CheckOutcome,
    affine: &mut CheckOutcome,
) -> Result<()> {
    let mut done = 0;
    let mut attempts = 0;
    while done < points && attempts < 100 * points {
        attempts += 1;
        let x = draw(r);
        let fd = match fd_jacobian(net, &x, subset, DEFAULT_FD_STEP) {
            Ok(j) => j,
            Err(Error::BoundaryTooClose(_) | Error::OnBoundary { .. }) => continue,
            Err(e) => return Err(e),
        };
        let map = local_map(net, &x, subset)?;
        let worst = (0..fd.rows())
            .flat_map(|i| (0..fd.cols()).map(move |j| (i, j)))
            .map(|(i, j)| (fd[(i, j)] - map.a[(i, j)]).abs())
            .fold(0.0, f64::max);
        jac.record(worst <= 1e-4, || {
            format!(
                "Jacobian mismatch {worst:e} at a {}-unit network",
                net.relu_count()
            )
        });

        let pattern = net.evaluate(&x)?.pattern();
        for _ in 0..5 {
            let mut probe = x.clone();
            for &i in subset.indices() {
                probe[i] += 1e-7 * r.sample::<f64, _>(StandardNormal);
            }
            let eval = net.evaluate(&probe)?;
            if eval.pattern() != pattern {
                continue;
            }
            let got = map.apply(&subset.gather(&probe));
            let err = got
                .iter()
                .zip(&eval.output)
                .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
                .fold(0.0, f64::max);
            affine.record(err <= 1e-10, || {
                format!("local map off by {err:e} inside its region")
            });
        }
        done += 1;
    }
    Ok(())
}

/// The invariant suite behind the `verify` command: local maps against finite
/// differences and exact affinity on `trials` random tiny networks (and on
/// `extra` if given), region catalogs re-verified at their witnesses, and the
/// two-column orthant enumeration against Monte-Carlo sampling.
pub fn run_suite(
    extra: Option<&MlpNetwork>,
    trials: usize,
    seed: u64,
    local_map: LocalMapFn,
) -> Result<Vec<CheckOutcome>> {
    let mut jac = CheckOutcome::new("jacobian");
    let mut affine = CheckOutcome::new("affinity");
    let mut regions = CheckOutcome::new("regions");
    let mut orthants = CheckOutcome::new("orthants");
    let mut r = rng::seeded(seed);

    for trial in 0..trials {
        let net = random_network(&[20, 16, 3], seed.wrapping_add(trial as u64));
        let subset = InputSubset::new(sample(&mut r, 20, 4).into_vec(), 20)?;
        let mut draw = |g: &mut rng::Rng| {
            (0..20)
                .map(|_| g.sample::<f64, _>(StandardNormal))
                .collect()
        };
        check_local_maps(
            &net,
            &subset,
            3,
            &mut draw,
            &mut r,
            local_map,
            &mut jac,
            &mut affine,
        )?;

        let small = random_network(&[5, 8, 2], seed.wrapping_add(1_000_000 + trial as u64));
        let catalog = enumerate_regions(&small, DEFAULT_BOX_RADIUS, 5_000, r.random())?;
        let all = InputSubset::all(5);
        for e in &catalog.entries {
            let map = local_map(&small, &e.witness, &all)?;
            let out = small.forward(&e.witness)?;
            let err = map
                .apply(&e.witness)
                .iter()
                .zip(&out)
                .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
                .fold(0.0, f64::max);
            regions.record(catalog.len() <= 1 << 8 && err <= 1e-10, || {
                format!(
                    "catalog of {} patterns, witness error {err:e}",
                    catalog.len()
                )
            });
        }

        let m = 3 + trial % 6;
        let g: Vec<f64> = (0..m).map(|_| r.sample(StandardNormal)).collect();
        let h: Vec<f64> = (0..m).map(|_| r.sample(StandardNormal)).collect();
        let exact = crate::arrangement::orthants_of_pair(&g, &h)?;
        let sampled = mc_orthant_sample(&[g, h], 2_000, r.random());
        orthants.record(exact.len() == 2 * m && sampled.is_subset(&exact), || {
            format!(
                "m={m}: {} orthants enumerated, sampling found {} outside",
                exact.len(),
                sampled.difference(&exact).count()
            )
        });
    }

    if let Some(net) = extra {
        let n = net.input_dim();
        let size = (net.output_dim() + 1).min(n);
        let subset = InputSubset::new(sample(&mut r, n, size).into_vec(), n)?;
        let mut draw = |g: &mut rng::Rng| (0..n).map(|_| g.random::<f64>()).collect();
        check_local_maps(
            net,
            &subset,
            trials.max(1),
            &mut draw,
            &mut r,
            local_map,
            &mut jac,
            &mut affine,
        )?;
    }
    Ok(vec![jac, affine, regions, orthants])
}
