use std::collections::BTreeMap;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::follow::{default_eps_target, follow_with_trace};
use super::{build_path, AttackConfig, AttackResult, FailureKind};
use crate::dataio::LabeledDataset;
use crate::densecore::{norm_inf, sub};
use crate::relunet::{select_pixels, InputSubset, MlpNetwork};
use crate::{rng, Error, Result};

/// Restarts run in fixed-size batches; the progress watermark used to drop
/// laggards only changes between batches, so results do not depend on the
/// thread count or on scheduling.
pub const RESTART_BATCH: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubsetMode {
    /// Coordinates with the largest standard deviation over a dataset.
    LargestStd,
    UserList(Vec<usize>),
    /// Uniformly random, drawn from the attack seed.
    Random,
}

pub fn resolve_subset(
    mode: &SubsetMode,
    size: usize,
    n: usize,
    data: Option<&LabeledDataset>,
    seed: u64,
) -> Result<InputSubset> {
    if size > n {
        return Err(Error::InvalidArgument(format!(
            "cannot free {size} of {n} coordinates"
        )));
    }
    match mode {
        SubsetMode::LargestStd => {
            let data = data.ok_or_else(|| {
                Error::InvalidArgument("largest-std subset needs a dataset".into())
            })?;
            select_pixels(data, size)
        }
        SubsetMode::UserList(idx) => {
            if idx.len() != size {
                return Err(Error::InvalidArgument(format!(
                    "subset lists {} coordinates, expected {size}",
                    idx.len()
                )));
            }
            InputSubset::new(idx.clone(), n)
        }
        SubsetMode::Random => {
            InputSubset::new(sample(&mut rng::seeded(seed), n, size).into_vec(), n)
        }
    }
}

/// Index of the sample of `class` that `net` classifies correctly with the
/// largest logit margin; the first such sample on ties.
pub fn choose_target_anchor(
    net: &MlpNetwork,
    data: &LabeledDataset,
    class: usize,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in 0..data.len() {
        if data.label(i) != class {
            continue;
        }
        let out = net.forward(data.input(i)).ok()?;
        let other = out
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != class)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let margin = out[class] - other;
        if margin > 0.0 && best.is_none_or(|(_, b)| margin > b) {
            best = Some((i, margin));
        }
    }
    best.map(|b| b.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    /// The first success, or the failure that got furthest along the path.
    pub result: AttackResult,
    pub restarts_used: usize,
    /// Restart index that produced `result`.
    pub restart: usize,
    pub failures: BTreeMap<FailureKind, usize>,
    pub path_vertices: usize,
    pub target_output: Vec<f64>,
}

impl AttackOutcome {
    pub fn into_success(self) -> Result<Self> {
        if self.result.success {
            return Ok(self);
        }
        let summary = self
            .failures
            .iter()
            .map(|(k, v)| format!("{k:?}: {v}"))
            .collect::<Vec<_>>()
            .join(", ");
        Err(Error::AllRestartsFailed {
            restarts: self.restarts_used,
            summary,
        })
    }
}

/// Up to `cfg.restarts` randomized runs along the path from `x` to `y`.
/// Past half the iteration budget, a run whose progress is under half the
/// best finished run's is abandoned.
pub fn run_attack(
    net: &MlpNetwork,
    x: &[f64],
    y: &[f64],
    subset: &InputSubset,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    let m = net.output_dim();
    if subset.len() != m + cfg.delta {
        return Err(Error::InvalidArgument(format!(
            "expected {} free coordinates, got {}",
            m + cfg.delta,
            subset.len()
        )));
    }
    if x == y {
        let out = net.forward(x)?;
        return Ok(AttackOutcome {
            result: AttackResult {
                success: true,
                z: x.to_vec(),
                hamming: 0,
                iterations: 0,
                final_output: out.clone(),
                failure_kind: None,
                progress: 0.0,
                length_ratio: 0.0,
            },
            restarts_used: 0,
            restart: 0,
            failures: BTreeMap::new(),
            path_vertices: 1,
            target_output: out,
        });
    }
    let path = build_path(net, x, y)?;
    let target_output = path.vertices().last().unwrap().clone();
    // without slack there is nothing to randomize
    let restarts = if cfg.delta == 0 {
        cfg.restarts.min(1)
    } else {
        cfg.restarts
    };
    let mut failures = BTreeMap::new();
    let mut best: Option<(usize, AttackResult)> = None;
    let mut used = 0;
    for batch in (0..restarts).step_by(RESTART_BATCH) {
        let floor = best.as_ref().map(|(_, r)| 0.5 * r.progress);
        let end = (batch + RESTART_BATCH).min(restarts);
        let runs: Vec<Result<AttackResult>> = (batch..end)
            .into_par_iter()
            .map(|r| {
                let mut g = rng::stream(cfg.seed, r as u64);
                let g = (cfg.delta > 0).then_some(&mut g);
                follow_with_trace(net, x, subset, &path, cfg, g, floor).map(|(res, _)| res)
            })
            .collect();
        for (offset, run) in runs.into_iter().enumerate() {
            let res = run?;
            used += 1;
            if res.success {
                return Ok(AttackOutcome {
                    result: res,
                    restarts_used: used,
                    restart: batch + offset,
                    failures,
                    path_vertices: path.len(),
                    target_output,
                });
            }
            *failures.entry(res.failure_kind.unwrap()).or_insert(0) += 1;
            if best.as_ref().is_none_or(|(_, b)| res.progress > b.progress) {
                best = Some((batch + offset, res));
            }
        }
    }
    let (restart, result) =
        best.ok_or_else(|| Error::InvalidArgument("no restarts requested".into()))?;
    Ok(AttackOutcome {
        result,
        restarts_used: used,
        restart,
        failures,
        path_vertices: path.len(),
        target_output,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub source_class: usize,
    pub target_class: usize,
    pub subset_indices: Vec<usize>,
    pub delta: usize,
    pub hamming: usize,
    pub success: bool,
    pub iterations: usize,
    pub restarts_used: usize,
    pub final_output: Vec<f64>,
    pub target_output: Vec<f64>,
    /// `(index, old, new)` for every changed coordinate.
    pub perturbation: Vec<(usize, f64, f64)>,
    pub seed: u64,
    pub source_index: Option<usize>,
    pub anchor_index: Option<usize>,
    pub failure_kind: Option<FailureKind>,
    pub max_output_error: f64,
    pub epsilon_target: f64,
    pub path_vertices: usize,
    pub length_ratio: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn attack_report(
    outcome: &AttackOutcome,
    x: &[f64],
    subset: &InputSubset,
    cfg: &AttackConfig,
    source_class: usize,
    target_class: usize,
    source_index: Option<usize>,
    anchor_index: Option<usize>,
) -> AttackReport {
    let r = &outcome.result;
    let perturbation = x
        .iter()
        .zip(&r.z)
        .enumerate()
        .filter(|(_, (a, b))| a.to_bits() != b.to_bits())
        .map(|(i, (&a, &b))| (i, a, b))
        .collect();
    AttackReport {
        source_class,
        target_class,
        subset_indices: subset.indices().to_vec(),
        delta: cfg.delta,
        hamming: r.hamming,
        success: r.success,
        iterations: r.iterations,
        restarts_used: outcome.restarts_used,
        final_output: r.final_output.clone(),
        target_output: outcome.target_output.clone(),
        perturbation,
        seed: cfg.seed,
        source_index,
        anchor_index,
        failure_kind: r.failure_kind,
        max_output_error: norm_inf(&sub(&r.final_output, &outcome.target_output)),
        epsilon_target: cfg
            .epsilon_target
            .unwrap_or_else(|| default_eps_target(&outcome.target_output)),
        path_vertices: outcome.path_vertices,
        length_ratio: r.length_ratio,
    }
}

/// Attacks `x` toward each class in `targets` with one shared subset, using
/// [`choose_target_anchor`] on `anchors` for the end points. A target equal to
/// `source_class` is reported as an immediate success with no change.
#[allow(clippy::too_many_arguments)]
pub fn attack_targets(
    net: &MlpNetwork,
    x: &[f64],
    source_class: usize,
    source_index: Option<usize>,
    targets: &[usize],
    anchors: &LabeledDataset,
    subset: &InputSubset,
    cfg: &AttackConfig,
) -> Result<Vec<AttackReport>> {
    let mut reports = Vec::with_capacity(targets.len());
    for &target in targets {
        let (y, anchor) = if target == source_class {
            (x.to_vec(), None)
        } else {
            let a = choose_target_anchor(net, anchors, target).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no correctly classified sample of class {target} to aim at"
                ))
            })?;
            (anchors.input(a).to_vec(), Some(a))
        };
        let outcome = run_attack(net, x, &y, subset, cfg)?;
        reports.push(attack_report(
            &outcome,
            x,
            subset,
            cfg,
            source_class,
            target,
            source_index,
            anchor,
        ));
    }
    Ok(reports)
}
