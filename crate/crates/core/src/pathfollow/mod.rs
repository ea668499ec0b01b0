//! Targeted sparse perturbations by tracing an output-space polyline.
//!
//! The straight input segment from `x` to an anchor `y` of the target class
//! maps to a polyline in output space. Starting at `x`, only the coordinates
//! in a fixed subset are allowed to move; each step inverts the local affine
//! map of the current activation region to move the output straight toward
//! the next polyline vertex, stopping at the first ReLU switch. With exactly
//! `m` free coordinates the local map is square and a switch that reverses
//! the required direction (a reflection) is fatal; with `m + delta` free
//! coordinates the step is picked from a `delta`-dimensional family of
//! preimages, on the far side of the switch just crossed.

mod attack;
mod follow;
mod path;

use serde::{Deserialize, Serialize};

use crate::relunet::UnitId;

pub use attack::{
    attack_report, attack_targets, choose_target_anchor, resolve_subset, run_attack, AttackOutcome,
    AttackReport, SubsetMode, RESTART_BATCH,
};
pub use follow::{follow_basic, follow_improved, follow_with_trace, SINGULAR_CONDITION};
pub use path::{build_path, segment_point, OutputPath};

/// How the free preimage parameter is sampled after a ReLU switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FarSide {
    /// Uniformly on the part of the preimage line that keeps the unit just
    /// crossed on its new side.
    #[default]
    Ray,
    /// Project a random point onto the preimage line, ignoring sides; a wrong
    /// side is then reported as a reflection.
    Line,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub delta: usize,
    /// Minimum output arc-length gained per boundary crossing; defaults to
    /// `1e-9` times the path length.
    pub epsilon_progress: Option<f64>,
    /// Output match tolerance (max norm); defaults to `1e-6 (1 + |f(y)|_inf)`.
    pub epsilon_target: Option<f64>,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    pub subset_mode: SubsetMode,
    pub far_side: FarSide,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            delta: 1,
            epsilon_progress: None,
            epsilon_target: None,
            max_iters: 2000,
            restarts: 1000,
            seed: 0,
            subset_mode: SubsetMode::LargestStd,
            far_side: FarSide::Ray,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureKind {
    Sinkhole,
    Reflection,
    Singular,
    IterationCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEvent {
    BoundaryCrossed(UnitId),
    PathCorner(usize),
    /// Extra step toward the final vertex after reaching it outside tolerance.
    Advance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Free coordinates after the step.
    pub z: Vec<f64>,
    pub output: Vec<f64>,
    pub progress: f64,
    pub event: TraceEvent,
    /// The unconstrained preimage would have re-crossed the previous switch.
    pub reflection_resolved: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackTrace {
    pub steps: Vec<TraceStep>,
}

impl AttackTrace {
    /// Euclidean length of the input-space trace.
    pub fn input_length(&self, start: &[f64]) -> f64 {
        let mut prev = start;
        let mut total = 0.0;
        for s in &self.steps {
            total += crate::densecore::norm2(&crate::densecore::sub(&s.z, prev));
            prev = &s.z;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub success: bool,
    pub z: Vec<f64>,
    pub hamming: usize,
    pub iterations: usize,
    pub final_output: Vec<f64>,
    pub failure_kind: Option<FailureKind>,
    /// Output arc length covered.
    pub progress: f64,
    /// Input trace length over output arc length covered.
    pub length_ratio: f64,
}

/// Coordinates where `a` and `b` differ bitwise.
pub fn hamming(a: &[f64], b: &[f64]) -> usize {
    a.iter()
        .zip(b)
        .filter(|(u, v)| u.to_bits() != v.to_bits())
        .count()
}
