//! Fully connected ReLU networks as explicit piecewise-linear maps.
//!
//! Every layer but the last is followed by a ReLU. Inside one activation
//! region (a fixed on/off pattern of the hidden units) the network is affine,
//! and along a straight input line every pre-activation is affine in the line
//! parameter until the first unit switches. That is what makes exact boundary
//! stepping and exact local maps possible.

mod restricted;
mod train;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::densecore::{axpy, dot, Matrix};
use crate::{Error, Result};

pub use restricted::RestrictedNetwork;
pub use train::{
    accuracy, loss_and_gradient, predict, select_pixels, train_mlp, train_mlp_with, TrainConfig,
    TrainReport,
};

/// Pre-activations with magnitude at or below this count as on a boundary.
pub const BOUNDARY_TOL: f64 = 1e-12;
/// Crossings closer than this (relative) are treated as simultaneous.
pub const SIMULTANEOUS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `outputs x inputs`
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weights: Matrix, biases: Vec<f64>) -> Result<Self> {
        if biases.len() != weights.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} biases for {} rows",
                biases.len(),
                weights.rows()
            )));
        }
        Ok(DenseLayer { weights, biases })
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut out = self.weights.mul_vec(input);
        out.iter_mut().zip(&self.biases).for_each(|(o, b)| *o += b);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<DenseLayer>,
    hidden_offsets: Vec<usize>,
}

/// A hidden unit, addressed by hidden-layer index and position in the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitId {
    pub layer: usize,
    pub index: usize,
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}:{}", self.layer, self.index)
    }
}

/// On/off state of every hidden unit, layer by layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActivationPattern(Vec<bool>);

impl ActivationPattern {
    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Positions where two patterns differ.
    pub fn diff(&self, other: &ActivationPattern) -> Vec<usize> {
        self.0
            .iter()
            .zip(&other.0)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Hidden pre-activations and the output at one input point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub hidden: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Evaluation {
    pub fn pattern(&self) -> ActivationPattern {
        ActivationPattern(self.hidden.iter().flatten().map(|&v| v > 0.0).collect())
    }

    /// The hidden unit closest to switching, if any is within [`BOUNDARY_TOL`].
    pub fn boundary_unit(&self) -> Option<UnitId> {
        for (layer, pre) in self.hidden.iter().enumerate() {
            if let Some(index) = pre.iter().position(|v| v.abs() <= BOUNDARY_TOL) {
                return Some(UnitId { layer, index });
            }
        }
        None
    }
}

/// First crossing of a hidden-unit boundary along `x + tau dir`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryStep {
    pub tau: Option<f64>,
    pub unit: Option<UnitId>,
    /// The next crossing by a different unit, used to bound the nudge past
    /// the first one.
    pub next_tau: Option<f64>,
}

impl MlpNetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "network needs at least one layer".into(),
            ));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[1].weights.cols() != w[0].weights.rows() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} has {} inputs but layer {i} has {} outputs",
                    i + 1,
                    w[1].weights.cols(),
                    w[0].weights.rows()
                )));
            }
        }
        let mut hidden_offsets = Vec::with_capacity(layers.len());
        let mut acc = 0;
        for l in &layers[..layers.len() - 1] {
            hidden_offsets.push(acc);
            acc += l.weights.rows();
        }
        hidden_offsets.push(acc);
        Ok(MlpNetwork {
            layers,
            hidden_offsets,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.rows()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weights.rows())
            .collect()
    }

    /// Total number of ReLUs.
    pub fn relu_count(&self) -> usize {
        *self.hidden_offsets.last().unwrap()
    }

    /// Flat pattern position of a unit.
    pub fn flat_index(&self, unit: UnitId) -> usize {
        self.hidden_offsets[unit.layer] + unit.index
    }

    pub fn unit_at(&self, flat: usize) -> UnitId {
        let layer = self.hidden_offsets.partition_point(|&o| o <= flat) - 1;
        UnitId {
            layer,
            index: flat - self.hidden_offsets[layer],
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input of length {} for a network with {} inputs",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.evaluate_unchecked(x).output)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        self.check_input(x)?;
        Ok(self.evaluate_unchecked(x))
    }

    fn evaluate_unchecked(&self, x: &[f64]) -> Evaluation {
        self.evaluate_from_first(self.layers[0].apply(x))
    }

    /// Continues a forward pass given the first layer's pre-activations.
    pub(crate) fn evaluate_from_first(&self, mut pre: Vec<f64>) -> Evaluation {
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        for layer in &self.layers[1..] {
            let act: Vec<f64> = pre.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
            hidden.push(pre);
            pre = layer.apply(&act);
        }
        Evaluation {
            hidden,
            output: pre,
        }
    }

    /// Directional derivatives of all hidden pre-activations and the output,
    /// given the first layer's derivative, under the pattern of `eval`.
    pub(crate) fn directional_from_first(&self, eval: &Evaluation, mut d: Vec<f64>) -> Evaluation {
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        for (l, layer) in self.layers[1..].iter().enumerate() {
            let masked: Vec<f64> = d
                .iter()
                .zip(&eval.hidden[l])
                .map(|(&dv, &pv)| if pv > 0.0 { dv } else { 0.0 })
                .collect();
            hidden.push(d);
            d = layer.weights.mul_vec(&masked);
        }
        Evaluation { hidden, output: d }
    }

    /// Output Jacobian given the first layer's Jacobian (`h0 x s`).
    pub(crate) fn jacobian_from_first(&self, eval: &Evaluation, mut jac: Matrix) -> Matrix {
        for (l, layer) in self.layers[1..].iter().enumerate() {
            let s = jac.cols();
            let mut next = Matrix::zeros(layer.weights.rows(), s);
            let active: Vec<usize> = (0..jac.rows())
                .filter(|&u| eval.hidden[l][u] > 0.0)
                .collect();
            for o in 0..layer.weights.rows() {
                let wrow = layer.weights.row(o);
                let dst = next.row_mut(o);
                for &u in &active {
                    let w = wrow[u];
                    if w != 0.0 {
                        axpy(w, jac.row(u), dst);
                    }
                }
            }
            jac = next;
        }
        jac
    }

    pub(crate) fn first_crossings(
        &self,
        eval: &Evaluation,
        deriv: &Evaluation,
        tau_max: f64,
    ) -> BoundaryStep {
        first_crossings(eval, deriv, tau_max)
    }
}

fn first_crossings(eval: &Evaluation, deriv: &Evaluation, tau_max: f64) -> BoundaryStep {
    let mut best: Option<(f64, UnitId)> = None;
    let mut second: Option<f64> = None;
    for (layer, (pre, dpre)) in eval.hidden.iter().zip(&deriv.hidden).enumerate() {
        for (index, (&z, &dz)) in pre.iter().zip(dpre).enumerate() {
            if z == 0.0 || dz == 0.0 || (z > 0.0) == (dz > 0.0) {
                continue;
            }
            let tau = -z / dz;
            if !(tau > 0.0 && tau <= tau_max) {
                continue;
            }
            let unit = UnitId { layer, index };
            match best {
                None => best = Some((tau, unit)),
                Some((bt, bu)) => {
                    let tie = (tau - bt).abs() <= SIMULTANEOUS_TOL * bt.abs().max(1.0);
                    if tau < bt && !(tie && bu < unit) {
                        second = Some(second.map_or(bt, |s: f64| s.min(bt)));
                        best = Some((tau, unit));
                    } else {
                        second = Some(second.map_or(tau, |s: f64| s.min(tau)));
                    }
                }
            }
        }
    }
    BoundaryStep {
        tau: best.map(|b| b.0),
        unit: best.map(|b| b.1),
        next_tau: second,
    }
}

/// Ordered distinct input coordinates that are allowed to change.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputSubset(Vec<usize>);

impl InputSubset {
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(Error::InvalidArgument(format!(
                    "subset index {i} out of range for n={n}"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("subset index {i} repeated")));
            }
        }
        Ok(InputSubset(indices))
    }

    pub fn all(n: usize) -> Self {
        InputSubset((0..n).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn gather(&self, x: &[f64]) -> Vec<f64> {
        self.0.iter().map(|&i| x[i]).collect()
    }

    /// Copy of `x` with the subset coordinates replaced by `values`.
    pub fn scatter(&self, x: &[f64], values: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for (&i, &v) in self.0.iter().zip(values) {
            out[i] = v;
        }
        out
    }
}

/// The exact affine map `output = a * x_subset + c` valid while `pattern`
/// holds and all coordinates outside `subset` stay frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalAffineMap {
    pub subset: InputSubset,
    pub a: Matrix,
    pub c: Vec<f64>,
    pub pattern: ActivationPattern,
}

impl LocalAffineMap {
    pub fn apply(&self, x_subset: &[f64]) -> Vec<f64> {
        let mut out = self.a.mul_vec(x_subset);
        out.iter_mut().zip(&self.c).for_each(|(o, c)| *o += c);
        out
    }
}

pub fn forward(net: &MlpNetwork, x: &[f64]) -> Result<Vec<f64>> {
    net.forward(x)
}

pub fn activation_pattern(net: &MlpNetwork, x: &[f64]) -> Result<ActivationPattern> {
    let eval = net.evaluate(x)?;
    if let Some(u) = eval.boundary_unit() {
        return Err(Error::OnBoundary {
            layer: u.layer,
            unit: u.index,
        });
    }
    Ok(eval.pattern())
}

/// Masked product of the layer weights under the pattern at `x`, restricted
/// to the subset's columns.
pub fn local_affine_map(
    net: &MlpNetwork,
    x: &[f64],
    subset: &InputSubset,
) -> Result<LocalAffineMap> {
    let eval = net.evaluate(x)?;
    if let Some(u) = eval.boundary_unit() {
        return Err(Error::OnBoundary {
            layer: u.layer,
            unit: u.index,
        });
    }
    if subset.indices().iter().any(|&i| i >= net.input_dim()) {
        return Err(Error::InvalidArgument("subset index out of range".into()));
    }
    let j1 = net.layers[0].weights.select_columns(subset.indices());
    let a = net.jacobian_from_first(&eval, j1);
    let xs = subset.gather(x);
    let ax = a.mul_vec(&xs);
    let c = eval.output.iter().zip(&ax).map(|(o, v)| o - v).collect();
    Ok(LocalAffineMap {
        subset: subset.clone(),
        a,
        c,
        pattern: eval.pattern(),
    })
}

/// Smallest `tau` in `(0, tau_max]` at which a hidden pre-activation along
/// `x + tau dir` reaches zero. Pre-activations are affine in `tau` until the
/// first switch, so the value is exact up to rounding.
pub fn step_to_boundary(
    net: &MlpNetwork,
    x: &[f64],
    dir: &[f64],
    tau_max: f64,
) -> Result<BoundaryStep> {
    let eval = net.evaluate(x)?;
    if dir.len() != x.len() {
        return Err(Error::DimensionMismatch(
            "direction length differs from input".into(),
        ));
    }
    let d1 = net.layers[0].weights.mul_vec(dir);
    let deriv = net.directional_from_first(&eval, d1);
    Ok(first_crossings(&eval, &deriv, tau_max))
}

/// Argmax with ties to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |b, (i, &x)| if x > b.1 { (i, x) } else { b },
        )
        .0
}

/// Pre-activation of one hidden unit as computed naively, used by tests.
#[doc(hidden)]
pub fn unit_preactivation(net: &MlpNetwork, x: &[f64], unit: UnitId) -> f64 {
    let mut act = x.to_vec();
    for (l, layer) in net.layers.iter().enumerate() {
        if l == unit.layer {
            return dot(layer.weights.row(unit.index), &act) + layer.biases[unit.index];
        }
        act = layer.apply(&act).into_iter().map(|v| v.max(0.0)).collect();
    }
    unreachable!("unit layer out of range")
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// `|x| = relu(x) + relu(-x)`
    pub fn abs_net() -> MlpNetwork {
        MlpNetwork::new(vec![
            DenseLayer::new(Matrix::from_rows(&[[1.0], [-1.0]]), vec![0.0, 0.0]).unwrap(),
            DenseLayer::new(Matrix::from_rows(&[[1.0, 1.0]]), vec![0.0]).unwrap(),
        ])
        .unwrap()
    }

    pub fn random_net(seed: u64, dims: &[usize]) -> MlpNetwork {
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
                DenseLayer::new(Matrix::from_row_major(w[1], w[0], data).unwrap(), biases).unwrap()
            })
            .collect();
        MlpNetwork::new(layers).unwrap()
    }

    fn normal(r: &mut rng::Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| r.sample(StandardNormal)).collect()
    }

    /// Per-neuron evaluation written independently of `forward`.
    fn naive_forward(net: &MlpNetwork, x: &[f64]) -> Vec<f64> {
        let mut act = x.to_vec();
        let last = net.layers().len() - 1;
        for (l, layer) in net.layers().iter().enumerate() {
            let mut next = Vec::new();
            for o in 0..layer.weights.rows() {
                let mut s = layer.biases[o];
                for (i, a) in act.iter().enumerate() {
                    s += layer.weights[(o, i)] * a;
                }
                next.push(if l < last && s < 0.0 { 0.0 } else { s });
            }
            act = next;
        }
        act
    }

    #[test]
    fn abs_forward() {
        let net = abs_net();
        assert_eq!(net.forward(&[2.0]).unwrap(), vec![2.0]);
        assert_eq!(net.forward(&[-3.0]).unwrap(), vec![3.0]);
        assert_eq!(net.relu_count(), 2);
    }

    #[test]
    fn zero_bias_zero_input() {
        let mut net = random_net(1, &[5, 7, 3]);
        net.layers
            .iter_mut()
            .for_each(|l| l.biases.iter_mut().for_each(|b| *b = 0.0));
        assert_eq!(net.forward(&[0.0; 5]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn forward_matches_naive() {
        let net = random_net(2, &[20, 9, 7, 3]);
        let mut r = rng::seeded(3);
        for _ in 0..100 {
            let x = normal(&mut r, 20);
            let a = net.forward(&x).unwrap();
            let b = naive_forward(&net, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn rejects_broken_chain() {
        let l1 = DenseLayer::new(Matrix::zeros(3, 2), vec![0.0; 3]).unwrap();
        let l2 = DenseLayer::new(Matrix::zeros(1, 4), vec![0.0]).unwrap();
        assert!(MlpNetwork::new(vec![l1, l2]).is_err());
        assert!(abs_net().forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn abs_patterns() {
        let net = abs_net();
        assert_eq!(
            activation_pattern(&net, &[2.0]).unwrap().bits(),
            &[true, false]
        );
        assert_eq!(
            activation_pattern(&net, &[-3.0]).unwrap().bits(),
            &[false, true]
        );
        assert!(matches!(
            activation_pattern(&net, &[0.0]),
            Err(Error::OnBoundary { layer: 0, unit: 0 })
        ));
    }

    #[test]
    fn abs_local_map() {
        let net = abs_net();
        let map = local_affine_map(&net, &[2.0], &InputSubset::all(1)).unwrap();
        assert_eq!(map.a, Matrix::from_rows(&[[1.0]]));
        assert_eq!(map.c, vec![0.0]);
        let map = local_affine_map(&net, &[-2.0], &InputSubset::all(1)).unwrap();
        assert_eq!(map.a, Matrix::from_rows(&[[-1.0]]));
    }

    #[test]
    fn linear_net_local_map_is_weight_columns() {
        let net = random_net(4, &[6, 2]);
        let subset = InputSubset::new(vec![4, 1], 6).unwrap();
        let mut r = rng::seeded(5);
        for _ in 0..5 {
            let map = local_affine_map(&net, &normal(&mut r, 6), &subset).unwrap();
            assert_eq!(map.a, net.layers()[0].weights.select_columns(&[4, 1]));
        }
    }

    #[test]
    fn abs_boundary_step() {
        let net = abs_net();
        let s = step_to_boundary(&net, &[2.0], &[-1.0], f64::INFINITY).unwrap();
        assert_eq!(s.tau, Some(2.0));
        assert_eq!(s.unit, Some(UnitId { layer: 0, index: 0 }));
        let lin = random_net(6, &[3, 2]);
        let s = step_to_boundary(&lin, &[0.1, 0.2, 0.3], &[1.0, 0.0, 0.0], f64::INFINITY).unwrap();
        assert_eq!(s.tau, None);
    }

    #[test]
    fn boundary_step_brackets_switch() {
        let mut r = rng::seeded(7);
        for seed in 0..50 {
            let net = random_net(100 + seed, &[20, 8, 8, 3]);
            let x = normal(&mut r, 20);
            let dir = normal(&mut r, 20);
            let s = step_to_boundary(&net, &x, &dir, f64::INFINITY).unwrap();
            let (Some(tau), Some(unit)) = (s.tau, s.unit) else {
                continue;
            };
            if s.next_tau.is_some_and(|t| t - tau < 1e-6) {
                continue;
            }
            let p0 = activation_pattern(&net, &x).unwrap();
            let at = |t: f64| -> Vec<f64> { x.iter().zip(&dir).map(|(a, b)| a + t * b).collect() };
            let before = activation_pattern(&net, &at(tau - 1e-7)).unwrap();
            let after = activation_pattern(&net, &at(tau + 1e-7)).unwrap();
            assert_eq!(before, p0);
            assert_eq!(before.diff(&after), vec![net.flat_index(unit)]);
            // pattern constant on interior samples
            for i in 1..100 {
                let t = tau * i as f64 / 100.0;
                assert_eq!(activation_pattern(&net, &at(t)).unwrap(), p0);
            }
            // exact affinity on the certified segment
            let y0 = net.forward(&x).unwrap();
            let y1 = net.forward(&at(0.9 * tau)).unwrap();
            let ym = net.forward(&at(0.45 * tau)).unwrap();
            for k in 0..3 {
                assert!((ym[k] - 0.5 * (y0[k] + y1[k])).abs() <= 1e-10 * (1.0 + ym[k].abs()));
            }
        }
    }

    #[test]
    fn restriction_of_full_map() {
        let net = random_net(8, &[10, 12, 4]);
        let mut r = rng::seeded(9);
        let x = normal(&mut r, 10);
        let full = local_affine_map(&net, &x, &InputSubset::all(10)).unwrap();
        let subset = InputSubset::new(vec![7, 2, 5], 10).unwrap();
        let part = local_affine_map(&net, &x, &subset).unwrap();
        assert_eq!(part.a, full.a.select_columns(&[7, 2, 5]));
        // perturbing a frozen coordinate moves the output by the full-map column
        let mut x2 = x.clone();
        x2[0] += 1e-6;
        if activation_pattern(&net, &x2).unwrap() == full.pattern {
            let y = net.forward(&x).unwrap();
            let y2 = net.forward(&x2).unwrap();
            for k in 0..4 {
                assert!(((y2[k] - y[k]) / 1e-6 - full.a[(k, 0)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn unit_index_round_trip() {
        let net = random_net(10, &[4, 3, 5, 2]);
        for flat in 0..net.relu_count() {
            assert_eq!(net.flat_index(net.unit_at(flat)), flat);
        }
        assert_eq!(net.unit_at(3), UnitId { layer: 1, index: 0 });
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
