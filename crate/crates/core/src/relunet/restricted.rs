use super::{BoundaryStep, Evaluation, InputSubset, MlpNetwork};
use crate::densecore::{axpy, Matrix};

/// A network with every input outside `subset` frozen at a base point.
///
/// The first layer's contribution from the frozen coordinates is computed
/// once, so evaluating, stepping and extracting local maps cost
/// `O(width * |subset|)` in the first layer instead of `O(width * n)`.
#[derive(Debug, Clone)]
pub struct RestrictedNetwork<'a> {
    net: &'a MlpNetwork,
    subset: InputSubset,
    base_point: Vec<f64>,
    /// First-layer pre-activation with the subset coordinates set to zero.
    frozen_pre: Vec<f64>,
    /// First-layer weight columns of the subset, `h0 x s`.
    subset_cols: Matrix,
    /// Same columns stored per input (`s x h0`) for contiguous updates.
    subset_rows: Matrix,
}

impl<'a> RestrictedNetwork<'a> {
    pub fn new(net: &'a MlpNetwork, base_point: &[f64], subset: InputSubset) -> Self {
        assert_eq!(base_point.len(), net.input_dim());
        let first = &net.layers()[0];
        let zeroed = subset.scatter(base_point, &vec![0.0; subset.len()]);
        let frozen_pre = first.apply(&zeroed);
        let subset_cols = first.weights.select_columns(subset.indices());
        let subset_rows = subset_cols.transpose();
        RestrictedNetwork {
            net,
            subset,
            base_point: base_point.to_vec(),
            frozen_pre,
            subset_cols,
            subset_rows,
        }
    }

    pub fn network(&self) -> &MlpNetwork {
        self.net
    }

    pub fn subset(&self) -> &InputSubset {
        &self.subset
    }

    pub fn base_point(&self) -> &[f64] {
        &self.base_point
    }

    /// Full input vector for the given subset values.
    pub fn embed(&self, z: &[f64]) -> Vec<f64> {
        self.subset.scatter(&self.base_point, z)
    }

    fn first_pre(&self, z: &[f64]) -> Vec<f64> {
        let mut pre = self.frozen_pre.clone();
        for (i, &v) in z.iter().enumerate() {
            if v != 0.0 {
                axpy(v, self.subset_rows.row(i), &mut pre);
            }
        }
        pre
    }

    pub fn evaluate(&self, z: &[f64]) -> Evaluation {
        self.net.evaluate_from_first(self.first_pre(z))
    }

    /// `m x s` Jacobian of the output in the subset coordinates under the
    /// pattern of `eval`.
    pub fn local_map(&self, eval: &Evaluation) -> Matrix {
        self.net.jacobian_from_first(eval, self.subset_cols.clone())
    }

    /// Derivatives of every pre-activation and the output along `dir`.
    pub fn directional(&self, eval: &Evaluation, dir: &[f64]) -> Evaluation {
        let mut d1 = vec![0.0; self.frozen_pre.len()];
        for (i, &v) in dir.iter().enumerate() {
            if v != 0.0 {
                axpy(v, self.subset_rows.row(i), &mut d1);
            }
        }
        self.net.directional_from_first(eval, d1)
    }

    pub fn step(&self, eval: &Evaluation, dir: &[f64], tau_max: f64) -> (BoundaryStep, Evaluation) {
        let deriv = self.directional(eval, dir);
        (self.net.first_crossings(eval, &deriv, tau_max), deriv)
    }

    /// Gradient of one hidden unit's pre-activation in the subset
    /// coordinates, valid in the region of `eval`.
    pub fn unit_gradient(&self, eval: &Evaluation, unit: super::UnitId) -> Vec<f64> {
        let s = self.subset.len();
        if unit.layer == 0 {
            return self.subset_cols.row(unit.index).to_vec();
        }
        // Jacobian of hidden layer `unit.layer`'s pre-activations, one row.
        let mut jac = self.subset_cols.clone();
        for l in 0..unit.layer {
            let layer = &self.net.layers()[l + 1];
            let active: Vec<usize> = (0..jac.rows())
                .filter(|&u| eval.hidden[l][u] > 0.0)
                .collect();
            let rows: Vec<usize> = if l + 1 == unit.layer {
                vec![unit.index]
            } else {
                (0..layer.weights.rows()).collect()
            };
            let mut next = Matrix::zeros(rows.len(), s);
            for (r, &o) in rows.iter().enumerate() {
                let wrow = layer.weights.row(o);
                let dst = next.row_mut(r);
                for &u in &active {
                    if wrow[u] != 0.0 {
                        axpy(wrow[u], jac.row(u), dst);
                    }
                }
            }
            jac = next;
        }
        jac.row(0).to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::random_net;
    use super::super::*;
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn agrees_with_full_network() {
        let net = random_net(21, &[15, 10, 6, 3]);
        let mut r = rng::seeded(22);
        let x: Vec<f64> = (0..15).map(|_| r.sample(StandardNormal)).collect();
        let subset = InputSubset::new(vec![3, 11, 0, 7], 15).unwrap();
        let rn = RestrictedNetwork::new(&net, &x, subset.clone());
        for _ in 0..20 {
            let z: Vec<f64> = (0..4).map(|_| r.sample(StandardNormal)).collect();
            let full_x = rn.embed(&z);
            let e = rn.evaluate(&z);
            let y = net.forward(&full_x).unwrap();
            for (a, b) in e.output.iter().zip(&y) {
                assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
            }
            let map = local_affine_map(&net, &full_x, &subset).unwrap();
            let a = rn.local_map(&e);
            for k in 0..3 {
                for j in 0..4 {
                    assert!((a[(k, j)] - map.a[(k, j)]).abs() < 1e-12);
                }
            }
            let dir: Vec<f64> = (0..4).map(|_| r.sample(StandardNormal)).collect();
            let (s, _) = rn.step(&e, &dir, f64::INFINITY);
            let full_dir = subset.scatter(&[0.0; 15], &dir);
            let s2 = step_to_boundary(&net, &full_x, &full_dir, f64::INFINITY).unwrap();
            assert_eq!(s.unit, s2.unit);
            if let (Some(a), Some(b)) = (s.tau, s2.tau) {
                assert!((a - b).abs() < 1e-9 * (1.0 + b));
            }
        }
    }

    #[test]
    fn unit_gradient_matches_finite_difference() {
        let net = random_net(23, &[8, 6, 5, 2]);
        let mut r = rng::seeded(24);
        let x: Vec<f64> = (0..8).map(|_| r.sample(StandardNormal)).collect();
        let subset = InputSubset::new(vec![1, 4, 6], 8).unwrap();
        let rn = RestrictedNetwork::new(&net, &x, subset.clone());
        let z = subset.gather(&x);
        let e = rn.evaluate(&z);
        for flat in 0..net.relu_count() {
            let unit = net.unit_at(flat);
            let g = rn.unit_gradient(&e, unit);
            for j in 0..3 {
                let h = 1e-7;
                let mut zp = z.clone();
                zp[j] += h;
                let mut zm = z.clone();
                zm[j] -= h;
                let fd = (unit_preactivation(&net, &rn.embed(&zp), unit)
                    - unit_preactivation(&net, &rn.embed(&zm), unit))
                    / (2.0 * h);
                assert!(
                    (fd - g[j]).abs() < 1e-5,
                    "unit {unit} coord {j}: {fd} vs {}",
                    g[j]
                );
            }
        }
    }
}
