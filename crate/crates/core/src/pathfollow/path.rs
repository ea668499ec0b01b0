use serde::{Deserialize, Serialize};

use crate::densecore::{norm2, sub};
use crate::relunet::{MlpNetwork, SIMULTANEOUS_TOL};
use crate::{Error, Result};

/// Parameter nudge past a switch when walking the input segment.
const SEGMENT_NUDGE: f64 = 1e-7;

/// The image of the input segment `x + alpha (y - x)`, `alpha` in `[0, 1]`,
/// as a polyline in output space with a vertex at every ReLU switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputPath {
    vertices: Vec<Vec<f64>>,
    alphas: Vec<f64>,
    /// Arc length from the first vertex to each vertex.
    cumulative: Vec<f64>,
}

impl OutputPath {
    fn from_parts(vertices: Vec<Vec<f64>>, alphas: Vec<f64>) -> Self {
        let mut cumulative = vec![0.0];
        for w in vertices.windows(2) {
            let last = *cumulative.last().unwrap();
            cumulative.push(last + norm2(&sub(&w[1], &w[0])));
        }
        OutputPath {
            vertices,
            alphas,
            cumulative,
        }
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn arc_length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Arc-length position of a point `p` heading for vertex `next`.
    pub fn progress(&self, next: usize, p: &[f64]) -> f64 {
        if next >= self.vertices.len() {
            return self.arc_length();
        }
        self.cumulative[next] - norm2(&sub(&self.vertices[next], p))
    }

    /// Euclidean distance from `p` to the polyline.
    pub fn distance(&self, p: &[f64]) -> f64 {
        if self.vertices.len() == 1 {
            return norm2(&sub(p, &self.vertices[0]));
        }
        self.vertices
            .windows(2)
            .map(|w| {
                let seg = sub(&w[1], &w[0]);
                let rel = sub(p, &w[0]);
                let len2: f64 = seg.iter().map(|v| v * v).sum();
                let t = if len2 > 0.0 {
                    (rel.iter().zip(&seg).map(|(a, b)| a * b).sum::<f64>() / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let d: Vec<f64> = rel.iter().zip(&seg).map(|(r, s)| r - t * s).collect();
                norm2(&d)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Input point at parameter `alpha`; exactly `y` at `alpha = 1`.
pub fn segment_point(x: &[f64], y: &[f64], alpha: f64) -> Vec<f64> {
    if alpha >= 1.0 {
        return y.to_vec();
    }
    x.iter().zip(y).map(|(a, b)| a + alpha * (b - a)).collect()
}

pub fn build_path(net: &MlpNetwork, x: &[f64], y: &[f64]) -> Result<OutputPath> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(
            "segment end points differ in length".into(),
        ));
    }
    if x == y {
        return Err(Error::DegenerateSegment);
    }
    let dir = sub(y, x);
    let mut vertices = vec![net.forward(x)?];
    let mut alphas = vec![0.0];
    let mut alpha = 0.0;
    loop {
        let here = segment_point(x, y, alpha);
        let step = crate::relunet::step_to_boundary(net, &here, &dir, 1.0 - alpha)?;
        let Some(tau) = step.tau else { break };
        let at = alpha + tau;
        if at >= 1.0 {
            break;
        }
        let v = net.forward(&segment_point(x, y, at))?;
        if &v != vertices.last().unwrap() {
            vertices.push(v);
            alphas.push(at);
        }
        let mut eta = SEGMENT_NUDGE;
        if let Some(next) = step.next_tau {
            let gap = next - tau;
            if gap > SIMULTANEOUS_TOL * tau.max(1.0) {
                eta = eta.min(gap / 2.0);
            }
        }
        alpha = at + eta;
        if alpha >= 1.0 {
            break;
        }
    }
    let end = net.forward(y)?;
    if vertices.len() > 1 && &end == vertices.last().unwrap() {
        vertices.pop();
        alphas.pop();
    }
    vertices.push(end);
    alphas.push(1.0);
    Ok(OutputPath::from_parts(vertices, alphas))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densecore::Matrix;
    use crate::relunet::tests::{abs_net, random_net};
    use crate::relunet::DenseLayer;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn linear_net_single_segment() {
        let net = MlpNetwork::new(vec![DenseLayer::new(
            Matrix::from_rows(&[[1.0, 2.0]]),
            vec![0.5],
        )
        .unwrap()])
        .unwrap();
        let p = build_path(&net, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.alphas(), &[0.0, 1.0]);
        assert_eq!(p.vertices(), &[vec![0.5], vec![3.5]]);
    }

    #[test]
    fn abs_net_corner() {
        let p = build_path(&abs_net(), &[-1.0], &[1.0]).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.alphas()[1], 0.5);
        assert_eq!(p.vertices()[1], vec![0.0]);
        assert_eq!(p.arc_length(), 2.0);
        assert!(matches!(
            build_path(&abs_net(), &[1.0], &[1.0]),
            Err(Error::DegenerateSegment)
        ));
    }

    #[test]
    fn vertices_interpolate_image() {
        let mut r = rng::seeded(40);
        for seed in 0..20 {
            let net = random_net(400 + seed, &[20, 8, 8, 3]);
            let x: Vec<f64> = (0..20).map(|_| r.sample(StandardNormal)).collect();
            let y: Vec<f64> = (0..20).map(|_| r.sample(StandardNormal)).collect();
            let p = build_path(&net, &x, &y).unwrap();
            assert_eq!(p.alphas()[0], 0.0);
            assert_eq!(*p.alphas().last().unwrap(), 1.0);
            assert_eq!(p.vertices()[0], net.forward(&x).unwrap());
            assert_eq!(*p.vertices().last().unwrap(), net.forward(&y).unwrap());
            for i in 0..p.len() - 1 {
                assert_ne!(p.vertices()[i], p.vertices()[i + 1]);
                let (a0, a1) = (p.alphas()[i], p.alphas()[i + 1]);
                let mid = net
                    .forward(&segment_point(&x, &y, 0.5 * (a0 + a1)))
                    .unwrap();
                // a stretch where the output is constant is merged into its
                // neighbour, so check membership of the segment rather than
                // linearity in alpha
                let seg = OutputPath::from_parts(p.vertices()[i..i + 2].to_vec(), vec![a0, a1]);
                let d = seg.distance(&mid);
                assert!(
                    d <= 1e-8 * (1.0 + norm2(&mid)),
                    "seed {seed} segment {i}: {d}"
                );
            }
        }
    }

    #[test]
    fn progress_and_distance() {
        let p = build_path(&abs_net(), &[-1.0], &[1.0]).unwrap();
        assert_eq!(p.progress(1, &[1.0]), 0.0);
        assert_eq!(p.progress(2, &[0.25]), 1.25);
        assert_eq!(p.distance(&[0.5]), 0.0);
        assert_eq!(p.distance(&[-0.5]), 0.5);
    }
}
