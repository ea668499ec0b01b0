//! Mini-batch SGD on softmax cross-entropy.
//!
//! Weights are kept input-major while training so that both the forward pass
//! and the weight gradient only touch rows for nonzero inputs; MNIST images
//! are mostly background, which makes this several times cheaper than dense
//! products. Single-threaded, so a seed fixes the result bit for bit.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{argmax, DenseLayer, InputSubset, MlpNetwork};
use crate::dataio::LabeledDataset;
use crate::densecore::{axpy, dot, Matrix};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub width: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// The learning rate is multiplied by `decay_factor` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            width: 256,
            epochs: 200,
            lr: 0.1,
            batch_size: 64,
            decay_every: 50,
            decay_factor: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

struct Layer {
    /// `inputs x outputs`, row-major
    wt: Vec<f64>,
    b: Vec<f64>,
    fan_in: usize,
    fan_out: usize,
}

impl Layer {
    fn row(&self, j: usize) -> &[f64] {
        &self.wt[j * self.fan_out..(j + 1) * self.fan_out]
    }
}

struct Params {
    layers: Vec<Layer>,
}

impl Params {
    fn from_network(net: &MlpNetwork) -> Params {
        let layers = net
            .layers()
            .iter()
            .map(|l| Layer {
                wt: l.weights.transpose().into_vec(),
                b: l.biases.clone(),
                fan_in: l.weights.cols(),
                fan_out: l.weights.rows(),
            })
            .collect();
        Params { layers }
    }

    fn zeros_like(&self) -> Params {
        Params {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    wt: vec![0.0; l.wt.len()],
                    b: vec![0.0; l.b.len()],
                    fan_in: l.fan_in,
                    fan_out: l.fan_out,
                })
                .collect(),
        }
    }

    fn to_layers(&self) -> Vec<DenseLayer> {
        self.layers
            .iter()
            .map(|l| {
                let wt = Matrix::from_row_major(l.fan_in, l.fan_out, l.wt.clone())
                    .expect("finite weights");
                DenseLayer::new(wt.transpose(), l.b.clone()).expect("matching biases")
            })
            .collect()
    }

    fn to_network(&self) -> MlpNetwork {
        MlpNetwork::new(self.to_layers()).expect("valid chain")
    }
}

/// Per-sample buffers; `acts[l]` is the input to layer `l`, `pres[l]` its output.
struct Workspace {
    acts: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
    delta: Vec<f64>,
    nz: Vec<usize>,
}

impl Workspace {
    fn new(p: &Params) -> Self {
        let mut acts = vec![vec![0.0; p.layers[0].fan_in]];
        acts.extend(p.layers.iter().map(|l| vec![0.0; l.fan_out]));
        Workspace {
            acts,
            pres: p.layers.iter().map(|l| vec![0.0; l.fan_out]).collect(),
            delta: Vec::new(),
            nz: Vec::new(),
        }
    }
}

/// Forward pass into `ws`; returns the output logits as `ws.pres.last()`.
fn forward_sparse(p: &Params, x: &[f64], ws: &mut Workspace) {
    ws.acts[0].copy_from_slice(x);
    let last = p.layers.len() - 1;
    for (l, layer) in p.layers.iter().enumerate() {
        let (acts_lo, acts_hi) = ws.acts.split_at_mut(l + 1);
        let input = &acts_lo[l];
        let pre = &mut ws.pres[l];
        pre.copy_from_slice(&layer.b);
        for (j, &v) in input.iter().enumerate() {
            if v != 0.0 {
                axpy(v, layer.row(j), pre);
            }
        }
        let out = &mut acts_hi[0];
        if l < last {
            for (o, &z) in out.iter_mut().zip(pre.iter()) {
                *o = if z > 0.0 { z } else { 0.0 };
            }
        } else {
            out.copy_from_slice(pre);
        }
    }
}

/// Cross-entropy of the logits in `ws` and its gradient accumulated into `grad`.
fn backward(p: &Params, label: usize, ws: &mut Workspace, grad: &mut Params) -> f64 {
    let logits = ws.pres.last().unwrap();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|v| *v /= sum);
    let loss = -(logits[label] - max - sum.ln());
    probs[label] -= 1.0;
    ws.delta = probs;
    for l in (0..p.layers.len()).rev() {
        let g = &mut grad.layers[l];
        axpy(1.0, &ws.delta, &mut g.b);
        ws.nz.clear();
        let input = &ws.acts[l];
        for (j, &v) in input.iter().enumerate() {
            if v != 0.0 {
                ws.nz.push(j);
                let fo = g.fan_out;
                axpy(v, &ws.delta, &mut g.wt[j * fo..(j + 1) * fo]);
            }
        }
        if l > 0 {
            let layer = &p.layers[l];
            let prev_pre = &ws.pres[l - 1];
            let next: Vec<f64> = (0..layer.fan_in)
                .map(|j| {
                    if prev_pre[j] > 0.0 {
                        dot(layer.row(j), &ws.delta)
                    } else {
                        0.0
                    }
                })
                .collect();
            ws.delta = next;
        }
    }
    loss
}

/// Mean cross-entropy loss over the samples and its gradient, in the same
/// layout as the network's layers.
pub fn loss_and_gradient(
    net: &MlpNetwork,
    inputs: &[Vec<f64>],
    labels: &[usize],
) -> (f64, Vec<DenseLayer>) {
    let p = Params::from_network(net);
    let mut grad = p.zeros_like();
    let mut ws = Workspace::new(&p);
    let mut loss = 0.0;
    for (x, &y) in inputs.iter().zip(labels) {
        forward_sparse(&p, x, &mut ws);
        loss += backward(&p, y, &mut ws, &mut grad);
    }
    let scale = 1.0 / inputs.len() as f64;
    for l in &mut grad.layers {
        l.wt.iter_mut().for_each(|v| *v *= scale);
        l.b.iter_mut().for_each(|v| *v *= scale);
    }
    (loss * scale, grad.to_layers())
}

fn he_init(dims: &[usize], seed: u64) -> Params {
    let mut r = rng::stream(seed, 0);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = (2.0 / fan_in as f64).sqrt();
            // drawn output-major so the draw order matches the stored layout
            let mut wt = vec![0.0; fan_in * fan_out];
            for o in 0..fan_out {
                for j in 0..fan_in {
                    wt[j * fan_out + o] = scale * r.sample::<f64, _>(StandardNormal);
                }
            }
            Layer {
                wt,
                b: vec![0.0; fan_out],
                fan_in,
                fan_out,
            }
        })
        .collect();
    Params { layers }
}

/// Trains an `n -> width -> classes` ReLU network.
pub fn train_mlp(
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<(MlpNetwork, TrainReport)> {
    train_mlp_with(train, test, cfg, &mut |_, _| {})
}

/// [`train_mlp`], calling `on_epoch(epoch, mean_loss)` after every epoch.
pub fn train_mlp_with(
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<(MlpNetwork, TrainReport)> {
    if train.is_empty() {
        return Err(Error::DataFormat("empty training set".into()));
    }
    if let Some(t) = test {
        if t.dim() != train.dim() {
            return Err(Error::DataFormat(format!(
                "test inputs have dimension {}, training inputs {}",
                t.dim(),
                train.dim()
            )));
        }
    }
    if cfg.width == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "width and batch size must be positive".into(),
        ));
    }
    let classes = train.num_classes();
    let mut p = he_init(&[train.dim(), cfg.width, classes], cfg.seed);
    let mut grad = p.zeros_like();
    let mut ws = Workspace::new(&p);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let decays = epoch.checked_div(cfg.decay_every).unwrap_or(0);
        let lr = cfg.lr * cfg.decay_factor.powi(decays as i32);
        order.shuffle(&mut rng::stream(cfg.seed, epoch as u64 + 1));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for l in &mut grad.layers {
                l.wt.iter_mut().for_each(|v| *v = 0.0);
                l.b.iter_mut().for_each(|v| *v = 0.0);
            }
            for &i in batch {
                forward_sparse(&p, train.input(i), &mut ws);
                total += backward(&p, train.label(i), &mut ws, &mut grad);
            }
            let step = lr / batch.len() as f64;
            for (pl, gl) in p.layers.iter_mut().zip(&grad.layers) {
                axpy(-step, &gl.wt, &mut pl.wt);
                axpy(-step, &gl.b, &mut pl.b);
            }
        }
        epoch_losses.push(total / train.len() as f64);
        on_epoch(epoch, total / train.len() as f64);
    }

    let net = p.to_network();
    let report = TrainReport {
        epoch_losses,
        train_accuracy: accuracy(&net, train),
        test_accuracy: test.map(|t| accuracy(&net, t)),
    };
    Ok((net, report))
}

pub fn predict(net: &MlpNetwork, x: &[f64]) -> Result<usize> {
    Ok(argmax(&net.forward(x)?))
}

pub fn accuracy(net: &MlpNetwork, data: &LabeledDataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let p = Params::from_network(net);
    let mut ws = Workspace::new(&p);
    let correct = (0..data.len())
        .filter(|&i| {
            forward_sparse(&p, data.input(i), &mut ws);
            argmax(ws.pres.last().unwrap()) == data.label(i)
        })
        .count();
    correct as f64 / data.len() as f64
}

/// The `count` input coordinates with the largest standard deviation over the
/// dataset, largest first, ties to the lower index.
pub fn select_pixels(data: &LabeledDataset, count: usize) -> Result<InputSubset> {
    let n = data.dim();
    if count > n {
        return Err(Error::InvalidArgument(format!(
            "cannot select {count} of {n} coordinates"
        )));
    }
    let len = data.len().max(1) as f64;
    let mut mean = vec![0.0; n];
    for i in 0..data.len() {
        axpy(1.0, data.input(i), &mut mean);
    }
    mean.iter_mut().for_each(|v| *v /= len);
    let mut var = vec![0.0; n];
    for i in 0..data.len() {
        for ((v, &x), &mu) in var.iter_mut().zip(data.input(i)).zip(&mean) {
            *v += (x - mu) * (x - mu);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / len).sqrt()).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| std[b].total_cmp(&std[a]).then(a.cmp(&b)));
    idx.truncate(count);
    InputSubset::new(idx, n)
}

#[cfg(test)]
mod tests {
    use super::super::tests::random_net;
    use super::*;

    fn toy_dataset(seed: u64, len: usize, n: usize, classes: usize) -> LabeledDataset {
        let mut r = rng::seeded(seed);
        let inputs: Vec<f64> = (0..len * n)
            .map(|_| {
                if r.random::<f64>() < 0.4 {
                    0.0
                } else {
                    r.random::<f64>()
                }
            })
            .collect();
        let labels = (0..len).map(|i| i % classes).collect();
        LabeledDataset::new(n, inputs, labels).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // 2 -> 2 -> 2 gives 6 + 6 = 12 parameters
        let net = random_net(31, &[2, 2, 2]);
        let inputs = vec![vec![0.3, 0.9], vec![0.7, 0.1], vec![0.5, 0.5]];
        let labels = vec![0, 1, 1];
        let (_, grad) = loss_and_gradient(&net, &inputs, &labels);
        let h = 1e-6;
        let loss_of = |n: &MlpNetwork| loss_and_gradient(n, &inputs, &labels).0;
        for l in 0..2 {
            for r in 0..2 {
                for c in 0..2 {
                    let mut layers = net.layers().to_vec();
                    layers[l].weights[(r, c)] += h;
                    let up = loss_of(&MlpNetwork::new(layers.clone()).unwrap());
                    layers[l].weights[(r, c)] -= 2.0 * h;
                    let down = loss_of(&MlpNetwork::new(layers).unwrap());
                    let fd = (up - down) / (2.0 * h);
                    let g = grad[l].weights[(r, c)];
                    assert!(
                        (fd - g).abs() <= 1e-4 * g.abs().max(1e-3),
                        "w[{l}][{r},{c}]: {fd} vs {g}"
                    );
                }
                let mut layers = net.layers().to_vec();
                layers[l].biases[r] += h;
                let up = loss_of(&MlpNetwork::new(layers.clone()).unwrap());
                layers[l].biases[r] -= 2.0 * h;
                let down = loss_of(&MlpNetwork::new(layers).unwrap());
                let fd = (up - down) / (2.0 * h);
                let g = grad[l].biases[r];
                assert!(
                    (fd - g).abs() <= 1e-4 * g.abs().max(1e-3),
                    "b[{l}][{r}]: {fd} vs {g}"
                );
            }
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let data = toy_dataset(1, 200, 12, 3);
        let base = TrainConfig {
            width: 8,
            epochs: 0,
            seed: 5,
            ..TrainConfig::default()
        };
        let (init, _) = train_mlp(&data, None, &base).unwrap();
        let (trained, rep) = train_mlp(
            &data,
            Some(&data),
            &TrainConfig {
                epochs: 1,
                lr: 0.0,
                ..base.clone()
            },
        )
        .unwrap();
        assert_eq!(init, trained);
        assert_eq!(rep.test_accuracy, Some(accuracy(&init, &data)));
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let mut data = toy_dataset(2, 300, 10, 2);
        // make the label a simple function of the input
        let labels: Vec<usize> = (0..data.len())
            .map(|i| usize::from(data.input(i)[0] > data.input(i)[1]))
            .collect();
        data = LabeledDataset::new(10, data.inputs().to_vec(), labels).unwrap();
        let cfg = TrainConfig {
            width: 16,
            epochs: 30,
            lr: 0.1,
            batch_size: 16,
            decay_every: 10,
            decay_factor: 0.5,
            seed: 9,
        };
        let (a, ra) = train_mlp(&data, None, &cfg).unwrap();
        let (b, _) = train_mlp(&data, None, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(ra.epoch_losses.last().unwrap() < ra.epoch_losses.first().unwrap());
        assert!(ra.train_accuracy > 0.85, "{}", ra.train_accuracy);
    }

    #[test]
    fn pixel_selection() {
        let constant = LabeledDataset::new(5, vec![0.5; 20], vec![0, 1, 0, 1]).unwrap();
        assert_eq!(select_pixels(&constant, 3).unwrap().indices(), &[0, 1, 2]);
        let data = LabeledDataset::new(
            3,
            vec![0.0, 0.5, 0.2, 1.0, 0.5, 0.3, 0.0, 0.5, 0.2, 1.0, 0.5, 0.3],
            vec![0, 1, 0, 1],
        )
        .unwrap();
        assert_eq!(select_pixels(&data, 3).unwrap().indices(), &[0, 2, 1]);
        assert!(select_pixels(&data, 4).is_err());
    }
}
