//! Fully connected network with ReLU hidden layers and a sigmoid output,
//! trained on binary cross-entropy with Adam.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{logit_loss, sigmoid, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: vec![768, 512, 128, 32, 8],
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// Dense layer; `weights[j * n_in + i]` connects input `i` to output `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    fn forward(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(j, b)| {
            let row = &self.weights[j * self.n_in..(j + 1) * self.n_in];
            b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        }));
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
}

impl Mlp {
    /// Glorot-uniform weights and zero biases for the widths
    /// `[input, hidden..., 1]`; inputs are passed through unscaled.
    pub fn initialized(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut rng = seeded(seed);
        let widths: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let layers = widths
            .windows(2)
            .map(|w| {
                let mut layer = Layer::zeros(w[0], w[1]);
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                for v in &mut layer.weights {
                    *v = rng.random_range(-limit..limit);
                }
                layer
            })
            .collect();
        Ok(Self {
            layers,
            input_mean: vec![0.0; input_dim],
            input_scale: vec![1.0; input_dim],
        })
    }

    pub fn fit(ds: &LabeledDataset, params: &MlpParams) -> Result<Self> {
        Self::fit_with_losses(ds, params).map(|(m, _)| m)
    }

    /// Also returns the mean training loss of each epoch.
    pub fn fit_with_losses(ds: &LabeledDataset, params: &MlpParams) -> Result<(Self, Vec<f64>)> {
        ds.require_both_classes()?;
        if params.batch_size == 0 || !(params.learning_rate > 0.0) {
            return Err(Error::invalid("batch_size and learning_rate must be positive"));
        }
        let mut model = Self::initialized(ds.dim(), &params.hidden, params.seed)?;
        let n = ds.len() as f64;
        for row in ds.x() {
            for (m, x) in model.input_mean.iter_mut().zip(row) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; ds.dim()];
        for row in ds.x() {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&model.input_mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        model.input_scale = var
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();

        let mut rng = seeded(params.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut m1: Vec<Layer> = model.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect();
        let mut m2 = m1.clone();
        let mut t = 0i32;
        let mut order: Vec<usize> = (0..ds.len()).collect();
        let mut epoch_losses = Vec::with_capacity(params.epochs);
        for _ in 0..params.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(params.batch_size) {
                let xs: Vec<&[f64]> = batch.iter().map(|i| ds.x()[*i].as_slice()).collect();
                let ys: Vec<u8> = batch.iter().map(|i| ds.y()[*i]).collect();
                let (loss, grads) = model.gradient_of(&xs, &ys);
                total += loss * batch.len() as f64;
                t += 1;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                for (((layer, g), a), b) in model.layers.iter_mut().zip(&grads).zip(&mut m1).zip(&mut m2) {
                    for (((p, g), a), b) in layer
                        .params_mut()
                        .zip(g.params())
                        .zip(a.params_mut())
                        .zip(b.params_mut())
                    {
                        *a = BETA1 * *a + (1.0 - BETA1) * g;
                        *b = BETA2 * *b + (1.0 - BETA2) * g * g;
                        *p -= params.learning_rate * (*a / c1) / ((*b / c2).sqrt() + EPSILON);
                    }
                }
            }
            epoch_losses.push(total / n);
        }
        Ok((model, epoch_losses))
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    /// Layer widths including input and output.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.n_out))
            .collect()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    /// Pre-activations of every layer for one input.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let input = self.standardize(x);
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(&act, &mut z);
            if i + 1 < self.layers.len() {
                act = z.iter().map(|v| v.max(0.0)).collect();
            }
            pre.push(z);
        }
        (input, pre)
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.forward(x).1.last().expect("at least one layer")[0]
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Mean binary cross-entropy over a batch.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[u8]) -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(x, y)| logit_loss(self.logit(x), f64::from(*y)))
            .sum::<f64>()
            / xs.len() as f64
    }

    /// Mean batch loss and its gradient, laid out like [`Mlp::layers`].
    pub fn gradient(&self, xs: &[Vec<f64>], ys: &[u8]) -> (f64, Vec<Layer>) {
        let xs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        self.gradient_of(&xs, ys)
    }

    fn gradient_of(&self, xs: &[&[f64]], ys: &[u8]) -> (f64, Vec<Layer>) {
        let scale = 1.0 / xs.len() as f64;
        let mut grads: Vec<Layer> = self.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect();
        let mut loss = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let (input, pre) = self.forward(x);
            let z = pre.last().expect("at least one layer")[0];
            let y = f64::from(*y);
            loss += logit_loss(z, y) * scale;
            let mut delta = vec![(sigmoid(z) - y) * scale];
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let relu_in: Vec<f64>;
                let a_in: &[f64] = if l == 0 {
                    &input
                } else {
                    relu_in = pre[l - 1].iter().map(|v| v.max(0.0)).collect();
                    &relu_in
                };
                let g = &mut grads[l];
                for (j, d) in delta.iter().enumerate() {
                    g.bias[j] += d;
                    let row = &mut g.weights[j * layer.n_in..(j + 1) * layer.n_in];
                    for (gw, a) in row.iter_mut().zip(a_in) {
                        *gw += d * a;
                    }
                }
                if l > 0 {
                    let mut prev = vec![0.0; layer.n_in];
                    for (j, d) in delta.iter().enumerate() {
                        let row = &layer.weights[j * layer.n_in..(j + 1) * layer.n_in];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += w * d;
                        }
                    }
                    for (p, z) in prev.iter_mut().zip(&pre[l - 1]) {
                        if *z <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        (loss, grads)
    }
}
