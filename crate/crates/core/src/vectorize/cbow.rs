//! Continuous-bag-of-words token embeddings trained with negative sampling.
//!
//! For each position the context vector is the mean of the input vectors of
//! the tokens within `±window`. It is pushed toward the output vector of the
//! centre token and away from `negative_k` tokens drawn from the unigram
//! distribution raised to 0.75. Training is single-threaded so a seed fully
//! determines the model.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::DenseVector;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tokenizer::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbowParams {
    pub dim: usize,
    pub window: usize,
    pub min_count: usize,
    pub negative_k: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for CbowParams {
    fn default() -> Self {
        Self {
            dim: 1536,
            window: 5,
            min_count: 1,
            negative_k: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "CbowParts", into = "CbowParts")]
pub struct CbowModel {
    params: CbowParams,
    /// Vocabulary tokens, most frequent first.
    tokens: Vec<u32>,
    counts: Vec<u64>,
    rows: HashMap<u32, usize>,
    input: Vec<f32>,
    output: Vec<f32>,
    epoch_losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CbowParts {
    params: CbowParams,
    tokens: Vec<u32>,
    counts: Vec<u64>,
    input: Vec<f32>,
    output: Vec<f32>,
    epoch_losses: Vec<f64>,
}

impl From<CbowParts> for CbowModel {
    fn from(p: CbowParts) -> Self {
        let rows = p.tokens.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        Self {
            params: p.params,
            tokens: p.tokens,
            counts: p.counts,
            rows,
            input: p.input,
            output: p.output,
            epoch_losses: p.epoch_losses,
        }
    }
}

impl From<CbowModel> for CbowParts {
    fn from(m: CbowModel) -> Self {
        Self {
            params: m.params,
            tokens: m.tokens,
            counts: m.counts,
            input: m.input,
            output: m.output,
            epoch_losses: m.epoch_losses,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `-ln σ(x)`, stable for large |x|.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

impl CbowModel {
    pub fn fit(docs: &[TokenSequence], params: CbowParams) -> Result<Self> {
        if params.dim == 0 || params.window == 0 {
            return Err(Error::invalid("CBOW dim and window must be positive"));
        }
        let mut model = Self::init(docs, params)?;
        let docs = model.encode_docs(docs);
        let total_positions: usize = docs.iter().map(Vec::len).sum::<usize>() * params.epochs;

        let table = model.noise_distribution()?;
        let mut rng = seeded(params.seed.wrapping_add(1));
        let mut processed = 0usize;
        let mut h = vec![0f64; params.dim];
        let mut grad = vec![0f64; params.dim];
        for _ in 0..params.epochs {
            let mut loss = 0.0;
            let mut n = 0usize;
            for doc in &docs {
                for t in 0..doc.len() {
                    let progress = processed as f64 / total_positions.max(1) as f64;
                    let lr = params.learning_rate * (1.0 - progress).max(1e-4);
                    processed += 1;
                    let negatives: Vec<usize> = (0..params.negative_k)
                        .map(|_| table.sample(&mut rng))
                        .collect();
                    if let Some(l) = model.step(doc, t, &negatives, lr, &mut h, &mut grad) {
                        loss += l;
                        n += 1;
                    }
                }
            }
            model.epoch_losses.push(if n > 0 { loss / n as f64 } else { 0.0 });
        }
        Ok(model)
    }

    fn init(docs: &[TokenSequence], params: CbowParams) -> Result<Self> {
        let mut counts: HashMap<u32, u64> = HashMap::new();
        for doc in docs {
            for t in &doc.ids {
                *counts.entry(*t).or_default() += 1;
            }
        }
        let mut vocab: Vec<(u32, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c as usize >= params.min_count)
            .collect();
        if vocab.is_empty() {
            return Err(Error::invalid("CBOW corpus has no token above min_count"));
        }
        vocab.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut rng = seeded(params.seed);
        let scale = 0.5 / params.dim as f32;
        let input = (0..vocab.len() * params.dim)
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        Ok(CbowParts {
            params,
            tokens: vocab.iter().map(|v| v.0).collect(),
            counts: vocab.iter().map(|v| v.1).collect(),
            input,
            output: vec![0.0; vocab.len() * params.dim],
            epoch_losses: Vec::new(),
        }
        .into())
    }

    fn encode_docs(&self, docs: &[TokenSequence]) -> Vec<Vec<usize>> {
        docs.iter()
            .map(|d| d.ids.iter().filter_map(|t| self.rows.get(t).copied()).collect())
            .collect()
    }

    fn noise_distribution(&self) -> Result<WeightedIndex<f64>> {
        WeightedIndex::new(self.counts.iter().map(|c| (*c as f64).powf(0.75)))
            .map_err(|e| Error::invalid(format!("noise distribution: {e}")))
    }

    fn context_mean(&self, doc: &[usize], t: usize, h: &mut [f64]) -> usize {
        let dim = self.params.dim;
        let lo = t.saturating_sub(self.params.window);
        let hi = (t + self.params.window + 1).min(doc.len());
        h.fill(0.0);
        let mut n = 0;
        for (j, &row) in doc.iter().enumerate().take(hi).skip(lo) {
            if j == t {
                continue;
            }
            for (acc, v) in h.iter_mut().zip(&self.input[row * dim..(row + 1) * dim]) {
                *acc += *v as f64;
            }
            n += 1;
        }
        if n > 0 {
            h.iter_mut().for_each(|x| *x /= n as f64);
        }
        n
    }

    /// Loss of one position under fixed negatives, without updating.
    fn position_loss(&self, doc: &[usize], t: usize, negatives: &[usize], h: &mut [f64]) -> Option<f64> {
        if self.context_mean(doc, t, h) == 0 {
            return None;
        }
        let target = doc[t];
        let mut loss = neg_log_sigmoid(self.dot_output(target, h));
        for &neg in negatives.iter().filter(|n| **n != target) {
            loss += neg_log_sigmoid(-self.dot_output(neg, h));
        }
        Some(loss)
    }

    fn dot_output(&self, row: usize, h: &[f64]) -> f64 {
        let dim = self.params.dim;
        self.output[row * dim..(row + 1) * dim]
            .iter()
            .zip(h)
            .map(|(a, b)| *a as f64 * b)
            .sum()
    }

    fn step(
        &mut self,
        doc: &[usize],
        t: usize,
        negatives: &[usize],
        lr: f64,
        h: &mut [f64],
        grad: &mut [f64],
    ) -> Option<f64> {
        let dim = self.params.dim;
        let n_ctx = self.context_mean(doc, t, h);
        if n_ctx == 0 {
            return None;
        }
        let target = doc[t];
        grad.fill(0.0);
        let mut loss = 0.0;
        let targets = std::iter::once((target, 1.0)).chain(
            negatives
                .iter()
                .filter(|n| **n != target)
                .map(|n| (*n, 0.0)),
        );
        for (row, label) in targets {
            let score = self.dot_output(row, h);
            loss += if label > 0.5 {
                neg_log_sigmoid(score)
            } else {
                neg_log_sigmoid(-score)
            };
            let g = (label - sigmoid(score)) * lr;
            let out = &mut self.output[row * dim..(row + 1) * dim];
            for ((acc, o), x) in grad.iter_mut().zip(out.iter_mut()).zip(h.iter()) {
                *acc += g * *o as f64;
                *o += (g * x) as f32;
            }
        }
        // The context vector is a mean, so each member gets 1/n of the gradient.
        let share = 1.0 / n_ctx as f64;
        let lo = t.saturating_sub(self.params.window);
        let hi = (t + self.params.window + 1).min(doc.len());
        for (j, &row) in doc.iter().enumerate().take(hi).skip(lo) {
            if j == t {
                continue;
            }
            for (v, g) in self.input[row * dim..(row + 1) * dim].iter_mut().zip(grad.iter()) {
                *v += (g * share) as f32;
            }
        }
        Some(loss)
    }

    /// Mean negative-sampling loss over `docs` with negatives drawn from
    /// `seed`; used to monitor training.
    pub fn loss(&self, docs: &[TokenSequence], seed: u64) -> Result<f64> {
        let table = self.noise_distribution()?;
        let mut rng = seeded(seed);
        let mut h = vec![0f64; self.params.dim];
        let (mut total, mut n) = (0.0, 0usize);
        for doc in self.encode_docs(docs) {
            for t in 0..doc.len() {
                let negatives: Vec<usize> = (0..self.params.negative_k)
                    .map(|_| table.sample(&mut rng))
                    .collect();
                if let Some(l) = self.position_loss(&doc, t, &negatives, &mut h) {
                    total += l;
                    n += 1;
                }
            }
        }
        Ok(if n > 0 { total / n as f64 } else { 0.0 })
    }

    pub fn params(&self) -> &CbowParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// Mean training loss per epoch.
    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    /// Input ("word") vector of a token, if it is in the vocabulary.
    pub fn vector(&self, token: u32) -> Option<DenseVector> {
        let dim = self.params.dim;
        self.rows.get(&token).map(|r| {
            DenseVector(
                self.input[r * dim..(r + 1) * dim]
                    .iter()
                    .map(|v| *v as f64)
                    .collect(),
            )
        })
    }

    /// Vectors of the in-vocabulary tokens of `doc`, in order.
    pub fn token_vectors(&self, doc: &TokenSequence) -> Vec<DenseVector> {
        doc.ids.iter().filter_map(|t| self.vector(*t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CbowParams {
        CbowParams {
            dim: 16,
            window: 2,
            epochs: 3,
            seed: 11,
            ..CbowParams::default()
        }
    }

    fn corpus() -> Vec<TokenSequence> {
        (0..30)
            .map(|i| {
                let ids: Vec<u32> = (0..12).map(|j| ((i * 7 + j * 3) % 10) as u32).collect();
                TokenSequence::new(ids, 12)
            })
            .collect()
    }

    #[test]
    fn shapes_and_finiteness() {
        let m = CbowModel::fit(&corpus(), small()).unwrap();
        assert_eq!(m.vocab_size(), 10);
        for t in 0..10 {
            let v = m.vector(t).unwrap();
            assert_eq!(v.dim(), 16);
            assert!(v.values().iter().all(|x| x.is_finite()));
        }
        assert!(m.vector(42).is_none());
        assert_eq!(m.epoch_losses().len(), 3);
    }

    #[test]
    fn deterministic() {
        let a = CbowModel::fit(&corpus(), small()).unwrap();
        let b = CbowModel::fit(&corpus(), small()).unwrap();
        assert_eq!(a, b);
        let c = CbowModel::fit(&corpus(), CbowParams { seed: 12, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn min_count_filters_vocabulary() {
        let docs = vec![TokenSequence::new(vec![1, 1, 2, 3, 1], 5)];
        let m = CbowModel::fit(&docs, CbowParams { min_count: 2, ..small() }).unwrap();
        assert_eq!(m.tokens(), &[1]);
        let none = CbowModel::fit(&docs, CbowParams { min_count: 9, ..small() });
        assert!(none.is_err());
    }

    #[test]
    fn first_epoch_lowers_loss() {
        let docs = corpus();
        let init = CbowModel::fit(&docs, CbowParams { epochs: 0, ..small() }).unwrap();
        let one = CbowModel::fit(&docs, CbowParams { epochs: 1, ..small() }).unwrap();
        let before = init.loss(&docs, 5).unwrap();
        let after = one.loss(&docs, 5).unwrap();
        // zero output vectors give exactly (1 + k) ln 2 per position, minus
        // the negatives that collide with the target
        assert!(before <= 6.0 * std::f64::consts::LN_2 + 1e-12);
        assert!(after < before, "{after} !< {before}");
    }
}
