//! Gradient-boosted regression trees on the logistic loss, using first and
//! second-order statistics per round.

use serde::{Deserialize, Serialize};

use super::tree::{grow, Criterion, GrowParams, SparseRows, Tree};
use super::{logit_loss, sigmoid, LabeledDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostedParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub max_depth: usize,
    /// Minimum hessian sum on each side of a split.
    pub min_child_weight: f64,
}

impl Default for BoostedParams {
    fn default() -> Self {
        Self {
            n_rounds: 100,
            learning_rate: 0.3,
            lambda: 1.0,
            gamma: 0.0,
            max_depth: 6,
            min_child_weight: 0.0,
        }
    }
}

const BASE_SCORE_CLIP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    base_score: f64,
    trees: Vec<Tree>,
    input_dim: usize,
}

impl BoostedModel {
    pub fn fit(ds: &LabeledDataset, params: &BoostedParams) -> Result<Self> {
        Self::fit_with_losses(ds, params).map(|(m, _)| m)
    }

    /// Also returns the mean training log-loss before the first round and
    /// after every round.
    pub fn fit_with_losses(ds: &LabeledDataset, params: &BoostedParams) -> Result<(Self, Vec<f64>)> {
        ds.require_both_classes()?;
        if !(params.learning_rate > 0.0) || params.lambda < 0.0 || params.gamma < 0.0 {
            return Err(Error::invalid(
                "boosting needs learning_rate > 0, lambda >= 0 and gamma >= 0",
            ));
        }
        let n = ds.len();
        let y: Vec<f64> = ds.y().iter().map(|v| f64::from(*v)).collect();
        let rate = ds.n_positive() as f64 / n as f64;
        let base_score = (rate / (1.0 - rate)).ln().clamp(-BASE_SCORE_CLIP, BASE_SCORE_CLIP);

        let data = SparseRows::from_dense(ds.x(), ds.dim());
        let grow_params = GrowParams {
            max_depth: Some(params.max_depth),
            min_samples_split: 2,
            max_features: None,
            criterion: Criterion::Newton {
                lambda: params.lambda,
                gamma: params.gamma,
                min_child_weight: params.min_child_weight,
                learning_rate: params.learning_rate,
            },
        };

        let mut margin = vec![base_score; n];
        let mean_loss = |m: &[f64]| {
            m.iter().zip(&y).map(|(z, y)| logit_loss(*z, *y)).sum::<f64>() / n as f64
        };
        let mut losses = vec![mean_loss(&margin)];
        let mut trees = Vec::with_capacity(params.n_rounds);
        for _ in 0..params.n_rounds {
            let stats: Vec<(f64, f64)> = margin
                .iter()
                .zip(&y)
                .map(|(z, y)| {
                    let p = sigmoid(*z);
                    (p - y, p * (1.0 - p))
                })
                .collect();
            let tree = grow(&data, &stats, (0..n).collect(), grow_params, None);
            for (m, x) in margin.iter_mut().zip(ds.x()) {
                *m += tree.predict(x);
            }
            trees.push(tree);
            losses.push(mean_loss(&margin));
        }
        Ok((
            Self {
                base_score,
                trees,
                input_dim: ds.dim(),
            },
            losses,
        ))
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_data() -> LabeledDataset {
        let xs = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 6.0];
        LabeledDataset::new(
            xs.iter().map(|x| vec![*x, (x * 7.0) % 3.0]).collect(),
            xs.iter().map(|x| u8::from(*x > 3.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_rounds_on_balanced_data_is_one_half() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![f64::from(i), 1.0]).collect();
        let d = LabeledDataset::new(x, vec![0, 1, 0, 1, 1, 0]).unwrap();
        let m = BoostedModel::fit(&d, &BoostedParams { n_rounds: 0, ..Default::default() }).unwrap();
        assert_eq!(m.predict_proba(&[100.0, -3.0]), 0.5);
    }

    #[test]
    fn base_score_is_clipped_logit() {
        let x: Vec<Vec<f64>> = (0..4).map(|i| vec![f64::from(i)]).collect();
        let d = LabeledDataset::new(x, vec![0, 1, 1, 1]).unwrap();
        let m = BoostedModel::fit(&d, &BoostedParams { n_rounds: 0, ..Default::default() }).unwrap();
        assert!((m.base_score() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn step_is_learned_within_five_rounds() {
        let d = step_data();
        let m = BoostedModel::fit(&d, &BoostedParams { n_rounds: 5, ..Default::default() }).unwrap();
        for (x, y) in d.x().iter().zip(d.y()) {
            assert_eq!(u8::from(m.predict_proba(x) >= 0.5), *y);
        }
        let root = &m.trees()[0].nodes()[0];
        assert_eq!(root.feature, Some(0));
        assert!(root.threshold > 3.0 && root.threshold <= 3.5);
    }

    #[test]
    fn training_loss_never_increases() {
        let x: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![f64::from(i % 7), f64::from((i * 5) % 11)])
            .collect();
        let y: Vec<u8> = (0..40).map(|i| u8::from((i * 3) % 5 < 2)).collect();
        let d = LabeledDataset::new(x, y).unwrap();
        let (_, losses) = BoostedModel::fit_with_losses(&d, &BoostedParams { n_rounds: 30, ..Default::default() }).unwrap();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{losses:?}");
        }
    }

    #[test]
    fn single_class_is_an_error() {
        let d = LabeledDataset::new(vec![vec![1.0], vec![2.0]], vec![1, 1]).unwrap();
        assert!(matches!(
            BoostedModel::fit(&d, &BoostedParams::default()),
            Err(Error::SingleClass)
        ));
    }
}
