//! Bagged Gini trees with per-split feature subsampling.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tree::{grow_gini, CartParams, SparseRows, Tree};
use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub seed: u64,
    pub bootstrap: bool,
    /// Candidate features per split; `None` means `ceil(sqrt(k))`.
    pub max_features: Option<usize>,
    pub tree: CartParams,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            seed: 0,
            bootstrap: true,
            max_features: None,
            tree: CartParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<Tree>,
    input_dim: usize,
}

impl ForestModel {
    pub fn fit(ds: &LabeledDataset, params: &ForestParams) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::invalid("cannot fit a forest on an empty dataset"));
        }
        if params.n_trees == 0 {
            return Err(Error::invalid("a forest needs at least one tree"));
        }
        let k = ds.dim();
        let max_features = params
            .max_features
            .unwrap_or_else(|| (k as f64).sqrt().ceil() as usize)
            .clamp(1, k.max(1));
        let data = SparseRows::from_dense(ds.x(), k);
        let n = ds.len();
        let mut rng = seeded(params.seed);
        let trees = (0..params.n_trees)
            .map(|_| {
                let mut weights = vec![if params.bootstrap { 0u32 } else { 1 }; n];
                if params.bootstrap {
                    for _ in 0..n {
                        weights[rng.random_range(0..n)] += 1;
                    }
                }
                grow_gini(
                    &data,
                    ds.y(),
                    &weights,
                    &params.tree,
                    Some(max_features),
                    Some(&mut rng),
                )
            })
            .collect();
        Ok(Self { trees, input_dim: k })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Mean of the per-tree leaf probabilities.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, seed: u64) -> LabeledDataset {
        let mut rng = seeded(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = (i % 2) as u8;
            let c = if label == 1 { 2.0 } else { -2.0 };
            x.push(vec![
                c + rng.random_range(-1.0..1.0),
                c + rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]);
            y.push(label);
        }
        LabeledDataset::new(x, y).unwrap()
    }

    #[test]
    fn one_tree_without_bootstrap_is_cart() {
        let d = blobs(60, 1);
        let f = ForestModel::fit(
            &d,
            &ForestParams {
                n_trees: 1,
                bootstrap: false,
                max_features: Some(d.dim()),
                ..Default::default()
            },
        )
        .unwrap();
        let cart = Tree::fit_cart(&d, &CartParams::default()).unwrap();
        assert_eq!(f.trees()[0], cart);
    }

    #[test]
    fn deterministic_and_mean_of_trees() {
        let d = blobs(80, 2);
        let p = ForestParams {
            n_trees: 15,
            seed: 9,
            ..Default::default()
        };
        let a = ForestModel::fit(&d, &p).unwrap();
        let b = ForestModel::fit(&d, &p).unwrap();
        assert_eq!(a, b);
        let x = [0.3, -0.1, 0.5];
        let mean = a.trees().iter().map(|t| t.predict(&x)).sum::<f64>() / 15.0;
        assert!((a.predict_proba(&x) - mean).abs() < 1e-15);
        let c = ForestModel::fit(&d, &ForestParams { seed: 10, ..p }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn separable_holdout() {
        let train = blobs(200, 3);
        let test = blobs(200, 4);
        let f = ForestModel::fit(&train, &ForestParams { n_trees: 25, ..Default::default() }).unwrap();
        let hits = test
            .x()
            .iter()
            .zip(test.y())
            .filter(|(x, y)| u8::from(f.predict_proba(x) >= 0.5) == **y)
            .count();
        assert!(hits as f64 / 200.0 >= 0.95);
    }

    #[test]
    fn single_class_gives_constant() {
        let d = LabeledDataset::new(vec![vec![1.0], vec![2.0]], vec![0, 0]).unwrap();
        let f = ForestModel::fit(&d, &ForestParams { n_trees: 3, ..Default::default() }).unwrap();
        assert_eq!(f.predict_proba(&[1.5]), 0.0);
    }
}
