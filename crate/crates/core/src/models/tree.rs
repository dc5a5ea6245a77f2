//! Binary decision trees and the split search shared by CART, the random
//! forest and gradient boosting.
//!
//! Rows are stored sparsely: zero entries of a feature are handled as one
//! aggregated block, so the cost of a node is proportional to its non-zero
//! entries. Samples with `x[feature] < threshold` go left.

use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;
use rand::seq::SliceRandom;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// `None` for leaves.
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub leaf_value: f64,
}

impl Node {
    fn leaf(value: f64) -> Self {
        Self {
            feature: None,
            threshold: 0.0,
            left: 0,
            right: 0,
            leaf_value: value,
        }
    }
}

/// Node array, root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
    input_dim: usize,
}

impl Tree {
    pub fn leaf(value: f64, input_dim: usize) -> Self {
        Self {
            nodes: vec![Node::leaf(value)],
            input_dim,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Value of the leaf reached by `x`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match node.feature {
                None => return node.leaf_value,
                Some(f) => i = if x[f] < node.threshold { node.left } else { node.right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i].feature {
                None => 0,
                Some(_) => 1 + walk(nodes, nodes[i].left).max(walk(nodes, nodes[i].right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature.is_none()).count()
    }

    /// Greedy Gini tree.
    pub fn fit_cart(ds: &LabeledDataset, params: &CartParams) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::invalid("cannot fit a tree on an empty dataset"));
        }
        let data = SparseRows::from_dense(ds.x(), ds.dim());
        let weights = vec![1u32; ds.len()];
        Ok(grow_gini(&data, ds.y(), &weights, params, None, None))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for CartParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
        }
    }
}

/// Row-major sparse copy of a dense design matrix.
#[derive(Debug, Clone)]
pub(crate) struct SparseRows {
    rows: Vec<Vec<(u32, f64)>>,
    n_features: usize,
}

impl SparseRows {
    pub(crate) fn from_dense(x: &[Vec<f64>], n_features: usize) -> Self {
        let rows = x
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(i, v)| (i as u32, *v))
                    .collect()
            })
            .collect();
        Self { rows, n_features }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Criterion {
    /// Stats are (weighted positives, weight).
    Gini,
    /// Stats are (gradient sum, hessian sum).
    Newton {
        lambda: f64,
        gamma: f64,
        min_child_weight: f64,
        learning_rate: f64,
    },
}

impl Criterion {
    fn gini_impurity(a: f64, b: f64) -> f64 {
        if b > 0.0 {
            2.0 * a * (b - a) / b
        } else {
            0.0
        }
    }

    fn newton_score(g: f64, h: f64, lambda: f64) -> f64 {
        g * g / (h + lambda)
    }

    /// Gain of a split, or `None` when the split is not admissible.
    fn gain(self, left: (f64, f64), total: (f64, f64)) -> Option<f64> {
        let right = (total.0 - left.0, total.1 - left.1);
        match self {
            Criterion::Gini => Some(
                Self::gini_impurity(total.0, total.1)
                    - Self::gini_impurity(left.0, left.1)
                    - Self::gini_impurity(right.0, right.1),
            ),
            Criterion::Newton {
                lambda,
                gamma,
                min_child_weight,
                ..
            } => {
                if left.1 < min_child_weight || right.1 < min_child_weight {
                    return None;
                }
                let gain = 0.5
                    * (Self::newton_score(left.0, left.1, lambda)
                        + Self::newton_score(right.0, right.1, lambda)
                        - Self::newton_score(total.0, total.1, lambda))
                    - gamma;
                (gain > 0.0).then_some(gain)
            }
        }
    }

    fn leaf_value(self, total: (f64, f64)) -> f64 {
        match self {
            Criterion::Gini => {
                if total.1 > 0.0 {
                    total.0 / total.1
                } else {
                    0.0
                }
            }
            Criterion::Newton {
                lambda,
                learning_rate,
                ..
            } => -learning_rate * total.0 / (total.1 + lambda),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Number of non-constant features examined per split; `None` = all.
    pub max_features: Option<usize>,
    pub criterion: Criterion,
}

#[derive(Debug, Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Split {
    fn beats(&self, other: &Option<Split>) -> bool {
        match other {
            None => true,
            Some(o) => {
                self.gain > o.gain
                    || (self.gain == o.gain
                        && (self.feature < o.feature
                            || (self.feature == o.feature && self.threshold < o.threshold)))
            }
        }
    }
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo {
        mid
    } else {
        hi
    }
}

struct Grower<'a> {
    data: &'a SparseRows,
    stats: &'a [(f64, f64)],
    params: GrowParams,
    buckets: Vec<Vec<(f64, usize)>>,
    touched: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> Grower<'a> {
    fn totals(&self, rows: &[usize]) -> (f64, f64) {
        rows.iter().fold((0.0, 0.0), |acc, r| {
            (acc.0 + self.stats[*r].0, acc.1 + self.stats[*r].1)
        })
    }

    fn grow(mut self, rows: Vec<usize>, mut rng: Option<&mut Rng>) -> Vec<Node> {
        let mut nodes = vec![Node::leaf(0.0)];
        let mut stack = vec![(0usize, rows, 0usize)];
        while let Some((idx, rows, depth)) = stack.pop() {
            let total = self.totals(&rows);
            nodes[idx].leaf_value = self.params.criterion.leaf_value(total);

            let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
            let pure = matches!(self.params.criterion, Criterion::Gini)
                && (total.0 == 0.0 || total.0 == total.1);
            if !depth_ok || pure || rows.len() < self.params.min_samples_split.max(2) {
                continue;
            }
            let Some(split) = self.best_split(&rows, total, rng.as_deref_mut()) else {
                continue;
            };
            let (left, right): (Vec<usize>, Vec<usize>) = rows
                .into_iter()
                .partition(|r| self.value(*r, split.feature) < split.threshold);

            let (li, ri) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::leaf(0.0));
            nodes.push(Node::leaf(0.0));
            let node = &mut nodes[idx];
            node.feature = Some(split.feature);
            node.threshold = split.threshold;
            node.left = li;
            node.right = ri;
            stack.push((ri, right, depth + 1));
            stack.push((li, left, depth + 1));
        }
        nodes
    }

    fn value(&self, row: usize, feature: usize) -> f64 {
        let entries = &self.data.rows[row];
        entries
            .binary_search_by_key(&(feature as u32), |e| e.0)
            .map_or(0.0, |i| entries[i].1)
    }

    fn best_split(
        &mut self,
        rows: &[usize],
        total: (f64, f64),
        rng: Option<&mut Rng>,
    ) -> Option<Split> {
        for f in self.touched.drain(..) {
            self.buckets[f].clear();
        }
        for &r in rows {
            for &(f, v) in &self.data.rows[r] {
                let f = f as usize;
                if self.buckets[f].is_empty() {
                    self.touched.push(f);
                }
                self.buckets[f].push((v, r));
            }
        }

        // Candidate order: ascending when every feature is examined, otherwise
        // a random permutation scanned until enough non-constant features
        // have been tried.
        let limit = self.params.max_features.unwrap_or(usize::MAX);
        let mut order = std::mem::take(&mut self.order);
        order.clear();
        match rng {
            Some(rng) if self.params.max_features.is_some() => {
                order.extend(0..self.data.n_features);
                order.shuffle(rng);
            }
            _ => {
                order.extend(self.touched.iter().copied());
                order.sort_unstable();
            }
        }

        let mut best: Option<Split> = None;
        let mut examined = 0;
        for &f in &order {
            if examined >= limit {
                break;
            }
            if self.buckets[f].is_empty() {
                continue;
            }
            if let Some((split, non_constant)) = self.scan_feature(f, rows.len(), total) {
                examined += usize::from(non_constant);
                if let Some(s) = split {
                    if s.beats(&best) {
                        best = Some(s);
                    }
                }
            }
        }
        self.order = order;
        best
    }

    /// Returns the best admissible split on `f` and whether `f` varies
    /// within the node.
    fn scan_feature(
        &mut self,
        f: usize,
        n_rows: usize,
        total: (f64, f64),
    ) -> Option<(Option<Split>, bool)> {
        let stats = self.stats;
        let entries = &mut self.buckets[f];
        entries.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let n_zero = n_rows - entries.len();

        // Groups of equal value: (value, a, b) in ascending order, with all
        // zero entries folded into one group.
        let mut groups: Vec<(f64, f64, f64)> = Vec::new();
        let mut nonzero = (0.0, 0.0);
        let mut zero_idx = None;
        for &(v, r) in entries.iter() {
            if n_zero > 0 && zero_idx.is_none() && v > 0.0 {
                zero_idx = Some(groups.len());
                groups.push((0.0, 0.0, 0.0));
            }
            let (a, b) = stats[r];
            nonzero.0 += a;
            nonzero.1 += b;
            match groups.last_mut() {
                Some(g) if g.0 == v => {
                    g.1 += a;
                    g.2 += b;
                }
                _ => groups.push((v, a, b)),
            }
        }
        if n_zero > 0 {
            let i = *zero_idx.get_or_insert_with(|| {
                groups.push((0.0, 0.0, 0.0));
                groups.len() - 1
            });
            groups[i] = (0.0, total.0 - nonzero.0, total.1 - nonzero.1);
        }
        if groups.len() < 2 {
            return Some((None, false));
        }

        let mut best: Option<Split> = None;
        let mut left = (0.0, 0.0);
        for w in groups.windows(2) {
            left.0 += w[0].1;
            left.1 += w[0].2;
            if let Some(gain) = self.params.criterion.gain(left, total) {
                let s = Split {
                    feature: f,
                    threshold: midpoint(w[0].0, w[1].0),
                    gain,
                };
                if s.beats(&best) {
                    best = Some(s);
                }
            }
        }
        Some((best, true))
    }
}

/// Grows one tree. `stats[r]` holds the per-row statistics the criterion
/// needs; rows not listed in `rows` are ignored.
pub(crate) fn grow(
    data: &SparseRows,
    stats: &[(f64, f64)],
    rows: Vec<usize>,
    params: GrowParams,
    rng: Option<&mut Rng>,
) -> Tree {
    let grower = Grower {
        data,
        stats,
        params,
        buckets: vec![Vec::new(); data.n_features],
        touched: Vec::new(),
        order: Vec::new(),
    };
    Tree {
        nodes: grower.grow(rows, rng),
        input_dim: data.n_features,
    }
}

/// Gini tree over rows with integer multiplicities (0 = absent).
pub(crate) fn grow_gini(
    data: &SparseRows,
    y: &[u8],
    weights: &[u32],
    params: &CartParams,
    max_features: Option<usize>,
    rng: Option<&mut Rng>,
) -> Tree {
    let stats: Vec<(f64, f64)> = y
        .iter()
        .zip(weights)
        .map(|(y, w)| (f64::from(*y) * f64::from(*w), f64::from(*w)))
        .collect();
    let rows = (0..y.len()).filter(|r| weights[*r] > 0).collect();
    grow(
        data,
        &stats,
        rows,
        GrowParams {
            max_depth: params.max_depth,
            min_samples_split: params.min_samples_split,
            max_features,
            criterion: Criterion::Gini,
        },
        rng,
    )
}
