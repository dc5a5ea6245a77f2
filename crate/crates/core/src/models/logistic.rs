//! L2-regularized logistic regression fitted by gradient descent with a
//! backtracking (Armijo) line search.
//!
//! Features are standardized internally before optimizing, and the fitted
//! coefficients are mapped back so the model applies to raw inputs.

use serde::{Deserialize, Serialize};

use super::{logit_loss, sigmoid, LabeledDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            l2: 1.0,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    weights: Vec<f64>,
    bias: f64,
}

/// Objective values after each accepted step, starting with the initial one.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticTrace {
    pub losses: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;

struct Problem {
    z: Vec<Vec<f64>>,
    y: Vec<f64>,
    l2: f64,
}

impl Problem {
    fn margins<'a>(&'a self, theta: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        let (w, b) = theta.split_at(theta.len() - 1);
        let b = b[0];
        self.z
            .iter()
            .map(move |row| b + row.iter().zip(w).map(|(x, w)| x * w).sum::<f64>())
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        let n = self.y.len() as f64;
        let data: f64 = self
            .margins(theta)
            .zip(&self.y)
            .map(|(m, y)| logit_loss(m, *y))
            .sum();
        let w = &theta[..theta.len() - 1];
        (data + 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>()) / n
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let k = theta.len() - 1;
        let n = self.y.len() as f64;
        let mut g = vec![0.0; k + 1];
        for ((m, y), row) in self.margins(theta).zip(&self.y).zip(&self.z) {
            let r = sigmoid(m) - y;
            for (gj, x) in g[..k].iter_mut().zip(row) {
                *gj += r * x;
            }
            g[k] += r;
        }
        for (gj, w) in g[..k].iter_mut().zip(theta) {
            *gj += self.l2 * w;
        }
        g.iter_mut().for_each(|v| *v /= n);
        g
    }
}

impl LogisticModel {
    pub fn from_parts(weights: Vec<f64>, bias: f64) -> Self {
        Self { weights, bias }
    }

    pub fn fit(ds: &LabeledDataset, params: &LogisticParams) -> Result<Self> {
        Self::fit_with_trace(ds, params).map(|(m, _)| m)
    }

    pub fn fit_with_trace(ds: &LabeledDataset, params: &LogisticParams) -> Result<(Self, LogisticTrace)> {
        ds.require_both_classes()?;
        if params.l2 < 0.0 || !params.l2.is_finite() {
            return Err(Error::invalid("l2 must be a finite non-negative number"));
        }
        let k = ds.dim();
        let n = ds.len() as f64;
        let mut mean = vec![0.0; k];
        for row in ds.x() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x / n;
            }
        }
        let mut scale = vec![0.0; k];
        for row in ds.x() {
            for ((s, x), m) in scale.iter_mut().zip(row).zip(&mean) {
                *s += (x - m) * (x - m) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        let problem = Problem {
            z: ds
                .x()
                .iter()
                .map(|row| {
                    row.iter()
                        .zip(&mean)
                        .zip(&scale)
                        .map(|((x, m), s)| (x - m) / s)
                        .collect()
                })
                .collect(),
            y: ds.y().iter().map(|v| f64::from(*v)).collect(),
            l2: params.l2,
        };

        let mut theta = vec![0.0; k + 1];
        let mut loss = problem.loss(&theta);
        let mut trace = LogisticTrace {
            losses: vec![loss],
            iterations: 0,
            converged: false,
        };
        let mut step = 1.0;
        for _ in 0..params.max_iter {
            let g = problem.gradient(&theta);
            let g2: f64 = g.iter().map(|v| v * v).sum();
            if g2.sqrt() < params.tol {
                trace.converged = true;
                break;
            }
            step *= 2.0;
            let accepted = loop {
                let candidate: Vec<f64> = theta.iter().zip(&g).map(|(t, g)| t - step * g).collect();
                let candidate_loss = problem.loss(&candidate);
                if candidate_loss <= loss - ARMIJO_C * step * g2 {
                    break Some((candidate, candidate_loss));
                }
                step *= 0.5;
                if step < MIN_STEP {
                    break None;
                }
            };
            let Some((next, next_loss)) = accepted else {
                trace.converged = true;
                break;
            };
            theta = next;
            loss = next_loss;
            trace.losses.push(loss);
            trace.iterations += 1;
        }

        let weights: Vec<f64> = theta[..k].iter().zip(&scale).map(|(w, s)| w / s).collect();
        let bias = theta[k] - weights.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>();
        Ok((Self { weights, bias }, trace))
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn input_dim(&self) -> usize {
        self.weights.len()
    }

    /// `w·x + b`.
    pub fn decision_function(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision_function(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> LabeledDataset {
        let xs: Vec<f64> = (1..=10)
            .flat_map(|i| {
                let v = 0.1 * f64::from(i);
                [-v, v]
            })
            .collect();
        LabeledDataset::new(
            xs.iter().map(|x| vec![*x]).collect(),
            xs.iter().map(|x| u8::from(*x > 0.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_one_half() {
        let m = LogisticModel::from_parts(vec![0.0; 3], 0.0);
        assert_eq!(m.predict_proba(&[5.0, -2.0, 1e9]), 0.5);
    }

    #[test]
    fn separable_1d_is_fit_exactly() {
        let d = separable();
        let (m, trace) = LogisticModel::fit_with_trace(&d, &LogisticParams::default()).unwrap();
        for (x, y) in d.x().iter().zip(d.y()) {
            assert_eq!(u8::from(m.predict_proba(x) >= 0.5), *y);
        }
        assert!(trace.converged);
    }

    #[test]
    fn accepted_steps_decrease_loss() {
        let x: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![f64::from(i % 7) * 100.0, f64::from((i * 3) % 5)])
            .collect();
        let y: Vec<u8> = (0..30).map(|i| u8::from((i * 7) % 4 < 2)).collect();
        let d = LabeledDataset::new(x, y).unwrap();
        let (_, trace) = LogisticModel::fit_with_trace(&d, &LogisticParams { max_iter: 200, ..Default::default() }).unwrap();
        for w in trace.losses.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let d = separable();
        let p = LogisticParams { tol: 1e-9, max_iter: 5000, ..Default::default() };
        let (m, trace) = LogisticModel::fit_with_trace(&d, &p).unwrap();
        assert!(trace.converged);
        // finite-difference check of the raw-scale bias direction
        let h = 1e-6;
        let loss = |b: f64| {
            d.x().iter()
                .zip(d.y())
                .map(|(x, y)| logit_loss(m.decision_function(x) - m.bias() + b, f64::from(*y)))
                .sum::<f64>()
        };
        let slope = (loss(m.bias() + h) - loss(m.bias() - h)) / (2.0 * h);
        assert!(slope.abs() < 1e-5, "{slope}");
    }

    #[test]
    fn prediction_depends_on_linear_score_only() {
        let m = LogisticModel::from_parts(vec![1.0, -2.0], 0.5);
        assert_eq!(m.predict_proba(&[2.0, 1.0]), m.predict_proba(&[4.0, 2.0]));
    }

    #[test]
    fn single_class_is_an_error() {
        let d = LabeledDataset::new(vec![vec![1.0], vec![2.0]], vec![0, 0]).unwrap();
        assert!(matches!(
            LogisticModel::fit(&d, &LogisticParams::default()),
            Err(Error::SingleClass)
        ));
    }
}
