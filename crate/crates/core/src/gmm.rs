//! Gaussian mixtures fitted by expectation-maximization, and the two-mixture
//! origin classifier at snippet level and token level.
//!
//! All density work happens in the log domain. Covariances are diagonal by
//! default; full covariances are stored as packed lower triangles.

use std::f64::consts::PI;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::corpus::Origin;
use crate::error::{Error, Result};
use crate::models::sigmoid;
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Full,
    Diagonal,
}

/// Normalizer of the covariance M-step: `(N-1)ψ` or `Nψ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceDenominator {
    NMinusOne,
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariance {
    Diagonal(Vec<f64>),
    /// Row-major packed lower triangle.
    FullLower(Vec<f64>),
}

fn packed(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

/// Cholesky factor of a packed symmetric matrix, or `None` if it is not
/// positive definite.
fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; a.len()];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[packed(i, j)];
            for k in 0..j {
                s -= l[packed(i, k)] * l[packed(j, k)];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[packed(i, i)] = s.sqrt();
            } else {
                l[packed(i, j)] = s / l[packed(j, j)];
            }
        }
    }
    Some(l)
}

#[derive(Debug, Clone, PartialEq)]
enum Factor {
    InverseVariance(Vec<f64>),
    Cholesky(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
struct ComponentParts {
    weight: f64,
    mean: Vec<f64>,
    covariance: Covariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComponentParts", into = "ComponentParts")]
pub struct GaussianComponent {
    weight: f64,
    mean: Vec<f64>,
    covariance: Covariance,
    factor: Factor,
    /// `-0.5 (d ln 2π + ln det Σ)`.
    log_norm: f64,
}

impl TryFrom<ComponentParts> for GaussianComponent {
    type Error = Error;

    fn try_from(p: ComponentParts) -> Result<Self> {
        GaussianComponent::new(p.weight, p.mean, p.covariance)
    }
}

impl From<GaussianComponent> for ComponentParts {
    fn from(c: GaussianComponent) -> Self {
        Self {
            weight: c.weight,
            mean: c.mean,
            covariance: c.covariance,
        }
    }
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: Vec<f64>, covariance: Covariance) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::invalid("a Gaussian needs at least one dimension"));
        }
        if !(weight > 0.0 && weight <= 1.0 + 1e-12) || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("component weight must lie in (0, 1] and the mean must be finite"));
        }
        let (factor, log_det) = match &covariance {
            Covariance::Diagonal(var) => {
                if var.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: var.len() });
                }
                if var.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(Error::Degenerate("variance must be positive".into()));
                }
                (
                    Factor::InverseVariance(var.iter().map(|v| 1.0 / v).collect()),
                    var.iter().map(|v| v.ln()).sum::<f64>(),
                )
            }
            Covariance::FullLower(a) => {
                if a.len() != d * (d + 1) / 2 {
                    return Err(Error::DimensionMismatch {
                        expected: d * (d + 1) / 2,
                        got: a.len(),
                    });
                }
                let l = cholesky(a, d)
                    .ok_or_else(|| Error::Degenerate("covariance is not positive definite".into()))?;
                let log_det = 2.0 * (0..d).map(|i| l[packed(i, i)].ln()).sum::<f64>();
                (Factor::Cholesky(l), log_det)
            }
        };
        Ok(Self {
            weight,
            mean,
            covariance,
            factor,
            log_norm: -0.5 * (d as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log of the (unweighted) normal density at `x`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let quad = match &self.factor {
            Factor::InverseVariance(inv) => x
                .iter()
                .zip(&self.mean)
                .zip(inv)
                .map(|((x, m), iv)| (x - m) * (x - m) * iv)
                .sum::<f64>(),
            Factor::Cholesky(l) => {
                let d = self.mean.len();
                let mut z = vec![0.0; d];
                for i in 0..d {
                    let mut s = x[i] - self.mean[i];
                    for k in 0..i {
                        s -= l[packed(i, k)] * z[k];
                    }
                    z[i] = s / l[packed(i, i)];
                }
                z.iter().map(|v| v * v).sum()
            }
        };
        self.log_norm - 0.5 * quad
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    components: Vec<GaussianComponent>,
    covariance_kind: CovarianceKind,
}

impl GmmModel {
    pub fn new(components: Vec<GaussianComponent>, covariance_kind: CovarianceKind) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::invalid("a mixture needs at least one component"));
        };
        let d = first.dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: c.dim() });
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mixture weights sum to {total}")));
        }
        Ok(Self {
            components,
            covariance_kind,
        })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn covariance_kind(&self) -> CovarianceKind {
        self.covariance_kind
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn weighted_log_densities(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.weight.ln() + c.log_density(x))
            .collect()
    }

    /// `ln p(x)` under the mixture.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.weighted_log_densities(x))
    }

    /// Posterior component memberships of `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let logs = self.weighted_log_densities(x);
        let total = log_sum_exp(&logs);
        logs.iter().map(|l| (l - total).exp()).collect()
    }

    pub fn mean_log_likelihood(&self, xs: &[Vec<f64>]) -> f64 {
        xs.iter().map(|x| self.log_density(x)).sum::<f64>() / xs.len() as f64
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            })
        }
    }
}

fn validate_matrix(x: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if x.len() < k {
        return Err(Error::invalid(format!("need at least k={k} points, got {}", x.len())));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(Error::invalid("points must have at least one dimension"));
    }
    for row in x {
        if row.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite coordinate"));
        }
    }
    Ok(d)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

pub const KMEANS_MAX_ITER: usize = 100;

/// Lloyd's algorithm from `k` seeded random distinct rows.
pub fn kmeans_init(x: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    let d = validate_matrix(x, k)?;
    let mut rng = seeded(seed);
    let mut centers: Vec<Vec<f64>> = sample(&mut rng, x.len(), k)
        .into_iter()
        .map(|i| x[i].clone())
        .collect();
    let nearest = |centers: &[Vec<f64>], p: &[f64]| {
        let mut best = (0, f64::INFINITY);
        for (j, c) in centers.iter().enumerate() {
            let dist = squared_distance(p, c);
            if dist < best.1 {
                best = (j, dist);
            }
        }
        best
    };
    let mut assignment: Vec<usize> = x.iter().map(|p| nearest(&centers, p).0).collect();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, a) in x.iter().zip(&assignment) {
            counts[*a] += 1;
            for (s, v) in sums[*a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = x
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, squared_distance(p, &centers[assignment[i]])))
                    .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b })
                    .0;
                centers[j] = x[far].clone();
                assignment[far] = j;
            }
        }
        let next: Vec<usize> = x.iter().map(|p| nearest(&centers, p).0).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Ok(KMeansResult {
        centers,
        assignment,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub k: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Added to every covariance diagonal; `None` means `1e-6 · trace/dim`
    /// of the data covariance.
    pub ridge: Option<f64>,
    pub seed: u64,
    pub covariance_kind: CovarianceKind,
    pub denominator: CovarianceDenominator,
}

impl Default for GmmParams {
    fn default() -> Self {
        Self {
            k: 2,
            tol: 1e-6,
            max_iter: 200,
            ridge: None,
            seed: 0,
            covariance_kind: CovarianceKind::Diagonal,
            denominator: CovarianceDenominator::NMinusOne,
        }
    }
}

/// Diagnostics of one EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    /// Mean log-likelihood of each parameter iterate.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
    pub reinitialized: bool,
}

const MIN_WEIGHT: f64 = 1e-12;

fn default_ridge(x: &[Vec<f64>], d: usize) -> f64 {
    let n = x.len() as f64;
    let mut trace = 0.0;
    for j in 0..d {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / n;
        trace += x.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n;
    }
    let ridge = 1e-6 * trace / d as f64;
    if ridge > 0.0 {
        ridge
    } else {
        1e-6
    }
}

/// M-step from a responsibility matrix (`resp[i][k]`). Returns `None` when a
/// component loses all its weight.
fn m_step(
    x: &[Vec<f64>],
    resp: &[Vec<f64>],
    params: &GmmParams,
    ridge: f64,
) -> Result<Option<GmmModel>> {
    let n = x.len() as f64;
    let d = x[0].len();
    let mut components = Vec::with_capacity(params.k);
    for k in 0..params.k {
        let mass: f64 = resp.iter().map(|r| r[k]).sum();
        let weight = mass / n;
        if weight < MIN_WEIGHT {
            return Ok(None);
        }
        let mut mean = vec![0.0; d];
        for (p, r) in x.iter().zip(resp) {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += r[k] * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= mass);
        let denom = match params.denominator {
            CovarianceDenominator::NMinusOne => (n - 1.0) * weight,
            CovarianceDenominator::Standard => mass,
        };
        let covariance = match params.covariance_kind {
            CovarianceKind::Diagonal => {
                let mut var = vec![0.0; d];
                for (p, r) in x.iter().zip(resp) {
                    for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
                        *s += r[k] * (v - m) * (v - m);
                    }
                }
                Covariance::Diagonal(var.into_iter().map(|s| s / denom + ridge).collect())
            }
            CovarianceKind::Full => {
                let mut a = vec![0.0; d * (d + 1) / 2];
                let mut diff = vec![0.0; d];
                for (p, r) in x.iter().zip(resp) {
                    for ((df, v), m) in diff.iter_mut().zip(p).zip(&mean) {
                        *df = v - m;
                    }
                    for i in 0..d {
                        for j in 0..=i {
                            a[packed(i, j)] += r[k] * diff[i] * diff[j];
                        }
                    }
                }
                for i in 0..d {
                    for j in 0..=i {
                        a[packed(i, j)] /= denom;
                    }
                    a[packed(i, i)] += ridge;
                }
                Covariance::FullLower(a)
            }
        };
        components.push(GaussianComponent::new(weight.min(1.0), mean, covariance)?);
    }
    Ok(Some(GmmModel {
        components,
        covariance_kind: params.covariance_kind,
    }))
}

fn hard_responsibilities(assignment: &[usize], k: usize) -> Vec<Vec<f64>> {
    assignment
        .iter()
        .map(|a| (0..k).map(|j| if j == *a { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// E-step: responsibilities and the mean log-likelihood of `model`.
fn e_step(model: &GmmModel, x: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let mut total = 0.0;
    let resp = x
        .iter()
        .map(|p| {
            let logs = model.weighted_log_densities(p);
            let lse = log_sum_exp(&logs);
            total += lse;
            logs.iter().map(|l| (l - lse).exp()).collect()
        })
        .collect();
    (resp, total / x.len() as f64)
}

pub fn em_fit(x: &[Vec<f64>], params: &GmmParams) -> Result<GmmModel> {
    em_fit_with_trace(x, params).map(|(m, _)| m)
}

pub fn em_fit_with_trace(x: &[Vec<f64>], params: &GmmParams) -> Result<(GmmModel, EmTrace)> {
    let d = validate_matrix(x, params.k)?;
    let ridge = params.ridge.unwrap_or_else(|| default_ridge(x, d));
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge must be non-negative"));
    }
    let mut trace = EmTrace {
        log_likelihoods: Vec::new(),
        converged: false,
        reinitialized: false,
    };
    let mut seed = params.seed;
    'restart: loop {
        let init = kmeans_init(x, params.k, seed)?;
        let resp = hard_responsibilities(&init.assignment, params.k);
        let Some(mut model) = m_step(x, &resp, params, ridge)? else {
            return Err(Error::Degenerate("k-means produced an empty cluster".into()));
        };
        trace.log_likelihoods.clear();
        for _ in 0..params.max_iter {
            let (resp, ll) = e_step(&model, x);
            if let Some(prev) = trace.log_likelihoods.last() {
                if ll - prev < params.tol {
                    trace.log_likelihoods.push(ll);
                    trace.converged = true;
                    return Ok((model, trace));
                }
            }
            trace.log_likelihoods.push(ll);
            match m_step(x, &resp, params, ridge)? {
                Some(next) => model = next,
                None if !trace.reinitialized => {
                    trace.reinitialized = true;
                    seed = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
                    continue 'restart;
                }
                None => {
                    return Err(Error::Degenerate(
                        "a mixture component collapsed twice".into(),
                    ))
                }
            }
        }
        let (_, ll) = e_step(&model, x);
        trace.log_likelihoods.push(ll);
        return Ok((model, trace));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmmLevel {
    Snippet,
    Token,
}

/// One mixture per class; equal class priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmClassifier {
    g_ai: GmmModel,
    g_hu: GmmModel,
    level: GmmLevel,
}

impl GmmClassifier {
    pub fn new(g_ai: GmmModel, g_hu: GmmModel, level: GmmLevel) -> Result<Self> {
        if g_ai.dim() != g_hu.dim() {
            return Err(Error::DimensionMismatch {
                expected: g_ai.dim(),
                got: g_hu.dim(),
            });
        }
        if g_ai.covariance_kind != g_hu.covariance_kind {
            return Err(Error::invalid("class mixtures use different covariance kinds"));
        }
        Ok(Self { g_ai, g_hu, level })
    }

    /// Fits one mixture on GPT vectors and one on human vectors.
    pub fn fit(
        gpt: &[Vec<f64>],
        human: &[Vec<f64>],
        params: &GmmParams,
        level: GmmLevel,
    ) -> Result<Self> {
        let g_ai = em_fit(gpt, params)?;
        let g_hu = em_fit(human, params)?;
        Self::new(g_ai, g_hu, level)
    }

    pub fn g_ai(&self) -> &GmmModel {
        &self.g_ai
    }

    pub fn g_hu(&self) -> &GmmModel {
        &self.g_hu
    }

    pub fn level(&self) -> GmmLevel {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.g_ai.dim()
    }

    /// `ln p(x; G_AI) − ln p(x; G_HU)`.
    pub fn log_ratio(&self, x: &[f64]) -> Result<f64> {
        self.g_ai.check_dim(x)?;
        Ok(self.g_ai.log_density(x) - self.g_hu.log_density(x))
    }

    /// Label and `P(GPT | x)` for one snippet vector. Ties go to human.
    pub fn classify(&self, x: &[f64]) -> Result<(Origin, f64)> {
        let score = self.log_ratio(x)?;
        Ok((label_of(score), sigmoid(score)))
    }

    /// Sums per-token log-likelihood ratios into a document score.
    pub fn classify_tokens(&self, tokens: &[Vec<f64>]) -> Result<(Origin, f64)> {
        if tokens.is_empty() {
            return Err(Error::invalid("cannot classify a document without token vectors"));
        }
        let mut score = 0.0;
        for t in tokens {
            score += self.log_ratio(t)?;
        }
        Ok((label_of(score), sigmoid(score)))
    }

    pub fn to_json(&self) -> Result<String> {
        crate::io::envelope_to_json("gmm", self.dim(), self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let (model, dim): (Self, usize) = crate::io::envelope_from_json(text, "gmm")?;
        if model.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: model.dim() });
        }
        Ok(model)
    }
}

fn label_of(score: f64) -> Origin {
    if score > 0.0 {
        Origin::Gpt
    } else {
        Origin::Human
    }
}
