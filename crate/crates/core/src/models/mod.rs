//! Supervised classifiers over dense feature rows.
//!
//! Label 1 is the GPT class. Every model reports `P(GPT | x)` via
//! [`TrainedModel::predict_proba`].

mod boosted;
mod forest;
mod logistic;
mod mlp;
mod tree;

pub use boosted::{BoostedModel, BoostedParams};
pub use forest::{ForestModel, ForestParams};
pub use logistic::{LogisticModel, LogisticParams};
pub use mlp::{Mlp, MlpParams};
pub use tree::{CartParams, Node, Tree};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version written into every persisted model envelope.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    x: Vec<Vec<f64>>,
    y: Vec<u8>,
    dim: usize,
    pub feature_names: Option<Vec<String>>,
}

impl LabeledDataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<u8>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::invalid(format!(
                "{} rows but {} labels",
                x.len(),
                y.len()
            )));
        }
        let dim = x.first().map_or(0, Vec::len);
        for (i, row) in x.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("row {i} has a non-finite entry")));
            }
        }
        if let Some(bad) = y.iter().find(|l| **l > 1) {
            return Err(Error::invalid(format!("label {bad} is not binary")));
        }
        Ok(Self {
            x,
            y,
            dim,
            feature_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Self {
        self.feature_names = Some(names);
        self
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn n_positive(&self) -> usize {
        self.y.iter().filter(|l| **l == 1).count()
    }

    fn has_both_classes(&self) -> bool {
        let pos = self.n_positive();
        pos > 0 && pos < self.len()
    }

    pub(crate) fn require_both_classes(&self) -> Result<()> {
        if self.has_both_classes() {
            Ok(())
        } else {
            Err(Error::SingleClass)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Cart,
    Forest,
    Boosted,
    Mlp,
    Constant,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Cart => "cart",
            ModelKind::Forest => "forest",
            ModelKind::Boosted => "boosted",
            ModelKind::Mlp => "mlp",
            ModelKind::Constant => "constant",
        }
    }
}

/// A fitted supervised classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "snake_case")]
pub enum TrainedModel {
    Logistic(LogisticModel),
    Cart(Tree),
    Forest(ForestModel),
    Boosted(BoostedModel),
    Mlp(Mlp),
    /// Returns the same probability for every input; used as a baseline.
    Constant { probability: f64, input_dim: usize },
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Logistic(_) => ModelKind::Logistic,
            TrainedModel::Cart(_) => ModelKind::Cart,
            TrainedModel::Forest(_) => ModelKind::Forest,
            TrainedModel::Boosted(_) => ModelKind::Boosted,
            TrainedModel::Mlp(_) => ModelKind::Mlp,
            TrainedModel::Constant { .. } => ModelKind::Constant,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TrainedModel::Logistic(m) => m.input_dim(),
            TrainedModel::Cart(m) => m.input_dim(),
            TrainedModel::Forest(m) => m.input_dim(),
            TrainedModel::Boosted(m) => m.input_dim(),
            TrainedModel::Mlp(m) => m.input_dim(),
            TrainedModel::Constant { input_dim, .. } => *input_dim,
        }
    }

    /// `P(GPT | x)`, always within `[0, 1]`.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let p = match self {
            TrainedModel::Logistic(m) => m.predict_proba(x),
            TrainedModel::Cart(m) => m.predict(x),
            TrainedModel::Forest(m) => m.predict_proba(x),
            TrainedModel::Boosted(m) => m.predict_proba(x),
            TrainedModel::Mlp(m) => m.predict_proba(x),
            TrainedModel::Constant { probability, .. } => *probability,
        };
        Ok(p.clamp(0.0, 1.0))
    }

    pub fn predict(&self, x: &[f64], threshold: f64) -> Result<u8> {
        Ok(threshold_label(self.predict_proba(x)?, threshold))
    }

    /// JSON envelope `{format_version, kind, input_dim, parameters}`.
    pub fn to_json(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        let map = value.as_object_mut().expect("tagged enum serializes to an object");
        map.insert("format_version".into(), MODEL_FORMAT_VERSION.into());
        map.insert("input_dim".into(), self.input_dim().into());
        Ok(serde_json::to_string(&value)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        let map = value
            .as_object_mut()
            .ok_or_else(|| Error::invalid("model file is not a JSON object"))?;
        let version = map.remove("format_version").and_then(|v| v.as_u64());
        if version != Some(u64::from(MODEL_FORMAT_VERSION)) {
            return Err(Error::invalid(format!(
                "unsupported model format version {version:?}"
            )));
        }
        let declared = map
            .remove("input_dim")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::invalid("model file lacks input_dim"))?;
        let model: Self = serde_json::from_value(value)?;
        if model.input_dim() as u64 != declared {
            return Err(Error::DimensionMismatch {
                expected: declared as usize,
                got: model.input_dim(),
            });
        }
        Ok(model)
    }

    /// Writes the envelope atomically.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// A model family with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Logistic(LogisticParams),
    Cart(CartParams),
    Forest(ForestParams),
    Boosted(BoostedParams),
    Mlp(MlpParams),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Logistic(_) => ModelKind::Logistic,
            ModelConfig::Cart(_) => ModelKind::Cart,
            ModelConfig::Forest(_) => ModelKind::Forest,
            ModelConfig::Boosted(_) => ModelKind::Boosted,
            ModelConfig::Mlp(_) => ModelKind::Mlp,
        }
    }

    /// Default hyperparameters for a family.
    pub fn default_for(kind: ModelKind) -> Result<Self> {
        Ok(match kind {
            ModelKind::Logistic => ModelConfig::Logistic(LogisticParams::default()),
            ModelKind::Cart => ModelConfig::Cart(CartParams::default()),
            ModelKind::Forest => ModelConfig::Forest(ForestParams::default()),
            ModelKind::Boosted => ModelConfig::Boosted(BoostedParams::default()),
            ModelKind::Mlp => ModelConfig::Mlp(MlpParams::default()),
            ModelKind::Constant => return Err(Error::invalid("the constant model is not fitted")),
        })
    }

    /// Replaces the seed of seeded families.
    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            ModelConfig::Forest(p) => p.seed = seed,
            ModelConfig::Mlp(p) => p.seed = seed,
            _ => {}
        }
        self
    }

    pub fn fit(&self, ds: &LabeledDataset) -> Result<TrainedModel> {
        Ok(match self {
            ModelConfig::Logistic(p) => TrainedModel::Logistic(LogisticModel::fit(ds, p)?),
            ModelConfig::Cart(p) => TrainedModel::Cart(Tree::fit_cart(ds, p)?),
            ModelConfig::Forest(p) => TrainedModel::Forest(ForestModel::fit(ds, p)?),
            ModelConfig::Boosted(p) => TrainedModel::Boosted(BoostedModel::fit(ds, p)?),
            ModelConfig::Mlp(p) => TrainedModel::Mlp(Mlp::fit(ds, p)?),
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "logistic" => ModelKind::Logistic,
            "cart" => ModelKind::Cart,
            "forest" => ModelKind::Forest,
            "boosted" => ModelKind::Boosted,
            "mlp" => ModelKind::Mlp,
            "constant" => ModelKind::Constant,
            other => return Err(Error::invalid(format!("unknown model kind '{other}'"))),
        })
    }
}

/// Label 1 iff `p >= threshold`.
pub fn threshold_label(p: f64, threshold: f64) -> u8 {
    u8::from(p >= threshold)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit, `ln(1 + e^z) - y z`, stable for any z.
pub(crate) fn logit_loss(z: f64, y: f64) -> f64 {
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    softplus - y * z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_validation() {
        assert!(LabeledDataset::new(vec![vec![1.0]], vec![0, 1]).is_err());
        assert!(LabeledDataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0, 1]).is_err());
        assert!(LabeledDataset::new(vec![vec![f64::INFINITY]], vec![0]).is_err());
        assert!(LabeledDataset::new(vec![vec![1.0]], vec![2]).is_err());
        let ds = LabeledDataset::new(vec![vec![1.0], vec![2.0]], vec![0, 1]).unwrap();
        assert_eq!(ds.dim(), 1);
        assert!(ds.require_both_classes().is_ok());
    }

    #[test]
    fn threshold_rule() {
        assert_eq!(threshold_label(0.5, 0.5), 1);
        assert_eq!(threshold_label(0.49, 0.5), 0);
        assert_eq!(threshold_label(0.0, 0.0), 1);
    }

    #[test]
    fn constant_passthrough_and_dim_check() {
        let m = TrainedModel::Constant {
            probability: 0.25,
            input_dim: 2,
        };
        assert_eq!(m.predict_proba(&[9.0, -3.0]).unwrap(), 0.25);
        assert_eq!(m.predict(&[9.0, -3.0], 0.5).unwrap(), 0);
        assert!(matches!(
            m.predict_proba(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn envelope_round_trip() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![f64::from(i), f64::from(i % 3)]).collect();
        let y: Vec<u8> = (0..12).map(|i| u8::from(i >= 6)).collect();
        let ds = LabeledDataset::new(x, y).unwrap();
        for kind in [ModelKind::Logistic, ModelKind::Cart, ModelKind::Forest, ModelKind::Boosted] {
            let config = match ModelConfig::default_for(kind).unwrap() {
                ModelConfig::Forest(p) => ModelConfig::Forest(ForestParams { n_trees: 3, ..p }),
                s => s,
            };
            let model = config.fit(&ds).unwrap();
            let text = model.to_json().unwrap();
            let v: serde_json::Value = serde_json::from_str(&text).unwrap();
            assert_eq!(v["format_version"], 1);
            assert_eq!(v["kind"], kind.as_str());
            assert_eq!(v["input_dim"], 2);
            let back = TrainedModel::from_json(&text).unwrap();
            assert_eq!(back, model);
        }
        let mlp = TrainedModel::Mlp(Mlp::initialized(2, &[3], 1).unwrap());
        assert_eq!(TrainedModel::from_json(&mlp.to_json().unwrap()).unwrap(), mlp);
        let bad = r#"{"format_version":99,"kind":"constant","input_dim":1,"parameters":{"probability":0.5,"input_dim":1}}"#;
        assert!(TrainedModel::from_json(bad).is_err());
    }

    #[test]
    fn tree_nodes_serialize_as_arrays_of_records() {
        let t = TrainedModel::Cart(Tree::leaf(0.25, 3));
        let v: serde_json::Value = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        let node = &v["parameters"]["nodes"][0];
        for key in ["feature", "threshold", "left", "right", "leaf_value"] {
            assert!(node.get(key).is_some(), "{key}");
        }
        assert_eq!(t.predict_proba(&[1.0, 2.0, 3.0]).unwrap(), 0.25);
    }

    #[test]
    fn stable_helpers() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((logit_loss(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(logit_loss(1000.0, 1.0).abs() < 1e-12);
        assert!((logit_loss(-1000.0, 1.0) - 1000.0).abs() < 1e-9);
    }
}
