//! End-to-end detectors: a feature transform fitted on training snippets
//! followed by a classifier.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::bayes::{BayesModel, BayesParams, TokenStats};
use crate::corpus::{Corpus, Origin};
use crate::error::{Error, Result};
use crate::features::{extract_features, FEATURE_NAMES};
use crate::gmm::{GmmClassifier, GmmLevel, GmmParams};
use crate::models::{LabeledDataset, ModelKind, ModelConfig, TrainedModel};
use crate::rng::seeded;
use crate::tokenizer::{LexicalTokenizer, Tokenizer};
use crate::vectorize::{CbowModel, CbowParams, EmbeddingCache, TfidfModel};

/// Upper bound on token vectors per class used to fit token-level mixtures.
pub const MAX_TOKEN_VECTORS_PER_CLASS: usize = 20_000;

/// Shared, non-serialized inputs of fitting and prediction.
#[derive(Clone)]
pub struct Resources {
    pub tokenizer: Arc<dyn Tokenizer>,
    pub embeddings: Option<Arc<EmbeddingCache>>,
}

impl Resources {
    pub fn new(tokenizer: Arc<dyn Tokenizer>) -> Self {
        Self {
            tokenizer,
            embeddings: None,
        }
    }

    pub fn with_embeddings(mut self, cache: Arc<EmbeddingCache>) -> Self {
        self.embeddings = Some(cache);
        self
    }

    fn cache(&self) -> Result<&EmbeddingCache> {
        self.embeddings
            .as_deref()
            .ok_or_else(|| Error::invalid("remote features need an embedding cache"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureConfig {
    Whitebox,
    Tfidf { max_dim: usize },
    Remote,
    Cbow(CbowParams),
    /// Raw token ids, for the Bayes classifier.
    Tokens,
}

impl FeatureConfig {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureConfig::Whitebox => "whitebox",
            FeatureConfig::Tfidf { .. } => "tfidf",
            FeatureConfig::Remote => "remote",
            FeatureConfig::Cbow(_) => "cbow",
            FeatureConfig::Tokens => "tokens",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ClassifierConfig {
    Model { config: ModelConfig },
    Gmm { params: GmmParams },
    Bayes { params: BayesParams },
}

impl ClassifierConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ClassifierConfig::Model { config } => config.kind().as_str(),
            ClassifierConfig::Gmm { .. } => "gmm",
            ClassifierConfig::Bayes { .. } => "bayes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub features: FeatureConfig,
    pub classifier: ClassifierConfig,
}

impl DetectorConfig {
    pub fn new(features: FeatureConfig, classifier: ClassifierConfig) -> Result<Self> {
        let config = Self { features, classifier };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        use ClassifierConfig as C;
        use FeatureConfig as F;
        match (&self.features, &self.classifier) {
            (F::Tokens, C::Bayes { .. }) => Ok(()),
            (F::Cbow(_), C::Gmm { .. }) => Ok(()),
            (F::Whitebox | F::Tfidf { .. } | F::Remote, C::Model { .. } | C::Gmm { .. }) => Ok(()),
            (f, c) => Err(Error::invalid(format!(
                "features '{}' cannot feed classifier '{}'",
                f.name(),
                c.name()
            ))),
        }
    }

    /// Applies `seed` to every seeded stage.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut config = self.clone();
        if let FeatureConfig::Cbow(p) = &mut config.features {
            p.seed = seed;
        }
        match &mut config.classifier {
            ClassifierConfig::Model { config } => *config = config.clone().with_seed(seed),
            ClassifierConfig::Gmm { params } => params.seed = seed,
            ClassifierConfig::Bayes { .. } => {}
        }
        config
    }
}

/// Receives every dataset handed to a fit operation.
pub trait FitObserver: Sync {
    fn fitted(&self, seed: u64, stage: &str, data: &Corpus);
}

pub struct NoObserver;

impl FitObserver for NoObserver {
    fn fitted(&self, _: u64, _: &str, _: &Corpus) {}
}

/// One recorded fit call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FitRecord {
    pub seed: u64,
    pub stage: String,
    pub problems: BTreeSet<String>,
    pub n_samples: usize,
}

/// Records the problems seen by each fit call.
#[derive(Debug, Default)]
pub struct RecordingObserver {
    records: Mutex<Vec<FitRecord>>,
}

impl RecordingObserver {
    pub fn records(&self) -> Vec<FitRecord> {
        self.records.lock().expect("observer lock").clone()
    }
}

impl FitObserver for RecordingObserver {
    fn fitted(&self, seed: u64, stage: &str, data: &Corpus) {
        self.records.lock().expect("observer lock").push(FitRecord {
            seed,
            stage: stage.to_string(),
            problems: data.iter().map(|s| s.problem_id.clone()).collect(),
            n_samples: data.len(),
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "snake_case")]
pub enum Transform {
    Whitebox,
    Tfidf(TfidfModel),
    Remote { model: String, dim: usize },
    Cbow(CbowModel),
    Tokens,
}

enum Representation {
    Vector(Vec<f64>),
    TokenVectors(Vec<Vec<f64>>),
    Tokens(Vec<u32>),
}

impl Transform {
    fn uses_tokens(&self) -> bool {
        matches!(self, Transform::Tfidf(_) | Transform::Cbow(_) | Transform::Tokens)
    }

    pub fn dim(&self) -> usize {
        match self {
            Transform::Whitebox => FEATURE_NAMES.len(),
            Transform::Tfidf(m) => m.dim(),
            Transform::Remote { dim, .. } => *dim,
            Transform::Cbow(m) => m.dim(),
            Transform::Tokens => 0,
        }
    }

    fn fit(config: &FeatureConfig, train: &Corpus, res: &Resources, seed: u64, observer: &dyn FitObserver) -> Result<Self> {
        Ok(match config {
            FeatureConfig::Whitebox => Transform::Whitebox,
            FeatureConfig::Tokens => Transform::Tokens,
            FeatureConfig::Remote => {
                let cache = res.cache()?;
                Transform::Remote {
                    model: cache.model().to_string(),
                    dim: cache.dim(),
                }
            }
            FeatureConfig::Tfidf { max_dim } => {
                observer.fitted(seed, "tfidf", train);
                let docs: Vec<_> = train.iter().map(|s| res.tokenizer.tokenize(&s.code)).collect();
                Transform::Tfidf(TfidfModel::fit(&docs, *max_dim)?)
            }
            FeatureConfig::Cbow(params) => {
                observer.fitted(seed, "cbow", train);
                let docs: Vec<_> = train.iter().map(|s| res.tokenizer.tokenize(&s.code)).collect();
                Transform::Cbow(CbowModel::fit(&docs, *params)?)
            }
        })
    }

    fn represent(&self, code: &str, res: &Resources) -> Result<Representation> {
        Ok(match self {
            Transform::Whitebox => Representation::Vector(extract_features(code).to_vec()),
            Transform::Tfidf(m) => Representation::Vector(m.transform(&res.tokenizer.tokenize(code)).into_values()),
            Transform::Remote { model, dim } => {
                let cache = res.cache()?;
                if cache.model() != model || cache.dim() != *dim {
                    return Err(Error::invalid(format!(
                        "embedding cache serves {}/{} but the detector expects {model}/{dim}",
                        cache.model(),
                        cache.dim()
                    )));
                }
                Representation::Vector(cache.embed(code)?.into_values())
            }
            Transform::Cbow(m) => Representation::TokenVectors(
                m.token_vectors(&res.tokenizer.tokenize(code))
                    .into_iter()
                    .map(|v| v.into_values())
                    .collect(),
            ),
            Transform::Tokens => Representation::Tokens(res.tokenizer.tokenize(code).ids),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "parameters", rename_all = "snake_case")]
pub enum Classifier {
    Model(TrainedModel),
    Gmm(GmmClassifier),
    Bayes(BayesModel),
}

/// A fitted transform and classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub config: DetectorConfig,
    pub tokenizer: String,
    /// Id table of a run-time tokenizer, captured at fit time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_table: Option<Vec<String>>,
    pub transform: Transform,
    pub classifier: Classifier,
}

fn vectors(reps: Vec<Representation>) -> Vec<Vec<f64>> {
    reps.into_iter()
        .map(|r| match r {
            Representation::Vector(v) => v,
            _ => unreachable!("validated config yields snippet vectors"),
        })
        .collect()
}

/// Seeded subsample of at most `cap` rows.
fn cap_rows(rows: Vec<Vec<f64>>, cap: usize, seed: u64) -> Vec<Vec<f64>> {
    if rows.len() <= cap {
        return rows;
    }
    let mut keep = sample(&mut seeded(seed), rows.len(), cap).into_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| rows[i].clone()).collect()
}

impl Detector {
    pub fn fit(config: &DetectorConfig, train: &Corpus, res: &Resources, seed: u64, observer: &dyn FitObserver) -> Result<Self> {
        config.validate()?;
        let config = config.with_seed(seed);
        let transform = Transform::fit(&config.features, train, res, seed, observer)?;
        let reps: Vec<Representation> = train
            .iter()
            .map(|s| transform.represent(&s.code, res))
            .collect::<Result<_>>()?;
        let labels = train.labels();
        observer.fitted(seed, config.classifier.name(), train);
        let classifier = match &config.classifier {
            ClassifierConfig::Model { config: model } => {
                let ds = LabeledDataset::new(vectors(reps), labels)?;
                Classifier::Model(model.fit(&ds)?)
            }
            ClassifierConfig::Gmm { params } => {
                let token_level = matches!(transform, Transform::Cbow(_));
                let (mut gpt, mut human) = (Vec::new(), Vec::new());
                for (rep, y) in reps.into_iter().zip(&labels) {
                    let target = if *y == 1 { &mut gpt } else { &mut human };
                    match rep {
                        Representation::Vector(v) => target.push(v),
                        Representation::TokenVectors(vs) => target.extend(vs),
                        Representation::Tokens(_) => unreachable!("validated config"),
                    }
                }
                let level = if token_level {
                    gpt = cap_rows(gpt, MAX_TOKEN_VECTORS_PER_CLASS, seed);
                    human = cap_rows(human, MAX_TOKEN_VECTORS_PER_CLASS, seed.wrapping_add(1));
                    GmmLevel::Token
                } else {
                    GmmLevel::Snippet
                };
                if gpt.is_empty() || human.is_empty() {
                    return Err(Error::SingleClass);
                }
                Classifier::Gmm(GmmClassifier::fit(&gpt, &human, params, level)?)
            }
            ClassifierConfig::Bayes { params } => {
                let docs: Vec<(Vec<u32>, Origin)> = reps
                    .into_iter()
                    .zip(train.iter())
                    .map(|(r, s)| match r {
                        Representation::Tokens(ids) => (ids, s.origin),
                        _ => unreachable!("validated config"),
                    })
                    .collect();
                let stats = TokenStats::from_documents(docs.iter().map(|(d, o)| (d.as_slice(), *o)));
                let mut model = BayesModel::from_stats(&stats, params)?;
                model.attach_text(res.tokenizer.as_ref());
                Classifier::Bayes(model)
            }
        };
        let token_table = if transform.uses_tokens() {
            res.tokenizer.id_table()
        } else {
            None
        };
        Ok(Self {
            config,
            tokenizer: res.tokenizer.name().to_string(),
            token_table,
            transform,
            classifier,
        })
    }

    pub fn model_name(&self) -> &'static str {
        self.config.classifier.name()
    }

    pub fn features_name(&self) -> &'static str {
        self.config.features.name()
    }

    pub fn input_dim(&self) -> usize {
        self.transform.dim()
    }

    /// The lexical tokenizer with the id assignment this detector was fitted
    /// under, when it depends on one.
    pub fn restored_tokenizer(&self) -> Result<Option<LexicalTokenizer>> {
        match &self.token_table {
            Some(table) if self.tokenizer == "lexical" => LexicalTokenizer::from_table(table.clone()).map(Some),
            _ => Ok(None),
        }
    }

    fn check_tokenizer(&self, res: &Resources) -> Result<()> {
        if self.transform.uses_tokens() && res.tokenizer.name() != self.tokenizer {
            return Err(Error::invalid(format!(
                "detector was fitted with the {} tokenizer, got {}",
                self.tokenizer,
                res.tokenizer.name()
            )));
        }
        Ok(())
    }

    /// `P(GPT | code)`.
    pub fn predict_proba(&self, code: &str, res: &Resources) -> Result<f64> {
        self.check_tokenizer(res)?;
        let rep = self.transform.represent(code, res)?;
        Ok(match (&self.classifier, rep) {
            (Classifier::Model(m), Representation::Vector(v)) => m.predict_proba(&v)?,
            (Classifier::Gmm(g), Representation::Vector(v)) => g.classify(&v)?.1,
            (Classifier::Gmm(_), Representation::TokenVectors(vs)) if vs.is_empty() => 0.5,
            (Classifier::Gmm(g), Representation::TokenVectors(vs)) => g.classify_tokens(&vs)?.1,
            (Classifier::Bayes(b), Representation::Tokens(ids)) => b.classify(&ids).1,
            _ => return Err(Error::invalid("detector transform and classifier do not match")),
        })
    }

    /// Label and probability. Model probabilities are thresholded at
    /// `threshold`; mixture and Bayes labels follow their own tie rules.
    pub fn classify(&self, code: &str, res: &Resources, threshold: f64) -> Result<(Origin, f64)> {
        let p = self.predict_proba(code, res)?;
        let label = match &self.classifier {
            Classifier::Model(_) => Origin::from_label(u8::from(p >= threshold)),
            _ => {
                if p > 0.5 {
                    Origin::Gpt
                } else {
                    Origin::Human
                }
            }
        };
        Ok((label, p))
    }

    /// For Bayes detectors: retained tokens of `code` with their signed
    /// `log P(t|G) − log P(t|H)`, largest magnitude first, at most `n`.
    pub fn token_contributions(&self, code: &str, res: &Resources, n: usize) -> Result<Vec<(String, f64)>> {
        let Classifier::Bayes(model) = &self.classifier else {
            return Ok(Vec::new());
        };
        self.check_tokenizer(res)?;
        let ids: BTreeSet<u32> = res.tokenizer.tokenize(code).ids.into_iter().collect();
        let mut out: Vec<(u32, String, f64)> = ids
            .into_iter()
            .filter_map(|id| model.token(id))
            .map(|t| (t.id, t.display_text(), t.log_p_g - t.log_p_h))
            .collect();
        out.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()).then(a.0.cmp(&b.0)));
        out.truncate(n);
        Ok(out.into_iter().map(|(_, t, r)| (t, r)).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        crate::io::envelope_to_json("detector", self.input_dim(), self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let (detector, dim): (Self, usize) = crate::io::envelope_from_json(text, "detector")?;
        if detector.input_dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: detector.input_dim(),
            });
        }
        detector.config.validate()?;
        Ok(detector)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::io::write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Convenience: default classifier config for a supervised model kind.
pub fn model_classifier(kind: ModelKind) -> Result<ClassifierConfig> {
    Ok(ClassifierConfig::Model {
        config: ModelConfig::default_for(kind)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CodeSample;
    use crate::models::ForestParams;
    use crate::tokenizer::LexicalTokenizer;

    fn res() -> Resources {
        Resources::new(Arc::new(LexicalTokenizer::new()))
    }

    fn corpus() -> Corpus {
        let mut samples = Vec::new();
        for p in 0..6 {
            samples.push(CodeSample::new(format!("p{p}"), Origin::Human, format!("x{p} = foo(a, b)\nprint(x{p})")));
            samples.push(CodeSample::new(
                format!("p{p}"),
                Origin::Gpt,
                format!("def solve():\n    result = compute({p})\n    return result\n"),
            ));
        }
        Corpus::new(samples).unwrap()
    }

    #[test]
    fn invalid_combinations_are_rejected() {
        assert!(DetectorConfig::new(FeatureConfig::Tokens, model_classifier(ModelKind::Cart).unwrap()).is_err());
        assert!(DetectorConfig::new(FeatureConfig::Whitebox, ClassifierConfig::Bayes { params: BayesParams::default() }).is_err());
        assert!(DetectorConfig::new(FeatureConfig::Cbow(CbowParams::default()), model_classifier(ModelKind::Mlp).unwrap()).is_err());
    }

    #[test]
    fn each_family_fits_and_round_trips() {
        let c = corpus();
        let r = res();
        let small_cbow = CbowParams { dim: 8, epochs: 2, ..Default::default() };
        let configs = vec![
            DetectorConfig::new(FeatureConfig::Whitebox, model_classifier(ModelKind::Logistic).unwrap()).unwrap(),
            DetectorConfig::new(
                FeatureConfig::Tfidf { max_dim: 16 },
                ClassifierConfig::Model { config: ModelConfig::Forest(ForestParams { n_trees: 5, ..Default::default() }) },
            )
            .unwrap(),
            DetectorConfig::new(FeatureConfig::Tfidf { max_dim: 16 }, ClassifierConfig::Gmm { params: GmmParams::default() }).unwrap(),
            DetectorConfig::new(FeatureConfig::Cbow(small_cbow), ClassifierConfig::Gmm { params: GmmParams::default() }).unwrap(),
            DetectorConfig::new(FeatureConfig::Tokens, ClassifierConfig::Bayes { params: BayesParams { tau: 1, ..Default::default() } }).unwrap(),
        ];
        for config in configs {
            let d = Detector::fit(&config, &c, &r, 3, &NoObserver).unwrap();
            let p = d.predict_proba("def solve():\n    return 1\n", &r).unwrap();
            assert!((0.0..=1.0).contains(&p));
            let back = Detector::from_json(&d.to_json().unwrap()).unwrap();
            assert_eq!(back, d);
        }
    }

    #[test]
    fn restored_tokenizer_reproduces_predictions() {
        let c = corpus();
        let r = res();
        let config = DetectorConfig::new(FeatureConfig::Tfidf { max_dim: 16 }, model_classifier(ModelKind::Logistic).unwrap()).unwrap();
        let d = Detector::fit(&config, &c, &r, 0, &NoObserver).unwrap();
        let code = "def solve():\n    return 1\n";
        let expected = d.predict_proba(code, &r).unwrap();

        let back = Detector::from_json(&d.to_json().unwrap()).unwrap();
        let restored = Resources::new(Arc::new(back.restored_tokenizer().unwrap().unwrap()));
        assert_eq!(back.predict_proba(code, &restored).unwrap(), expected);

        let whitebox = DetectorConfig::new(FeatureConfig::Whitebox, model_classifier(ModelKind::Logistic).unwrap()).unwrap();
        let w = Detector::fit(&whitebox, &c, &r, 0, &NoObserver).unwrap();
        assert!(w.token_table.is_none() && w.restored_tokenizer().unwrap().is_none());
    }

    #[test]
    fn memorizing_tree_recovers_training_label() {
        let c = Corpus::new(vec![
            CodeSample::new("a", Origin::Human, "x=1"),
            CodeSample::new("b", Origin::Gpt, "def f():\n    return 1\n"),
        ])
        .unwrap();
        let config = DetectorConfig::new(FeatureConfig::Whitebox, model_classifier(ModelKind::Cart).unwrap()).unwrap();
        let d = Detector::fit(&config, &c, &res(), 0, &NoObserver).unwrap();
        assert!(matches!(&d.classifier, Classifier::Model(TrainedModel::Cart(t)) if t.depth() == 1));
        assert_eq!(d.classify("def f():\n    return 1\n", &res(), 0.5).unwrap().0, Origin::Gpt);
    }

    #[test]
    fn observer_sees_only_training_data() {
        let c = corpus();
        let (train, _) = c.split_problemwise(1, 0.5).unwrap();
        let obs = RecordingObserver::default();
        let config = DetectorConfig::new(FeatureConfig::Tfidf { max_dim: 8 }, model_classifier(ModelKind::Cart).unwrap()).unwrap();
        Detector::fit(&config, &train, &res(), 1, &obs).unwrap();
        let records = obs.records();
        assert_eq!(records.iter().map(|r| r.stage.as_str()).collect::<Vec<_>>(), ["tfidf", "cart"]);
        let train_problems: BTreeSet<String> = train.iter().map(|s| s.problem_id.clone()).collect();
        assert!(records.iter().all(|r| r.problems == train_problems));
    }

    #[test]
    fn bayes_contributions_are_sorted_and_capped() {
        let c = corpus();
        let config = DetectorConfig::new(FeatureConfig::Tokens, ClassifierConfig::Bayes { params: BayesParams { tau: 1, ..Default::default() } }).unwrap();
        let d = Detector::fit(&config, &c, &res(), 0, &NoObserver).unwrap();
        let contrib = d.token_contributions("def solve(): result = foo(a, b)", &res(), 3).unwrap();
        assert!(contrib.len() <= 3 && !contrib.is_empty());
        assert!(contrib.windows(2).all(|w| w[0].1.abs() >= w[1].1.abs()));
    }
}
