//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Flags given on the command line replace file values. Unknown keys
//! are rejected so that typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use codeorigin::bayes::{BayesParams, Estimation};
use codeorigin::corpus::DEFAULT_TRAIN_RATIO;
use codeorigin::gmm::{CovarianceDenominator, CovarianceKind, GmmParams};
use codeorigin::models::{ModelKind, ModelConfig};
use codeorigin::pipeline::{ClassifierConfig, DetectorConfig, FeatureConfig, Resources};
use codeorigin::tokenizer::{BpeTokenizer, LexicalTokenizer, Tokenizer};
use codeorigin::vectorize::{
    CbowParams, EmbeddingCache, RemoteConfig, DEFAULT_ENDPOINT, DEFAULT_MAX_DIM, DEFAULT_MODEL,
};
use codeorigin::Corpus;

/// A usage or configuration mistake; maps to exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

const HYPERPARAMETER_KEYS: &[&str] = &[
    "tfidf.max_dim",
    "cbow.dim",
    "cbow.window",
    "cbow.min_count",
    "cbow.negative",
    "cbow.epochs",
    "cbow.learning_rate",
    "gmm.covariance",
    "gmm.denominator",
    "gmm.k",
    "gmm.tol",
    "gmm.max_iter",
    "gmm.ridge",
    "bayes.estimation",
    "bayes.tau",
    "logistic.l2",
    "logistic.max_iter",
    "logistic.tol",
    "cart.max_depth",
    "cart.min_samples_split",
    "forest.n_trees",
    "forest.bootstrap",
    "forest.max_depth",
    "forest.max_features",
    "boosted.n_rounds",
    "boosted.learning_rate",
    "boosted.lambda",
    "boosted.gamma",
    "boosted.max_depth",
    "boosted.min_child_weight",
    "mlp.hidden",
    "mlp.epochs",
    "mlp.batch_size",
    "mlp.learning_rate",
];

/// Raw key/value pairs, before typing.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_error(format!("config line {}: expected key = value", i + 1)));
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> anyhow::Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| config_error(format!("override '{pair}' is not key=value")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.values.remove(key)
    }

    fn take_parsed<T: FromStr>(&mut self, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| config_error(format!("{key} = {v}: {e}"))),
        }
    }

    fn take_bool(&mut self, key: &str) -> anyhow::Result<Option<bool>> {
        match self.take(key).as_deref() {
            None => Ok(None),
            Some("true" | "yes" | "1") => Ok(Some(true)),
            Some("false" | "no" | "0") => Ok(Some(false)),
            Some(v) => Err(config_error(format!("{key} = {v}: expected true or false"))),
        }
    }

    /// Fails on keys nobody recognizes. Hyperparameters of families other
    /// than the configured one are accepted and ignored.
    fn finish(self) -> anyhow::Result<()> {
        match self.values.keys().find(|k| !HYPERPARAMETER_KEYS.contains(&k.as_str())) {
            None => Ok(()),
            Some(k) => Err(config_error(format!("unknown config key '{k}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatVariant {
    Raw,
    Formatted,
    All,
}

impl FormatVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            FormatVariant::Raw => "raw",
            FormatVariant::Formatted => "formatted",
            FormatVariant::All => "all",
        }
    }

    /// Keeps the samples of this variant.
    pub fn select(self, corpus: &Corpus) -> Corpus {
        match self {
            FormatVariant::Raw => corpus.filter(|s| !s.formatted),
            FormatVariant::Formatted => corpus.filter(|s| s.formatted),
            FormatVariant::All => corpus.clone(),
        }
    }
}

impl FromStr for FormatVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "raw" => Ok(FormatVariant::Raw),
            "formatted" => Ok(FormatVariant::Formatted),
            "all" => Ok(FormatVariant::All),
            _ => Err("expected raw, formatted or all".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenizerKind {
    Lexical,
    Bpe,
}

impl FromStr for TokenizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lexical" => Ok(TokenizerKind::Lexical),
            "bpe" => Ok(TokenizerKind::Bpe),
            _ => Err("expected lexical or bpe".into()),
        }
    }
}

/// Accepts `0-9`, `0,2,5` or a single integer.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (
                    a.trim().parse().map_err(|e| format!("{part}: {e}"))?,
                    b.trim().parse().map_err(|e| format!("{part}: {e}"))?,
                );
                if a > b {
                    return Err(format!("empty seed range {part}"));
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|e| format!("{part}: {e}"))?),
        }
    }
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(seeds)
}

struct Seeds(Vec<u64>);

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        parse_seeds(s).map(Seeds)
    }
}

fn parse_list(text: &str) -> Result<Vec<usize>, String> {
    text.split(',')
        .map(|p| p.trim().parse().map_err(|e| format!("{p}: {e}")))
        .collect()
}

struct Widths(Vec<usize>);

impl FromStr for Widths {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        parse_list(s).map(Widths)
    }
}

/// Fully typed configuration of a run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub format_variant: FormatVariant,
    pub tokenizer: TokenizerKind,
    pub vocab: Option<PathBuf>,
    pub detector: DetectorConfig,
    pub seeds: Vec<u64>,
    pub train_ratio: f64,
    pub threshold: f64,
    pub balance: bool,
    pub threads: usize,
    pub output_dir: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub embedding_model: String,
    pub embedding_dim: usize,
    pub online: bool,
    pub endpoint: String,
}

impl RunConfig {
    pub fn from_settings(mut s: Settings) -> anyhow::Result<Self> {
        let model = s.take("model").unwrap_or_else(|| "boosted".into());
        let features = s.take("features").unwrap_or_else(|| {
            match model.as_str() {
                "bayes" => "tokens",
                _ => "tfidf",
            }
            .into()
        });
        let feature_config = match features.as_str() {
            "whitebox" => FeatureConfig::Whitebox,
            "tfidf" => FeatureConfig::Tfidf {
                max_dim: s.take_parsed("tfidf.max_dim")?.unwrap_or(DEFAULT_MAX_DIM),
            },
            "remote" => FeatureConfig::Remote,
            "tokens" => FeatureConfig::Tokens,
            "cbow" => {
                let d = CbowParams::default();
                FeatureConfig::Cbow(CbowParams {
                    dim: s.take_parsed("cbow.dim")?.unwrap_or(d.dim),
                    window: s.take_parsed("cbow.window")?.unwrap_or(d.window),
                    min_count: s.take_parsed("cbow.min_count")?.unwrap_or(d.min_count),
                    negative_k: s.take_parsed("cbow.negative")?.unwrap_or(d.negative_k),
                    epochs: s.take_parsed("cbow.epochs")?.unwrap_or(d.epochs),
                    learning_rate: s.take_parsed("cbow.learning_rate")?.unwrap_or(d.learning_rate),
                    seed: d.seed,
                })
            }
            other => {
                return Err(config_error(format!(
                    "features = {other}: expected whitebox, tfidf, cbow, remote or tokens"
                )))
            }
        };
        let classifier = classifier_config(&model, &mut s)?;
        let detector = DetectorConfig::new(feature_config, classifier).map_err(|e| config_error(e.to_string()))?;

        let cfg = Self {
            dataset: s.take("dataset").map(PathBuf::from),
            format_variant: s.take_parsed("format_variant")?.unwrap_or(FormatVariant::Raw),
            tokenizer: s.take_parsed("tokenizer")?.unwrap_or(TokenizerKind::Lexical),
            vocab: s.take("vocab").map(PathBuf::from),
            detector,
            seeds: s.take_parsed::<Seeds>("seeds")?.map(|v| v.0).unwrap_or_else(|| (0..10).collect()),
            train_ratio: s.take_parsed("train_ratio")?.unwrap_or(DEFAULT_TRAIN_RATIO),
            threshold: s.take_parsed("threshold")?.unwrap_or(0.5),
            balance: s.take_bool("balance")?.unwrap_or(true),
            threads: s.take_parsed("threads")?.unwrap_or(1),
            output_dir: s.take("output_dir").map(PathBuf::from),
            cache: s.take("cache").map(PathBuf::from),
            embedding_model: s.take("embedding_model").unwrap_or_else(|| DEFAULT_MODEL.into()),
            embedding_dim: s.take_parsed("embedding_dim")?.unwrap_or(1536),
            online: s.take_bool("online")?.unwrap_or(false),
            endpoint: s.take("endpoint").unwrap_or_else(|| DEFAULT_ENDPOINT.into()),
        };
        s.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> anyhow::Result<()> {
        if matches!(self.detector.features, FeatureConfig::Remote) && self.cache.is_none() {
            return Err(config_error("features = remote requires cache"));
        }
        if self.tokenizer == TokenizerKind::Bpe && self.vocab.is_none() {
            return Err(config_error("tokenizer = bpe requires vocab"));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(config_error("train_ratio must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(config_error("threshold must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn dataset(&self) -> anyhow::Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| config_error("no dataset given (config key 'dataset' or --dataset)"))
    }

    /// Loads the dataset and keeps the configured format variant.
    pub fn load_corpus(&self) -> anyhow::Result<Corpus> {
        let corpus = Corpus::load_jsonl(self.dataset()?)?;
        Ok(self.format_variant.select(&corpus))
    }

    pub fn tokenizer(&self) -> anyhow::Result<Arc<dyn Tokenizer>> {
        Ok(match self.tokenizer {
            TokenizerKind::Lexical => Arc::new(LexicalTokenizer::new()),
            TokenizerKind::Bpe => {
                let path = self.vocab.as_ref().ok_or_else(|| config_error("tokenizer = bpe requires vocab"))?;
                Arc::new(BpeTokenizer::from_file(path)?)
            }
        })
    }

    pub fn embedding_cache(&self) -> anyhow::Result<Option<Arc<EmbeddingCache>>> {
        let Some(path) = &self.cache else {
            return Ok(None);
        };
        let mut cache = EmbeddingCache::open(path, self.embedding_model.clone(), self.embedding_dim)?;
        if self.online {
            let remote = RemoteConfig::from_env(self.endpoint.clone()).map_err(|e| config_error(e.to_string()))?;
            cache = cache.online(remote)?;
        }
        Ok(Some(Arc::new(cache)))
    }

    pub fn resources(&self) -> anyhow::Result<Resources> {
        let mut res = Resources::new(self.tokenizer()?);
        if let Some(cache) = self.embedding_cache()? {
            res = res.with_embeddings(cache);
        }
        Ok(res)
    }
}

fn classifier_config(model: &str, s: &mut Settings) -> anyhow::Result<ClassifierConfig> {
    Ok(match model {
        "gmm" => {
            let d = GmmParams::default();
            let covariance_kind = match s.take("gmm.covariance").as_deref() {
                None | Some("diagonal") => CovarianceKind::Diagonal,
                Some("full") => CovarianceKind::Full,
                Some(v) => return Err(config_error(format!("gmm.covariance = {v}: expected diagonal or full"))),
            };
            let denominator = match s.take("gmm.denominator").as_deref() {
                None | Some("n_minus_one") => CovarianceDenominator::NMinusOne,
                Some("n") => CovarianceDenominator::Standard,
                Some(v) => return Err(config_error(format!("gmm.denominator = {v}: expected n_minus_one or n"))),
            };
            ClassifierConfig::Gmm {
                params: GmmParams {
                    k: s.take_parsed("gmm.k")?.unwrap_or(d.k),
                    tol: s.take_parsed("gmm.tol")?.unwrap_or(d.tol),
                    max_iter: s.take_parsed("gmm.max_iter")?.unwrap_or(d.max_iter),
                    ridge: s.take_parsed("gmm.ridge")?.or(d.ridge),
                    covariance_kind,
                    denominator,
                    ..d
                },
            }
        }
        "bayes" => {
            let estimation = match s.take("bayes.estimation").as_deref() {
                None | Some("doc_presence") => Estimation::DocPresence,
                Some("occurrence") => Estimation::Occurrence,
                Some(v) => {
                    return Err(config_error(format!(
                        "bayes.estimation = {v}: expected doc_presence or occurrence"
                    )))
                }
            };
            ClassifierConfig::Bayes {
                params: BayesParams {
                    tau: s.take_parsed("bayes.tau")?.unwrap_or(BayesParams::default().tau),
                    estimation,
                },
            }
        }
        other => {
            let kind: ModelKind = other.parse().map_err(|_| {
                config_error(format!(
                    "model = {other}: expected logistic, cart, forest, boosted, mlp, gmm or bayes"
                ))
            })?;
            let mut config = ModelConfig::default_for(kind).map_err(|e| config_error(e.to_string()))?;
            match &mut config {
                ModelConfig::Logistic(p) => {
                    set(&mut p.l2, s.take_parsed("logistic.l2")?);
                    set(&mut p.max_iter, s.take_parsed("logistic.max_iter")?);
                    set(&mut p.tol, s.take_parsed("logistic.tol")?);
                }
                ModelConfig::Cart(p) => {
                    if let Some(d) = s.take_parsed("cart.max_depth")? {
                        p.max_depth = Some(d);
                    }
                    set(&mut p.min_samples_split, s.take_parsed("cart.min_samples_split")?);
                }
                ModelConfig::Forest(p) => {
                    set(&mut p.n_trees, s.take_parsed("forest.n_trees")?);
                    set(&mut p.bootstrap, s.take_bool("forest.bootstrap")?);
                    if let Some(d) = s.take_parsed("forest.max_depth")? {
                        p.tree.max_depth = Some(d);
                    }
                    if let Some(m) = s.take_parsed("forest.max_features")? {
                        p.max_features = Some(m);
                    }
                }
                ModelConfig::Boosted(p) => {
                    set(&mut p.n_rounds, s.take_parsed("boosted.n_rounds")?);
                    set(&mut p.learning_rate, s.take_parsed("boosted.learning_rate")?);
                    set(&mut p.lambda, s.take_parsed("boosted.lambda")?);
                    set(&mut p.gamma, s.take_parsed("boosted.gamma")?);
                    set(&mut p.max_depth, s.take_parsed("boosted.max_depth")?);
                    set(&mut p.min_child_weight, s.take_parsed("boosted.min_child_weight")?);
                }
                ModelConfig::Mlp(p) => {
                    if let Some(w) = s.take_parsed::<Widths>("mlp.hidden")? {
                        p.hidden = w.0;
                    }
                    set(&mut p.epochs, s.take_parsed("mlp.epochs")?);
                    set(&mut p.batch_size, s.take_parsed("mlp.batch_size")?);
                    set(&mut p.learning_rate, s.take_parsed("mlp.learning_rate")?);
                }
            }
            ClassifierConfig::Model { config }
        }
    })
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
