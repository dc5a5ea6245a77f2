use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use serde::Serialize;

use codeorigin::corpus::CorpusSummary;
use codeorigin::eval::{
    calibration_curve, probability_density, run_experiment, similarity_study, write_rows_csv, write_rows_json,
    CalibrationMethod, DetectorPipeline, ExperimentOptions, SnippetEmbedder, TfidfEmbedder, DEFAULT_BINS,
    DEFAULT_SPAN,
};
use codeorigin::io::write_atomic;
use codeorigin::pipeline::{Classifier, Detector, FeatureConfig, NoObserver, Resources, Transform};
use codeorigin::tokenizer::{BpeTokenizer, LexicalTokenizer, Tokenizer};
use codeorigin::vectorize::{EmbeddingCache, RemoteConfig, DEFAULT_ENDPOINT};
use codeorigin::{Corpus, SplitPlan};

use crate::config::{config_error, RunConfig};

/// Longest token list printed for a Bayes verdict.
pub const MAX_VERDICT_TOKENS: usize = 40;

fn print_json(value: &impl Serialize) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn output_path(explicit: Option<PathBuf>, cfg_dir: Option<&Path>, file: &str) -> anyhow::Result<PathBuf> {
    explicit
        .or_else(|| cfg_dir.map(|d| d.join(file)))
        .ok_or_else(|| config_error("no output given (--output or output_dir)"))
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[derive(Serialize)]
struct PrepareSummary {
    before: CorpusSummary,
    after: CorpusSummary,
    samples_after: usize,
}

pub fn prepare(input: &Path, output: &Path, seed: u64, summary: Option<&Path>) -> anyhow::Result<()> {
    let corpus = Corpus::load_jsonl(input)?;
    let prepared = corpus.dedup().balance(seed);
    let mut bytes = Vec::new();
    prepared.write_jsonl(&mut bytes)?;
    write_atomic(output, &bytes)?;
    let report = PrepareSummary {
        before: corpus.summary(),
        after: prepared.summary(),
        samples_after: prepared.len(),
    };
    if let Some(path) = summary {
        write_atomic(path, &serde_json::to_vec_pretty(&report)?)?;
    }
    print_json(&report)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    model: &'a str,
    features: &'a str,
    input_dim: usize,
    seed: u64,
    train_samples: usize,
    test_samples: usize,
    output: String,
}

pub fn train(cfg: &RunConfig, output: Option<PathBuf>, full: bool) -> anyhow::Result<()> {
    let output = output_path(output, cfg.output_dir.as_deref(), "model.json")?;
    let seed = cfg.seeds[0];
    let mut corpus = cfg.load_corpus()?;
    if cfg.balance {
        corpus = corpus.balance(seed);
    }
    if corpus.is_empty() {
        return Err(codeorigin::Error::InvalidInput("no samples left to train on".into()).into());
    }
    let (train, test) = if full {
        (corpus, Corpus::default())
    } else {
        SplitPlan::new(&corpus, seed, cfg.train_ratio)?.apply(&corpus)
    };
    let res = cfg.resources()?;
    let detector = Detector::fit(&cfg.detector, &train, &res, seed, &NoObserver)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    detector.save(&output)?;
    print_json(&TrainSummary {
        model: detector.model_name(),
        features: detector.features_name(),
        input_dim: detector.input_dim(),
        seed,
        train_samples: train.len(),
        test_samples: test.len(),
        output: output.display().to_string(),
    })
}

pub fn evaluate(cfg: &RunConfig) -> anyhow::Result<()> {
    let dir = cfg
        .output_dir
        .as_deref()
        .ok_or_else(|| config_error("evaluate needs output_dir"))?;
    let corpus = cfg.load_corpus()?;
    let pipeline = DetectorPipeline {
        config: cfg.detector.clone(),
        resources: cfg.resources()?,
    };
    let options = ExperimentOptions {
        seeds: cfg.seeds.clone(),
        train_ratio: cfg.train_ratio,
        balance: cfg.balance,
        threshold: cfg.threshold,
        format_variant: Some(cfg.format_variant.as_str().to_string()),
        threads: cfg.threads,
    };
    let report = run_experiment(&pipeline, &corpus, &options, &NoObserver)?;
    ensure_dir(dir)?;

    let rows = report.summary.rows();
    let mut csv = Vec::new();
    write_rows_csv(&rows, &mut csv)?;
    write_atomic(&dir.join("metrics.csv"), &csv)?;
    let mut json = Vec::new();
    write_rows_json(&rows, &mut json)?;
    write_atomic(&dir.join("metrics.json"), &json)?;
    write_atomic(&dir.join("runs.json"), &serde_json::to_vec_pretty(&report.runs)?)?;

    let (labels, probs) = report.pooled();
    for (name, method) in [
        ("calibration_binned.csv", CalibrationMethod::Binned { bins: DEFAULT_BINS }),
        ("calibration_loess.csv", CalibrationMethod::Loess { span: DEFAULT_SPAN }),
    ] {
        let curve = calibration_curve(&labels, &probs, method)?;
        let mut buf = Vec::new();
        curve.write_csv(&mut buf)?;
        write_atomic(&dir.join(name), &buf)?;
    }
    let density = probability_density(&probs, None)?;
    let mut buf = Vec::new();
    density.write_csv(&mut buf)?;
    write_atomic(&dir.join("kde.csv"), &buf)?;

    let mut out = std::io::stdout().lock();
    for r in &rows {
        writeln!(
            out,
            "{} {} {} {}: {:.2} ± {:.2} (n={})",
            r.model, r.features, r.format_variant, r.metric, r.mean, r.std, r.n_runs
        )?;
    }
    Ok(())
}

/// Options for rebuilding the resources of a saved detector.
pub struct LoadOptions {
    pub vocab: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub online: bool,
    pub endpoint: Option<String>,
}

fn detector_resources(detector: &Detector, opts: &LoadOptions) -> anyhow::Result<Resources> {
    let tokenizer: Arc<dyn Tokenizer> = match detector.tokenizer.as_str() {
        "bpe" => {
            let path = opts
                .vocab
                .as_ref()
                .ok_or_else(|| config_error("this model uses the bpe tokenizer; pass --vocab"))?;
            Arc::new(BpeTokenizer::from_file(path)?)
        }
        _ => match detector.restored_tokenizer()? {
            Some(t) => Arc::new(t),
            None => Arc::new(LexicalTokenizer::new()),
        },
    };
    let mut res = Resources::new(tokenizer);
    if let Transform::Remote { model, dim } = &detector.transform {
        let path = opts
            .cache
            .as_ref()
            .ok_or_else(|| config_error("this model uses remote embeddings; pass --cache"))?;
        let mut cache = EmbeddingCache::open(path, model.clone(), *dim)?;
        if opts.online {
            let endpoint = opts.endpoint.clone().unwrap_or_else(|| DEFAULT_ENDPOINT.into());
            cache = cache.online(RemoteConfig::from_env(endpoint).map_err(|e| config_error(e.to_string()))?)?;
        }
        res = res.with_embeddings(Arc::new(cache));
    }
    Ok(res)
}

#[derive(Serialize)]
struct TokenContribution {
    token: String,
    log_ratio: f64,
}

#[derive(Serialize)]
struct Verdict {
    source: String,
    label: &'static str,
    probability: f64,
    model_kind: &'static str,
    features: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<TokenContribution>>,
}

/// Reads the snippets to classify: one per file, all of stdin when no file
/// is given, or one per line of JSONL input with a `code` field.
fn read_snippets(inputs: &[PathBuf], jsonl: bool) -> anyhow::Result<Vec<(String, String)>> {
    let stdin_only = [PathBuf::from("-")];
    let inputs = if inputs.is_empty() { &stdin_only[..] } else { inputs };
    let mut raw: Vec<(String, String)> = Vec::new();
    for p in inputs {
        if p.as_os_str() == "-" {
            let mut text = String::new();
            std::io::stdin().read_to_string(&mut text).context("reading stdin")?;
            raw.push(("<stdin>".into(), text));
        } else {
            let text = std::fs::read_to_string(p).map_err(|e| codeorigin::Error::Io {
                path: p.clone(),
                source: e,
            })?;
            raw.push((p.display().to_string(), text));
        }
    }
    if !jsonl {
        return Ok(raw.into_iter().filter(|(_, t)| !t.trim().is_empty()).collect());
    }
    let mut out = Vec::new();
    for (source, text) in raw {
        for (i, line) in text.as_bytes().lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| codeorigin::Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let code = value
                .get("code")
                .and_then(|c| c.as_str())
                .ok_or_else(|| codeorigin::Error::Parse {
                    line: i + 1,
                    message: "missing string field 'code'".into(),
                })?;
            out.push((format!("{source}:{}", i + 1), code.to_string()));
        }
    }
    Ok(out)
}

pub fn classify(
    model: &Path,
    inputs: &[PathBuf],
    jsonl: bool,
    threshold: f64,
    top_tokens: usize,
    opts: &LoadOptions,
) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(config_error("threshold must lie in [0, 1]"));
    }
    let detector = Detector::load(model)?;
    let snippets = read_snippets(inputs, jsonl)?;
    if snippets.is_empty() {
        return Ok(());
    }
    let res = detector_resources(&detector, opts)?;
    let is_bayes = matches!(detector.classifier, Classifier::Bayes(_));
    for (source, code) in snippets {
        let (label, probability) = detector.classify(&code, &res, threshold)?;
        let tokens = if is_bayes {
            Some(
                detector
                    .token_contributions(&code, &res, top_tokens.min(MAX_VERDICT_TOKENS))?
                    .into_iter()
                    .map(|(token, log_ratio)| TokenContribution { token, log_ratio })
                    .collect(),
            )
        } else {
            None
        };
        print_json(&Verdict {
            source,
            label: label.as_str(),
            probability,
            model_kind: detector.model_name(),
            features: detector.features_name(),
            tokens,
        })?;
    }
    Ok(())
}

pub fn tokens(model: &Path, top: usize, output: Option<&Path>) -> anyhow::Result<()> {
    let detector = Detector::load(model)?;
    let Classifier::Bayes(bayes) = &detector.classifier else {
        return Err(config_error(format!(
            "token reports need a bayes model, {} is {}",
            model.display(),
            detector.model_name()
        )));
    };
    let mut buf = Vec::new();
    bayes.write_report_csv(top, &mut buf)?;
    match output {
        Some(path) => write_atomic(path, &buf)?,
        None => std::io::stdout().lock().write_all(&buf)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct SimilaritySummary<'a> {
    features: &'a str,
    format_variant: &'a str,
    mean: f64,
    std: f64,
    n_pairs: usize,
    skipped_zero: usize,
}

pub fn similarity(cfg: &RunConfig) -> anyhow::Result<()> {
    let corpus = cfg.load_corpus()?;
    let embedder: Box<dyn SnippetEmbedder> = match &cfg.detector.features {
        FeatureConfig::Tfidf { max_dim } => Box::new(TfidfEmbedder::fit(&corpus, cfg.tokenizer()?, *max_dim)?),
        FeatureConfig::Remote => {
            let cache = cfg.embedding_cache()?.ok_or_else(|| config_error("features = remote requires cache"))?;
            Box::new(Arc::try_unwrap(cache).map_err(|_| anyhow::anyhow!("embedding cache is shared"))?)
        }
        other => {
            return Err(config_error(format!(
                "similarity supports features tfidf or remote, not {}",
                other.name()
            )))
        }
    };
    let study = similarity_study(&corpus, embedder.as_ref())?;
    if let Some(dir) = &cfg.output_dir {
        ensure_dir(dir)?;
        let mut buf = Vec::new();
        study.write_histogram_csv(&mut buf)?;
        write_atomic(&dir.join("similarity_histogram.csv"), &buf)?;
        write_atomic(&dir.join("similarity.json"), &serde_json::to_vec_pretty(&study)?)?;
    }
    print_json(&SimilaritySummary {
        features: cfg.detector.features.name(),
        format_variant: cfg.format_variant.as_str(),
        mean: study.mean,
        std: study.std,
        n_pairs: study.n_pairs,
        skipped_zero: study.skipped_zero,
    })
}
