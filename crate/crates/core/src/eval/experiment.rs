//! Repeated problem-wise train/test runs and their summaries.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::EvalResult;
use crate::corpus::{CodeSample, Corpus, SplitPlan, DEFAULT_TRAIN_RATIO};
use crate::error::{Error, Result};
use crate::pipeline::{Detector, DetectorConfig, FitObserver, Resources};

/// Scores held-out samples with a fitted detector.
pub trait Scorer {
    /// Probability that `sample` is GPT-written.
    fn score(&self, sample: &CodeSample) -> Result<f64>;
}

/// Something that can be fitted once per seed on a training corpus.
pub trait Pipeline: Sync {
    fn model_name(&self) -> String;
    fn features_name(&self) -> String;
    fn fit<'a>(&'a self, train: &Corpus, seed: u64, observer: &dyn FitObserver) -> Result<Box<dyn Scorer + 'a>>;
}

/// A [`DetectorConfig`] together with the resources it needs.
pub struct DetectorPipeline {
    pub config: DetectorConfig,
    pub resources: Resources,
}

struct DetectorScorer<'a> {
    detector: Detector,
    resources: &'a Resources,
}

impl Scorer for DetectorScorer<'_> {
    fn score(&self, sample: &CodeSample) -> Result<f64> {
        self.detector.predict_proba(&sample.code, self.resources)
    }
}

impl Pipeline for DetectorPipeline {
    fn model_name(&self) -> String {
        self.config.classifier.name().to_string()
    }

    fn features_name(&self) -> String {
        self.config.features.name().to_string()
    }

    fn fit<'a>(&'a self, train: &Corpus, seed: u64, observer: &dyn FitObserver) -> Result<Box<dyn Scorer + 'a>> {
        let detector = Detector::fit(&self.config, train, &self.resources, seed, observer)?;
        Ok(Box::new(DetectorScorer {
            detector,
            resources: &self.resources,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    pub seeds: Vec<u64>,
    pub train_ratio: f64,
    /// Balance the corpus per problem with each run's seed before splitting.
    pub balance: bool,
    pub threshold: f64,
    /// Label for the summary rows; derived from the corpus when `None`.
    pub format_variant: Option<String>,
    /// Worker threads; seeds are distributed over them.
    pub threads: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            train_ratio: DEFAULT_TRAIN_RATIO,
            balance: true,
            threshold: 0.5,
            format_variant: None,
            threads: 1,
        }
    }
}

/// One seed's outcome, with enough detail to recompute its metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub result: EvalResult,
    pub train_problems: BTreeSet<String>,
    pub test_problems: BTreeSet<String>,
    pub labels: Vec<u8>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model: String,
    pub features: String,
    pub format_variant: String,
    pub n_runs: usize,
    pub metrics: Vec<MetricSummary>,
}

/// One output row, with mean and std in percent rounded to two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub features: String,
    pub format_variant: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
}

fn percent(v: f64) -> f64 {
    (v * 10_000.0).round() / 100.0
}

impl RunSummary {
    pub fn from_runs(model: &str, features: &str, format_variant: &str, runs: &[EvalResult]) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::invalid("cannot summarize zero runs"));
        }
        let n = runs.len() as f64;
        let metrics = EvalResult::METRICS
            .iter()
            .map(|name| {
                let values: Vec<f64> = runs.iter().map(|r| r.metric(name).expect("known metric")).collect();
                let mean = values.iter().sum::<f64>() / n;
                let std = if runs.len() > 1 {
                    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                MetricSummary {
                    metric: name.to_string(),
                    mean,
                    std,
                }
            })
            .collect();
        Ok(Self {
            model: model.to_string(),
            features: features.to_string(),
            format_variant: format_variant.to_string(),
            n_runs: runs.len(),
            metrics,
        })
    }

    pub fn rows(&self) -> Vec<ResultRow> {
        self.metrics
            .iter()
            .map(|m| ResultRow {
                model: self.model.clone(),
                features: self.features.clone(),
                format_variant: self.format_variant.clone(),
                metric: m.metric.clone(),
                mean: percent(m.mean),
                std: percent(m.std),
                n_runs: self.n_runs,
            })
            .collect()
    }

    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

pub fn write_rows_csv(rows: &[ResultRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_rows_json(rows: &[ResultRow], out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(out, rows)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub runs: Vec<SeedRun>,
    pub summary: RunSummary,
}

impl ExperimentReport {
    /// Test labels and probabilities of every run, concatenated in seed order.
    pub fn pooled(&self) -> (Vec<u8>, Vec<f64>) {
        let labels = self.runs.iter().flat_map(|r| r.labels.iter().copied()).collect();
        let probs = self.runs.iter().flat_map(|r| r.probabilities.iter().copied()).collect();
        (labels, probs)
    }
}

/// "formatted", "raw" or "mixed", depending on the corpus.
pub fn format_variant_of(corpus: &Corpus) -> &'static str {
    let formatted = corpus.iter().filter(|s| s.formatted).count();
    if formatted == 0 {
        "raw"
    } else if formatted == corpus.len() {
        "formatted"
    } else {
        "mixed"
    }
}

fn run_seed(
    pipeline: &dyn Pipeline,
    corpus: &Corpus,
    seed: u64,
    options: &ExperimentOptions,
    observer: &dyn FitObserver,
) -> Result<SeedRun> {
    let data = if options.balance {
        corpus.balance(seed)
    } else {
        corpus.clone()
    };
    let plan = SplitPlan::new(&data, seed, options.train_ratio)?;
    let (train, test) = plan.apply(&data);
    let scorer = pipeline.fit(&train, seed, observer)?;
    let probabilities = test.iter().map(|s| scorer.score(s)).collect::<Result<Vec<_>>>()?;
    let labels = test.labels();
    let result = EvalResult::from_probabilities(&labels, &probabilities, options.threshold, seed)?;
    Ok(SeedRun {
        seed,
        result,
        train_problems: plan.train_problems,
        test_problems: plan.test_problems,
        labels,
        probabilities,
    })
}

/// Runs one fit/evaluate cycle per seed. Runs are independent, so the report
/// does not depend on `options.threads`.
pub fn run_experiment(
    pipeline: &dyn Pipeline,
    corpus: &Corpus,
    options: &ExperimentOptions,
    observer: &dyn FitObserver,
) -> Result<ExperimentReport> {
    if options.seeds.is_empty() {
        return Err(Error::invalid("at least one seed is required"));
    }
    let threads = options.threads.max(1);
    let mut runs: Vec<Option<Result<SeedRun>>> = (0..options.seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunk = options.seeds.len().div_ceil(threads);
        for (seeds, slots) in options.seeds.chunks(chunk).zip(runs.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (seed, slot) in seeds.iter().zip(slots) {
                    *slot = Some(run_seed(pipeline, corpus, *seed, options, observer));
                }
            });
        }
    });
    let runs: Vec<SeedRun> = runs
        .into_iter()
        .map(|r| r.expect("every seed is run"))
        .collect::<Result<_>>()?;
    let variant = options
        .format_variant
        .clone()
        .unwrap_or_else(|| format_variant_of(corpus).to_string());
    let results: Vec<EvalResult> = runs.iter().map(|r| r.result).collect();
    let summary = RunSummary::from_runs(&pipeline.model_name(), &pipeline.features_name(), &variant, &results)?;
    Ok(ExperimentReport { runs, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Origin;
    use crate::pipeline::{NoObserver, RecordingObserver};

    struct LengthPipeline;

    struct LengthScorer;

    impl Scorer for LengthScorer {
        fn score(&self, sample: &CodeSample) -> Result<f64> {
            Ok(if sample.code.len() > 5 { 0.9 } else { 0.1 })
        }
    }

    impl Pipeline for LengthPipeline {
        fn model_name(&self) -> String {
            "stub".into()
        }
        fn features_name(&self) -> String {
            "length".into()
        }
        fn fit<'a>(&'a self, train: &Corpus, seed: u64, observer: &dyn FitObserver) -> Result<Box<dyn Scorer + 'a>> {
            observer.fitted(seed, "stub", train);
            Ok(Box::new(LengthScorer))
        }
    }

    fn corpus() -> Corpus {
        let mut samples = Vec::new();
        for p in 0..10 {
            samples.push(CodeSample::new(format!("p{p}"), Origin::Human, "x=1"));
            samples.push(CodeSample::new(format!("p{p}"), Origin::Gpt, "result = compute(x)"));
        }
        Corpus::new(samples).unwrap()
    }

    #[test]
    fn summary_statistics() {
        let mk = |a: f64| EvalResult {
            accuracy: a,
            precision: a,
            recall: a,
            f1: a,
            auc: a,
            n_test: 4,
            seed: 0,
        };
        let s = RunSummary::from_runs("m", "f", "raw", &[mk(0.8), mk(0.9), mk(1.0)]).unwrap();
        let acc = s.metric("accuracy").unwrap();
        assert!((acc.mean - 0.9).abs() < 1e-12);
        assert!((acc.std - 0.1).abs() < 1e-12);
        let row = &s.rows()[0];
        assert_eq!((row.mean, row.std, row.n_runs), (90.0, 10.0, 3));
        let single = RunSummary::from_runs("m", "f", "raw", &[mk(0.7)]).unwrap();
        assert_eq!(single.metric("auc").unwrap().std, 0.0);
    }

    #[test]
    fn stub_pipeline_is_perfect_and_thread_independent() {
        let c = corpus();
        let opts = ExperimentOptions {
            seeds: vec![3, 1, 2],
            ..Default::default()
        };
        let a = run_experiment(&LengthPipeline, &c, &opts, &NoObserver).unwrap();
        let b = run_experiment(&LengthPipeline, &c, &ExperimentOptions { threads: 3, ..opts }, &NoObserver).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![3, 1, 2]);
        assert_eq!(a.summary.metric("accuracy").unwrap().mean, 1.0);
        assert_eq!(a.summary.format_variant, "raw");
        for r in &a.runs {
            assert!(r.train_problems.is_disjoint(&r.test_problems));
            assert_eq!(r.labels.len(), 4);
        }
    }

    #[test]
    fn observer_sees_only_training_problems() {
        let c = corpus();
        let obs = RecordingObserver::default();
        let opts = ExperimentOptions {
            seeds: vec![5, 6],
            ..Default::default()
        };
        let report = run_experiment(&LengthPipeline, &c, &opts, &obs).unwrap();
        for rec in obs.records() {
            let run = report.runs.iter().find(|r| r.seed == rec.seed).unwrap();
            assert!(rec.problems.is_subset(&run.train_problems));
        }
    }

    #[test]
    fn csv_rows_have_header() {
        let s = RunSummary::from_runs(
            "m",
            "f",
            "raw",
            &[EvalResult {
                accuracy: 0.5,
                precision: 0.5,
                recall: 0.5,
                f1: 0.5,
                auc: 0.5,
                n_test: 2,
                seed: 0,
            }],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_rows_csv(&s.rows(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("model,features,format_variant,metric,mean,std,n_runs\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
