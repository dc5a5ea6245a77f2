//! Metrics, calibration, similarity and repeated-split experiments.

mod calibration;
mod experiment;
mod metrics;
mod similarity;

pub use calibration::{
    calibration_curve, kde_at, probability_density, silverman_bandwidth, CalibrationCurve, CalibrationMethod,
    CalibrationPoint, DensityEstimate, DEFAULT_BINS, DEFAULT_SPAN, KDE_POINTS, LOESS_POINTS,
};
pub use experiment::{
    format_variant_of, run_experiment, write_rows_csv, write_rows_json, DetectorPipeline, ExperimentOptions,
    ExperimentReport, MetricSummary, Pipeline, ResultRow, RunSummary, Scorer, SeedRun,
};
pub use metrics::{confusion_metrics, roc_auc, ConfusionMetrics, EvalResult};
pub use similarity::{similarity_study, SimilarityStudy, SnippetEmbedder, TfidfEmbedder, HISTOGRAM_BINS};
