//! `codeorigin`: prepare corpora, train and evaluate detectors, classify
//! snippets.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::LoadOptions;
use config::{ConfigError, RunConfig, Settings};

#[derive(Parser)]
#[command(name = "codeorigin", version, about = "Tell human-written code from LLM-generated code")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deduplicate and balance a JSONL corpus.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the summary JSON here.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Fit a detector on the training side of the first seed's split.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Model file; defaults to `<output_dir>/model.json`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Fit on every sample instead of the training side of the split.
        #[arg(long)]
        full: bool,
    },
    /// Repeated problem-wise train/test runs, one per seed.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Classify snippets with a saved detector, one JSON verdict per line.
    Classify {
        #[arg(long)]
        model: PathBuf,
        /// Snippet files; `-` or no file reads stdin.
        inputs: Vec<PathBuf>,
        /// Treat each input line as a JSON object with a `code` field.
        #[arg(long)]
        jsonl: bool,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Tokens listed per Bayes verdict (at most 40).
        #[arg(long, default_value_t = commands::MAX_VERDICT_TOKENS)]
        top_tokens: usize,
        #[command(flatten)]
        load: LoadArgs,
    },
    /// Export the discrepancy tokens of a saved Bayes detector as CSV.
    Tokens {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 40)]
        top: usize,
        /// CSV file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Cosine similarity between human and GPT solutions of each problem.
    Similarity {
        #[command(flatten)]
        run: RunArgs,
    },
}

/// Run configuration: a config file plus flag overrides.
#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    features: Option<String>,
    /// `0-9`, `0,3,7` or a single seed.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    tokenizer: Option<String>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    format_variant: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(self) -> anyhow::Result<RunConfig> {
        let mut settings = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        let paths = [
            ("dataset", self.dataset),
            ("vocab", self.vocab),
            ("cache", self.cache),
            ("output_dir", self.output_dir),
        ];
        for (key, value) in paths {
            if let Some(v) = value {
                settings.set(key, v.display().to_string());
            }
        }
        let texts = [
            ("model", self.model),
            ("features", self.features),
            ("seeds", self.seeds),
            ("tokenizer", self.tokenizer),
            ("format_variant", self.format_variant),
        ];
        for (key, value) in texts {
            if let Some(v) = value {
                settings.set(key, v);
            }
        }
        for pair in &self.overrides {
            settings.apply_override(pair)?;
        }
        RunConfig::from_settings(settings)
    }
}

/// Where to find the assets a saved detector depends on.
#[derive(Args)]
struct LoadArgs {
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Fetch missing embeddings from the provider; needs `OPENAI_API_KEY`.
    #[arg(long)]
    online: bool,
    #[arg(long)]
    endpoint: Option<String>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Prepare {
            input,
            output,
            seed,
            summary,
        } => commands::prepare(&input, &output, seed, summary.as_deref()),
        Command::Train { run, output, full } => commands::train(&run.resolve()?, output, full),
        Command::Evaluate { run } => commands::evaluate(&run.resolve()?),
        Command::Classify {
            model,
            inputs,
            jsonl,
            threshold,
            top_tokens,
            load,
        } => commands::classify(
            &model,
            &inputs,
            jsonl,
            threshold,
            top_tokens,
            &LoadOptions {
                vocab: load.vocab,
                cache: load.cache,
                online: load.online,
                endpoint: load.endpoint,
            },
        ),
        Command::Tokens { model, top, output } => commands::tokens(&model, top, output.as_deref()),
        Command::Similarity { run } => commands::similarity(&run.resolve()?),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<codeorigin::Error>() {
            let data = e.is_data_error() || matches!(e, codeorigin::Error::Io { .. } | codeorigin::Error::CacheMiss(_));
            return if data { 2 } else { 3 };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
