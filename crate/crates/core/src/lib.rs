//! Toolkit for telling human-written code from LLM-generated code.
//!
//! The pipeline: load and balance a labeled corpus ([`corpus`]), tokenize
//! ([`tokenizer`]), turn snippets into vectors ([`features`], [`vectorize`]),
//! fit a classifier ([`models`], [`gmm`], [`bayes`]) and evaluate it over
//! repeated problem-wise splits ([`eval`]).

pub mod bayes;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod gmm;
pub mod io;
pub mod models;
pub mod pipeline;
pub mod rng;
pub mod tokenizer;
pub mod vectorize;

pub use corpus::{CodeSample, Corpus, Origin, SplitPlan};
pub use error::{Error, Result};
