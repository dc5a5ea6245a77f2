//! Text → token id sequences.
//!
//! Two implementations share the [`Tokenizer`] trait: a byte-level BPE
//! compatible with the `cl100k_base` vocabulary, and a dependency-free lexical
//! splitter for running the pipeline without a vocabulary file.

mod bpe;
mod lexical;

pub use bpe::{BpeTokenizer, Vocabulary, CL100K_PATTERN};
pub use lexical::LexicalTokenizer;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub source_len_bytes: usize,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, source_len_bytes: usize) -> Self {
        Self {
            ids,
            source_len_bytes,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> TokenSequence;

    /// Human-readable rendering of a single token, for reports.
    fn token_text(&self, id: u32) -> String;

    fn name(&self) -> &'static str;

    /// Id-to-string table, for tokenizers that assign ids at run time.
    fn id_table(&self) -> Option<Vec<String>> {
        None
    }
}

impl<T: Tokenizer + ?Sized> Tokenizer for &T {
    fn tokenize(&self, text: &str) -> TokenSequence {
        (**self).tokenize(text)
    }

    fn token_text(&self, id: u32) -> String {
        (**self).token_text(id)
    }

    fn name(&self) -> &'static str {
        (**self).name()
    }

    fn id_table(&self) -> Option<Vec<String>> {
        (**self).id_table()
    }
}

impl<T: Tokenizer + ?Sized> Tokenizer for std::sync::Arc<T> {
    fn tokenize(&self, text: &str) -> TokenSequence {
        (**self).tokenize(text)
    }

    fn token_text(&self, id: u32) -> String {
        (**self).token_text(id)
    }

    fn name(&self) -> &'static str {
        (**self).name()
    }

    fn id_table(&self) -> Option<Vec<String>> {
        (**self).id_table()
    }
}
