//! Cosine similarity between human and GPT solutions of the same problem.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{indices_by_problem, Corpus};
use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;
use crate::vectorize::{cosine_similarity, DenseVector, EmbeddingCache, TfidfModel};

pub const HISTOGRAM_BINS: usize = 50;

/// Maps one snippet to one vector.
pub trait SnippetEmbedder {
    fn embed(&self, code: &str) -> Result<DenseVector>;
}

impl SnippetEmbedder for EmbeddingCache {
    fn embed(&self, code: &str) -> Result<DenseVector> {
        EmbeddingCache::embed(self, code)
    }
}

pub struct TfidfEmbedder {
    tokenizer: Arc<dyn Tokenizer>,
    model: TfidfModel,
}

impl TfidfEmbedder {
    /// Fits the vocabulary on every snippet of `corpus`.
    pub fn fit(corpus: &Corpus, tokenizer: Arc<dyn Tokenizer>, max_dim: usize) -> Result<Self> {
        let docs: Vec<_> = corpus.iter().map(|s| tokenizer.tokenize(&s.code)).collect();
        let model = TfidfModel::fit(&docs, max_dim)?;
        Ok(Self { tokenizer, model })
    }
}

impl SnippetEmbedder for TfidfEmbedder {
    fn embed(&self, code: &str) -> Result<DenseVector> {
        Ok(self.model.transform(&self.tokenizer.tokenize(code)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStudy {
    pub mean: f64,
    /// Population standard deviation of the pair similarities.
    pub std: f64,
    pub n_pairs: usize,
    /// Pairs skipped because one snippet embedded to the zero vector.
    pub skipped_zero: usize,
    /// Counts over [`HISTOGRAM_BINS`] equal bins of `[-1, 1]`.
    pub histogram: Vec<usize>,
    pub similarities: Vec<f64>,
}

impl SimilarityStudy {
    pub fn write_histogram_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_low", "bin_high", "count"])?;
        let width = 2.0 / HISTOGRAM_BINS as f64;
        for (i, c) in self.histogram.iter().enumerate() {
            let lo = -1.0 + i as f64 * width;
            w.write_record([lo.to_string(), (lo + width).to_string(), c.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Similarity of every (human, GPT) pair that shares a problem.
pub fn similarity_study(corpus: &Corpus, embedder: &dyn SnippetEmbedder) -> Result<SimilarityStudy> {
    let samples = corpus.samples();
    let mut cache: Vec<Option<DenseVector>> = vec![None; samples.len()];
    let mut vector = |i: usize| -> Result<DenseVector> {
        if cache[i].is_none() {
            cache[i] = Some(embedder.embed(&samples[i].code)?);
        }
        Ok(cache[i].clone().expect("filled above"))
    };
    let mut similarities = Vec::new();
    let mut skipped_zero = 0;
    for (_, humans, gpts) in indices_by_problem(corpus) {
        for &h in &humans {
            for &g in &gpts {
                let (u, v) = (vector(h)?, vector(g)?);
                if u.norm() == 0.0 || v.norm() == 0.0 {
                    skipped_zero += 1;
                    continue;
                }
                similarities.push(cosine_similarity(u.values(), v.values())?);
            }
        }
    }
    if similarities.is_empty() {
        return Err(Error::invalid("no same-problem human/GPT pairs to compare"));
    }
    let n = similarities.len() as f64;
    let mean = similarities.iter().sum::<f64>() / n;
    let std = (similarities.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n).sqrt();
    let mut histogram = vec![0; HISTOGRAM_BINS];
    for s in &similarities {
        let b = (((s + 1.0) / 2.0 * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        histogram[b] += 1;
    }
    Ok(SimilarityStudy {
        mean,
        std,
        n_pairs: similarities.len(),
        skipped_zero,
        histogram,
        similarities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CodeSample, Origin};
    use crate::tokenizer::LexicalTokenizer;

    #[test]
    fn identical_pairs_are_fully_similar() {
        let c = Corpus::new(vec![
            CodeSample::new("a", Origin::Human, "x = 1 + y"),
            CodeSample::new("a", Origin::Gpt, "x = 1 + y"),
            CodeSample::new("b", Origin::Human, "for i in r: print(i)"),
            CodeSample::new("b", Origin::Gpt, "for i in r: print(i)"),
        ])
        .unwrap();
        let e = TfidfEmbedder::fit(&c, Arc::new(LexicalTokenizer::new()), 64).unwrap();
        let s = similarity_study(&c, &e).unwrap();
        assert_eq!(s.n_pairs, 2);
        assert!((s.mean - 1.0).abs() < 1e-12 && s.std < 1e-12);
        assert_eq!(s.histogram[HISTOGRAM_BINS - 1], 2);
    }

    #[test]
    fn cross_pairs_only_within_problem() {
        let c = Corpus::new(vec![
            CodeSample::new("a", Origin::Human, "a b"),
            CodeSample::new("a", Origin::Human, "a c"),
            CodeSample::new("a", Origin::Gpt, "a b c"),
            CodeSample::new("b", Origin::Gpt, "z"),
        ])
        .unwrap();
        let e = TfidfEmbedder::fit(&c, Arc::new(LexicalTokenizer::new()), 64).unwrap();
        assert_eq!(similarity_study(&c, &e).unwrap().n_pairs, 2);
        let only_gpt = c.filter(|s| s.problem_id == "b");
        assert!(similarity_study(&only_gpt, &e).is_err());
    }
}
