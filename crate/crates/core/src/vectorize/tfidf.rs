use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::DenseVector;
use crate::error::{Error, Result};
use crate::tokenizer::TokenSequence;

pub const DEFAULT_MAX_DIM: usize = 1536;

/// Snippet-level TF-IDF with a document-frequency-capped vocabulary.
///
/// `tf(t, d) = count(t, d) / |d|` and `idf(t) = ln(N / N_t)`, unsmoothed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TfidfParts", into = "TfidfParts")]
pub struct TfidfModel {
    vocab: Vec<(u32, f64)>,
    slots: HashMap<u32, usize>,
    n_docs_fitted: usize,
}

#[derive(Serialize, Deserialize)]
struct TfidfParts {
    vocab: Vec<(u32, f64)>,
    n_docs_fitted: usize,
}

impl From<TfidfParts> for TfidfModel {
    fn from(p: TfidfParts) -> Self {
        let slots = p.vocab.iter().enumerate().map(|(i, (t, _))| (*t, i)).collect();
        Self {
            vocab: p.vocab,
            slots,
            n_docs_fitted: p.n_docs_fitted,
        }
    }
}

impl From<TfidfModel> for TfidfParts {
    fn from(m: TfidfModel) -> Self {
        Self {
            vocab: m.vocab,
            n_docs_fitted: m.n_docs_fitted,
        }
    }
}

impl TfidfModel {
    /// Keeps the `max_dim` tokens with the highest document frequency (ties by
    /// ascending token id).
    pub fn fit(docs: &[TokenSequence], max_dim: usize) -> Result<Self> {
        if max_dim == 0 {
            return Err(Error::invalid("TF-IDF dimension must be positive"));
        }
        if docs.iter().all(TokenSequence::is_empty) {
            return Err(Error::invalid("TF-IDF needs at least one non-empty document"));
        }
        let mut df: HashMap<u32, usize> = HashMap::new();
        for doc in docs {
            let distinct: HashSet<u32> = doc.ids.iter().copied().collect();
            for t in distinct {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(u32, usize)> = df.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(max_dim);

        let n = docs.len() as f64;
        let vocab: Vec<(u32, f64)> = ranked
            .into_iter()
            .map(|(t, df)| (t, (n / df as f64).ln()))
            .collect();
        Ok(TfidfParts {
            vocab,
            n_docs_fitted: docs.len(),
        }
        .into())
    }

    pub fn dim(&self) -> usize {
        self.vocab.len()
    }

    pub fn n_docs_fitted(&self) -> usize {
        self.n_docs_fitted
    }

    /// `(token id, idf)` per output slot.
    pub fn vocab(&self) -> &[(u32, f64)] {
        &self.vocab
    }

    pub fn idf(&self, token: u32) -> Option<f64> {
        self.slots.get(&token).map(|i| self.vocab[*i].1)
    }

    pub fn slot(&self, token: u32) -> Option<usize> {
        self.slots.get(&token).copied()
    }

    pub fn transform(&self, doc: &TokenSequence) -> DenseVector {
        let mut out = vec![0.0; self.dim()];
        if doc.is_empty() {
            return DenseVector(out);
        }
        let mut counts = vec![0usize; self.dim()];
        for t in &doc.ids {
            if let Some(i) = self.slots.get(t) {
                counts[*i] += 1;
            }
        }
        let len = doc.len() as f64;
        for ((o, c), (_, idf)) in out.iter_mut().zip(&counts).zip(&self.vocab) {
            if *c > 0 {
                *o = *c as f64 / len * idf;
            }
        }
        DenseVector(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: u32 = 1;
    const B: u32 = 2;
    const C: u32 = 3;

    fn seq(ids: &[u32]) -> TokenSequence {
        TokenSequence::new(ids.to_vec(), ids.len())
    }

    fn two_docs() -> Vec<TokenSequence> {
        vec![seq(&[A, B, A]), seq(&[A, C])]
    }

    #[test]
    fn idf_values() {
        let m = TfidfModel::fit(&two_docs(), 1536).unwrap();
        assert_eq!(m.dim(), 3);
        assert_eq!(m.idf(A), Some(0.0));
        assert!((m.idf(B).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(m.vocab()[0].0, A);
    }

    #[test]
    fn cap_keeps_highest_document_frequency() {
        let m = TfidfModel::fit(&two_docs(), 1).unwrap();
        assert_eq!(m.vocab(), &[(A, 0.0)]);
        // b and c tie on df=1; ascending id wins
        let m = TfidfModel::fit(&two_docs(), 2).unwrap();
        assert_eq!(m.vocab()[1].0, B);
    }

    #[test]
    fn transform_values() {
        let m = TfidfModel::fit(&two_docs(), 1536).unwrap();
        let v = m.transform(&seq(&[A, B, A]));
        assert_eq!(v.values()[m.slot(A).unwrap()], 0.0);
        let b = v.values()[m.slot(B).unwrap()];
        assert!((b - 0.2310490601866484).abs() < 1e-15);
        assert_eq!(v.values()[m.slot(C).unwrap()], 0.0);
        assert!(m.transform(&seq(&[])).values().iter().all(|x| *x == 0.0));
        assert!(m.transform(&seq(&[99, 100])).values().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn rejects_empty_corpus() {
        assert!(TfidfModel::fit(&[seq(&[]), seq(&[])], 10).is_err());
        assert!(TfidfModel::fit(&[], 10).is_err());
    }

    #[test]
    fn serde_round_trip_restores_lookup() {
        let m = TfidfModel::fit(&two_docs(), 1536).unwrap();
        let back: TfidfModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.slot(C), m.slot(C));
    }

    proptest! {
        #[test]
        fn repetition_invariance_and_sparsity(
            docs in prop::collection::vec(prop::collection::vec(0u32..12, 1..10), 1..8),
            probe in prop::collection::vec(0u32..15, 0..12),
        ) {
            let docs: Vec<_> = docs.iter().map(|d| seq(d)).collect();
            let m = TfidfModel::fit(&docs, 6).unwrap();
            let v = m.transform(&seq(&probe));
            let doubled: Vec<u32> = probe.iter().chain(&probe).copied().collect();
            let v2 = m.transform(&seq(&doubled));
            for (a, b) in v.values().iter().zip(v2.values()) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!(*a >= 0.0);
            }
            let distinct_in_vocab = probe.iter().filter(|t| m.slot(**t).is_some()).collect::<HashSet<_>>().len();
            prop_assert!(v.values().iter().filter(|x| **x != 0.0).count() <= distinct_in_vocab);
        }
    }
}
