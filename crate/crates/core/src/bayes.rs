//! Token-presence Bayes classifier with a per-class frequency threshold.
//!
//! A document is reduced to the set of retained tokens it contains. Each
//! retained token contributes `log P(token | class)`; tokens absent from the
//! document contribute nothing.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Origin};
use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

pub const DEFAULT_TAU: u64 = 32;

/// Relative gap below which the two class scores count as a tie.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimation {
    /// `P(t | X)` = share of class-X documents containing `t`.
    #[default]
    DocPresence,
    /// `P(t | X)` = share of class-X token occurrences that are `t`.
    Occurrence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BayesParams {
    pub tau: u64,
    pub estimation: Estimation,
}

impl Default for BayesParams {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            estimation: Estimation::DocPresence,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TokenCounts {
    pub docs_h: u64,
    pub docs_g: u64,
    pub occ_h: u64,
    pub occ_g: u64,
}

/// Per-token document and occurrence counts for both classes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenStats {
    pub tokens: BTreeMap<u32, TokenCounts>,
    pub n_docs_h: u64,
    pub n_docs_g: u64,
    pub total_occ_h: u64,
    pub total_occ_g: u64,
}

impl TokenStats {
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = (&'a [u32], Origin)>) -> Self {
        let mut stats = Self::default();
        for (ids, origin) in docs {
            let gpt = origin == Origin::Gpt;
            if gpt {
                stats.n_docs_g += 1;
                stats.total_occ_g += ids.len() as u64;
            } else {
                stats.n_docs_h += 1;
                stats.total_occ_h += ids.len() as u64;
            }
            for id in ids {
                let c = stats.tokens.entry(*id).or_default();
                if gpt {
                    c.occ_g += 1;
                } else {
                    c.occ_h += 1;
                }
            }
            for id in ids.iter().collect::<BTreeSet<_>>() {
                let c = stats.tokens.get_mut(id).expect("counted above");
                if gpt {
                    c.docs_g += 1;
                } else {
                    c.docs_h += 1;
                }
            }
        }
        stats
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedToken {
    pub id: u32,
    pub text: Option<String>,
    pub count_h: u64,
    pub count_g: u64,
    pub log_p_h: f64,
    pub log_p_g: f64,
}

impl RetainedToken {
    pub fn abs_log_discrepancy(&self) -> f64 {
        (self.log_p_h - self.log_p_g).abs()
    }

    pub fn display_text(&self) -> String {
        self.text.clone().unwrap_or_else(|| self.id.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesModel {
    /// Sorted by token id.
    retained: Vec<RetainedToken>,
    log_prior_h: f64,
    log_prior_g: f64,
    tau: u64,
    estimation: Estimation,
}

impl BayesModel {
    /// Fits on a corpus, tokenizing every snippet with `tokenizer`.
    pub fn fit(corpus: &Corpus, tokenizer: &dyn Tokenizer, params: &BayesParams) -> Result<Self> {
        let sequences: Vec<(Vec<u32>, Origin)> = corpus
            .iter()
            .map(|s| (tokenizer.tokenize(&s.code).ids, s.origin))
            .collect();
        let stats = TokenStats::from_documents(sequences.iter().map(|(ids, o)| (ids.as_slice(), *o)));
        let mut model = Self::from_stats(&stats, params)?;
        model.attach_text(tokenizer);
        Ok(model)
    }

    /// Fills in display text for every retained token.
    pub fn attach_text(&mut self, tokenizer: &dyn Tokenizer) {
        for t in &mut self.retained {
            t.text = Some(tokenizer.token_text(t.id));
        }
    }

    pub fn from_stats(stats: &TokenStats, params: &BayesParams) -> Result<Self> {
        if stats.n_docs_h == 0 || stats.n_docs_g == 0 {
            return Err(Error::SingleClass);
        }
        let (nh, ng) = (stats.n_docs_h as f64, stats.n_docs_g as f64);
        let floor_h = -(nh + 1.0).ln();
        let floor_g = -(ng + 1.0).ln();
        let retained: Vec<RetainedToken> = stats
            .tokens
            .iter()
            .filter(|(_, c)| c.occ_h >= params.tau && c.occ_g >= params.tau)
            .map(|(id, c)| {
                let (p_h, p_g) = match params.estimation {
                    Estimation::DocPresence => (c.docs_h as f64 / nh, c.docs_g as f64 / ng),
                    Estimation::Occurrence => (
                        c.occ_h as f64 / stats.total_occ_h.max(1) as f64,
                        c.occ_g as f64 / stats.total_occ_g.max(1) as f64,
                    ),
                };
                RetainedToken {
                    id: *id,
                    text: None,
                    count_h: c.occ_h,
                    count_g: c.occ_g,
                    log_p_h: p_h.ln().max(floor_h),
                    log_p_g: p_g.ln().max(floor_g),
                }
            })
            .collect();
        if retained.is_empty() {
            return Err(Error::invalid(format!(
                "no token reaches tau = {} in both classes; try a smaller tau",
                params.tau
            )));
        }
        Ok(Self {
            retained,
            log_prior_h: (nh / (nh + ng)).ln(),
            log_prior_g: (ng / (nh + ng)).ln(),
            tau: params.tau,
            estimation: params.estimation,
        })
    }

    pub fn retained(&self) -> &[RetainedToken] {
        &self.retained
    }

    pub fn tau(&self) -> u64 {
        self.tau
    }

    pub fn estimation(&self) -> Estimation {
        self.estimation
    }

    pub fn log_priors(&self) -> (f64, f64) {
        (self.log_prior_h, self.log_prior_g)
    }

    pub fn token(&self, id: u32) -> Option<&RetainedToken> {
        self.retained
            .binary_search_by_key(&id, |t| t.id)
            .ok()
            .map(|i| &self.retained[i])
    }

    /// Unnormalized log posteriors `(human, gpt)` of a token-id document.
    pub fn log_scores(&self, ids: &[u32]) -> (f64, f64) {
        let present: BTreeSet<u32> = ids.iter().copied().collect();
        let mut h = vec![self.log_prior_h];
        let mut g = vec![self.log_prior_g];
        for t in present.iter().filter_map(|id| self.token(*id)) {
            h.push(t.log_p_h);
            g.push(t.log_p_g);
        }
        // summing in sorted order makes permuted term lists tie exactly
        h.sort_by(f64::total_cmp);
        g.sort_by(f64::total_cmp);
        (h.iter().sum(), g.iter().sum())
    }

    /// Label and `P(GPT | doc)`. Ties go to human.
    pub fn classify(&self, ids: &[u32]) -> (Origin, f64) {
        let (h, g) = self.log_scores(ids);
        let max = h.max(g);
        let lse = max + ((h - max).exp() + (g - max).exp()).ln();
        let posterior = (g - lse).exp();
        let tie = (g - h).abs() <= TIE_TOLERANCE * h.abs().max(g.abs()).max(1.0);
        let label = if g > h && !tie { Origin::Gpt } else { Origin::Human };
        (label, posterior)
    }

    pub fn classify_text(&self, tokenizer: &dyn Tokenizer, code: &str) -> (Origin, f64) {
        self.classify(&tokenizer.tokenize(code).ids)
    }

    /// Tokens ordered by `|log P(t|H) − log P(t|G)|`, largest first, ties by id.
    pub fn top_discrepancy_tokens(&self, n: usize) -> Vec<&RetainedToken> {
        let mut all: Vec<&RetainedToken> = self.retained.iter().collect();
        all.sort_by(|a, b| {
            b.abs_log_discrepancy()
                .total_cmp(&a.abs_log_discrepancy())
                .then(a.id.cmp(&b.id))
        });
        all.truncate(n);
        all
    }

    /// CSV with columns token_text, count_h, count_g, logP_h, logP_g,
    /// abs_log_discrepancy for the top `n` tokens.
    pub fn write_report_csv(&self, n: usize, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["token_text", "count_h", "count_g", "logP_h", "logP_g", "abs_log_discrepancy"])?;
        for t in self.top_discrepancy_tokens(n) {
            w.write_record([
                t.display_text(),
                t.count_h.to_string(),
                t.count_g.to_string(),
                t.log_p_h.to_string(),
                t.log_p_g.to_string(),
                t.abs_log_discrepancy().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        crate::io::envelope_to_json("bayes", self.retained.len(), self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(crate::io::envelope_from_json(text, "bayes")?.0)
    }
}
