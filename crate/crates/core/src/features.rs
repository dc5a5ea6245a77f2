//! Seven white-box layout features computed directly from code text.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::Result;

/// Column names in export order.
pub const FEATURE_NAMES: [&str; 7] = ["n_lw", "n_el", "n_iw", "n_pt", "n_ml", "n_tw", "n_lwl"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Leading spaces/tabs, summed over lines.
    pub n_lw: u64,
    /// Lines that are empty after trimming.
    pub n_el: u64,
    /// Spaces inside the trimmed content of each line, summed.
    pub n_iw: u64,
    /// Characters that are neither word characters nor whitespace.
    pub n_pt: u64,
    /// Longest line, in characters.
    pub n_ml: u64,
    /// Trailing spaces/tabs, summed over lines.
    pub n_tw: u64,
    /// Lines starting with a space or tab.
    pub n_lwl: u64,
}

impl FeatureVector {
    pub const DIM: usize = 7;

    pub fn to_vec(&self) -> Vec<f64> {
        self.as_array().iter().map(|v| *v as f64).collect()
    }

    pub fn as_array(&self) -> [u64; 7] {
        [
            self.n_lw, self.n_el, self.n_iw, self.n_pt, self.n_ml, self.n_tw, self.n_lwl,
        ]
    }
}

fn is_blank(c: char) -> bool {
    c == ' ' || c == '\t'
}

fn is_punctuation(c: char) -> bool {
    !(c.is_alphanumeric() || c == '_' || c.is_whitespace())
}

/// Splits on `\n`, dropping the empty segment produced by a terminal newline.
/// A `\r` left at the end of a line belongs to the line terminator.
fn lines(code: &str) -> Vec<&str> {
    let body = code.strip_suffix('\n').unwrap_or(code);
    if code.is_empty() {
        return Vec::new();
    }
    body.split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect()
}

pub fn extract_features(code: &str) -> FeatureVector {
    let mut f = FeatureVector {
        n_pt: code.chars().filter(|c| is_punctuation(*c)).count() as u64,
        ..FeatureVector::default()
    };
    for line in lines(code) {
        let leading = line.chars().take_while(|c| is_blank(*c)).count() as u64;
        let trailing = line.chars().rev().take_while(|c| is_blank(*c)).count() as u64;
        let content = line.trim_matches(is_blank);

        f.n_lw += leading;
        f.n_tw += trailing;
        if leading > 0 {
            f.n_lwl += 1;
        }
        if line.trim().is_empty() {
            f.n_el += 1;
        }
        f.n_iw += content.chars().filter(|c| *c == ' ').count() as u64;
        f.n_ml = f.n_ml.max(line.chars().count() as u64);
    }
    f
}

/// Writes one row per sample: the seven features, then `problem_id`, `origin`.
pub fn write_features_csv(corpus: &Corpus, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = FEATURE_NAMES.to_vec();
    header.extend(["problem_id", "origin"]);
    w.write_record(&header)?;
    for s in corpus {
        let f = extract_features(&s.code);
        let mut row: Vec<String> = f.as_array().iter().map(u64::to_string).collect();
        row.push(s.problem_id.clone());
        row.push(s.origin.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| crate::Error::io("<csv>", e))?;
    Ok(())
}
