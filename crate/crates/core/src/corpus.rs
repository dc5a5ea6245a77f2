//! Labeled code corpora: loading, deduplication, class balancing and
//! problem-wise train/test splitting.
//!
//! Every randomized step is a pure function of its input and an integer seed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Which class produced a snippet. `Gpt` is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Human,
    Gpt,
}

impl Origin {
    pub fn label(self) -> u8 {
        match self {
            Origin::Human => 0,
            Origin::Gpt => 1,
        }
    }

    pub fn from_label(label: u8) -> Self {
        if label == 0 {
            Origin::Human
        } else {
            Origin::Gpt
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Human => "human",
            Origin::Gpt => "gpt",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSample {
    pub problem_id: String,
    pub origin: Origin,
    pub code: String,
    pub source_dataset: String,
    pub formatted: bool,
}

impl CodeSample {
    pub fn new(problem_id: impl Into<String>, origin: Origin, code: impl Into<String>) -> Self {
        Self {
            problem_id: problem_id.into(),
            origin,
            code: code.into(),
            source_dataset: String::new(),
            formatted: false,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.code.trim().is_empty() {
            return Err("code is empty".into());
        }
        Ok(())
    }
}

/// Per-class sample counts, as reported after preparation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub problems: usize,
    pub human: usize,
    pub gpt: usize,
}

impl CorpusSummary {
    pub fn samples(&self) -> usize {
        self.human + self.gpt
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    samples: Vec<CodeSample>,
}

impl Corpus {
    pub fn new(samples: Vec<CodeSample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            s.validate()
                .map_err(|m| Error::invalid(format!("sample {i} ({}): {m}", s.problem_id)))?;
        }
        Ok(Self { samples })
    }

    /// Reads one JSON object per line. Blank lines are skipped; line numbers in
    /// errors are 1-based.
    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(BufReader::new(file))
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut samples = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let sample: CodeSample = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            sample.validate().map_err(|message| Error::Parse {
                line: line_no,
                message,
            })?;
            samples.push(sample);
        }
        Ok(Self { samples })
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for s in &self.samples {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
        }
        Ok(())
    }

    pub fn samples(&self) -> &[CodeSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CodeSample> {
        self.samples.iter()
    }

    /// Distinct problem ids in order of first appearance.
    pub fn problem_ids(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.problem_id.as_str()))
            .map(|s| s.problem_id.as_str())
            .collect()
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.samples.iter().filter(|s| s.origin == origin).count()
    }

    /// `(human, gpt)` sample counts per problem.
    pub fn counts_by_problem(&self) -> BTreeMap<&str, (usize, usize)> {
        let mut out: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for s in &self.samples {
            let e = out.entry(s.problem_id.as_str()).or_default();
            match s.origin {
                Origin::Human => e.0 += 1,
                Origin::Gpt => e.1 += 1,
            }
        }
        out
    }

    pub fn summary(&self) -> CorpusSummary {
        CorpusSummary {
            problems: self.problem_ids().len(),
            human: self.count(Origin::Human),
            gpt: self.count(Origin::Gpt),
        }
    }

    /// Keeps the samples matching `keep`, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&CodeSample) -> bool) -> Corpus {
        Corpus {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.origin.label()).collect()
    }

    /// Removes repeated solutions within each `(problem_id, origin)` group.
    ///
    /// Texts are compared byte-exactly after CRLF → LF normalization. The first
    /// occurrence survives, unchanged. Identical texts under different problems
    /// are kept.
    pub fn dedup(&self) -> Corpus {
        let mut seen: HashSet<(&str, Origin, String)> = HashSet::new();
        let samples = self
            .samples
            .iter()
            .filter(|s| {
                seen.insert((
                    s.problem_id.as_str(),
                    s.origin,
                    s.code.replace("\r\n", "\n"),
                ))
            })
            .cloned()
            .collect();
        Corpus { samples }
    }

    /// Keeps `k = min(h, g)` randomly chosen samples of each class for every
    /// problem. Problems with `k = 0` disappear. Surviving samples keep their
    /// relative order.
    pub fn balance(&self, seed: u64) -> Corpus {
        let mut groups: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            let g = groups.entry(s.problem_id.as_str()).or_default();
            match s.origin {
                Origin::Human => g.0.push(i),
                Origin::Gpt => g.1.push(i),
            }
        }

        let mut rng = seeded(seed);
        let mut keep = vec![false; self.samples.len()];
        for (human, gpt) in groups.values() {
            let k = human.len().min(gpt.len());
            if k == 0 {
                continue;
            }
            for idx in human
                .choose_multiple(&mut rng, k)
                .chain(gpt.choose_multiple(&mut rng, k))
            {
                keep[*idx] = true;
            }
        }

        Corpus {
            samples: self
                .samples
                .iter()
                .zip(keep)
                .filter_map(|(s, k)| k.then(|| s.clone()))
                .collect(),
        }
    }

    /// Problem-wise split; see [`SplitPlan::new`].
    pub fn split_problemwise(&self, seed: u64, ratio: f64) -> Result<(Corpus, Corpus)> {
        let plan = SplitPlan::new(self, seed, ratio)?;
        Ok(plan.apply(self))
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a CodeSample;
    type IntoIter = std::slice::Iter<'a, CodeSample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;

/// Assignment of whole problems to the train or test side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub ratio_permille: u32,
    pub train_problems: BTreeSet<String>,
    pub test_problems: BTreeSet<String>,
}

impl SplitPlan {
    /// Shuffles the sorted problem ids with `seed` and sends the first
    /// `floor(ratio * n)` of them to training. Both sides always receive at
    /// least one problem.
    pub fn new(corpus: &Corpus, seed: u64, ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::invalid(format!("split ratio {ratio} not in (0, 1)")));
        }
        let mut problems: Vec<&str> = corpus.problem_ids();
        if problems.len() < 2 {
            return Err(Error::invalid(format!(
                "problem-wise split needs at least 2 problems, corpus has {}",
                problems.len()
            )));
        }
        problems.sort_unstable();
        problems.shuffle(&mut seeded(seed));

        let n = problems.len();
        let n_train = ((ratio * n as f64 + 1e-9).floor() as usize).clamp(1, n - 1);
        Ok(Self {
            seed,
            ratio_permille: (ratio * 1000.0).round() as u32,
            train_problems: problems[..n_train].iter().map(|p| p.to_string()).collect(),
            test_problems: problems[n_train..].iter().map(|p| p.to_string()).collect(),
        })
    }

    pub fn apply(&self, corpus: &Corpus) -> (Corpus, Corpus) {
        let (train, test): (Vec<_>, Vec<_>) = corpus
            .samples
            .iter()
            .cloned()
            .partition(|s| self.train_problems.contains(&s.problem_id));
        (Corpus { samples: train }, Corpus { samples: test })
    }
}

/// Groups sample indices by problem, used by the similarity study.
pub(crate) fn indices_by_problem(corpus: &Corpus) -> Vec<(String, Vec<usize>, Vec<usize>)> {
    let mut order = Vec::new();
    let mut map: HashMap<&str, usize> = HashMap::new();
    for (i, s) in corpus.samples.iter().enumerate() {
        let slot = *map.entry(s.problem_id.as_str()).or_insert_with(|| {
            order.push((s.problem_id.clone(), Vec::new(), Vec::new()));
            order.len() - 1
        });
        match s.origin {
            Origin::Human => order[slot].1.push(i),
            Origin::Gpt => order[slot].2.push(i),
        }
    }
    order
}
