use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use fancy_regex::Regex;

use super::{TokenSequence, Tokenizer};
use crate::error::{Error, Result};

/// Pre-tokenization pattern of the `cl100k_base` encoding.
///
/// Pieces are: English contractions; a letter run with at most one leading
/// non-letter/non-digit; 1–3 digits; a punctuation run with an optional
/// leading space and trailing newlines; whitespace ending in newlines; and
/// whitespace not followed by a non-space. Compatibility is defined by the
/// fixture suite rather than by this text.
pub const CL100K_PATTERN: &str = r"'(?i:[sdmt]|ll|ve|re)|[^\r\n\p{L}\p{N}]?+\p{L}++|\p{N}{1,3}+| ?[^\s\p{L}\p{N}]++[\r\n]*+|\s++$|\s*[\r\n]|\s+(?!\S)|\s";

const CL100K_SPECIALS: [(&str, u32); 5] = [
    ("<|endoftext|>", 100257),
    ("<|fim_prefix|>", 100258),
    ("<|fim_middle|>", 100259),
    ("<|fim_suffix|>", 100260),
    ("<|endofprompt|>", 100276),
];

/// A byte-level BPE vocabulary.
///
/// The merge rank of a byte sequence is its token id: the pair whose
/// concatenation has the lowest id is merged first.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    encoder: HashMap<Vec<u8>, u32>,
    decoder: HashMap<u32, Vec<u8>>,
    special_tokens: HashMap<String, u32>,
}

impl Vocabulary {
    /// Loads a `base64(token_bytes) rank` file, one entry per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut vocab = Vocabulary::default();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(token), Some(rank), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err(format!("expected `<base64> <rank>`, got {line:?}")));
            };
            let bytes = BASE64
                .decode(token)
                .map_err(|e| err(format!("bad base64 {token:?}: {e}")))?;
            let rank: u32 = rank
                .parse()
                .map_err(|e| err(format!("bad rank {rank:?}: {e}")))?;
            if vocab.decoder.contains_key(&rank) {
                return Err(err(format!("duplicate rank {rank}")));
            }
            if vocab.encoder.contains_key(&bytes) {
                return Err(err(format!("duplicate token {token:?}")));
            }
            vocab.encoder.insert(bytes.clone(), rank);
            vocab.decoder.insert(rank, bytes);
        }
        Ok(vocab)
    }

    /// Registers the `cl100k_base` control tokens. They can be decoded but are
    /// never produced from plain text.
    pub fn with_cl100k_specials(mut self) -> Self {
        for (text, id) in CL100K_SPECIALS {
            self.special_tokens.insert(text.to_string(), id);
        }
        self
    }

    /// Number of regular (mergeable) tokens.
    pub fn len(&self) -> usize {
        self.encoder.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoder.is_empty()
    }

    pub fn special_tokens(&self) -> &HashMap<String, u32> {
        &self.special_tokens
    }

    pub fn rank(&self, bytes: &[u8]) -> Option<u32> {
        self.encoder.get(bytes).copied()
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.decoder.get(&id).map(Vec::as_slice)
    }

    /// Whether every single byte has its own token, which makes encoding total.
    pub fn is_byte_complete(&self) -> bool {
        (0u8..=255).all(|b| self.encoder.contains_key(&[b][..]))
    }
}

pub struct BpeTokenizer {
    vocab: Vocabulary,
    pattern: Regex,
}

impl std::fmt::Debug for BpeTokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BpeTokenizer")
            .field("vocab_size", &self.vocab.len())
            .finish()
    }
}

impl BpeTokenizer {
    pub fn new(vocab: Vocabulary) -> Result<Self> {
        Self::with_pattern(vocab, CL100K_PATTERN)
    }

    pub fn with_pattern(vocab: Vocabulary, pattern: &str) -> Result<Self> {
        if !vocab.is_byte_complete() {
            return Err(Error::invalid(
                "BPE vocabulary lacks single-byte tokens; some inputs would be unencodable",
            ));
        }
        let pattern = Regex::new(pattern)
            .map_err(|e| Error::invalid(format!("bad pre-tokenization pattern: {e}")))?;
        Ok(Self { vocab, pattern })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(Vocabulary::load(path)?.with_cl100k_specials())
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let bytes = text.as_bytes();
        let mut out = Vec::new();
        let mut pos = 0;
        for m in self.pattern.find_iter(text) {
            // A match error only arises from backtracking limits; encode the
            // remainder as a single piece so the function stays total.
            let Ok(m) = m else { break };
            if m.start() > pos {
                self.encode_piece(&bytes[pos..m.start()], &mut out);
            }
            self.encode_piece(&bytes[m.start()..m.end()], &mut out);
            pos = m.end();
        }
        if pos < bytes.len() {
            self.encode_piece(&bytes[pos..], &mut out);
        }
        out
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<u8> {
        let mut out = Vec::new();
        for id in ids {
            if let Some(bytes) = self.vocab.token_bytes(*id) {
                out.extend_from_slice(bytes);
            } else if let Some((text, _)) =
                self.vocab.special_tokens.iter().find(|(_, v)| **v == *id)
            {
                out.extend_from_slice(text.as_bytes());
            }
        }
        out
    }

    fn encode_piece(&self, piece: &[u8], out: &mut Vec<u32>) {
        if let Some(id) = self.vocab.rank(piece) {
            out.push(id);
            return;
        }
        let bounds = merge_boundaries(&self.vocab, piece);
        out.extend(bounds.windows(2).map(|w| {
            self.vocab
                .rank(&piece[w[0]..w[1]])
                .expect("merged span is always a vocabulary token")
        }));
    }
}

/// Repeatedly merges the adjacent pair with the lowest rank; returns the
/// final part boundaries (including 0 and `piece.len()`).
fn merge_boundaries(vocab: &Vocabulary, piece: &[u8]) -> Vec<usize> {
    // parts[i] = (start offset, rank of merging part i with part i+1)
    let rank_of = |parts: &[(usize, u32)], i: usize| -> u32 {
        if i + 2 < parts.len() {
            vocab
                .rank(&piece[parts[i].0..parts[i + 2].0])
                .unwrap_or(u32::MAX)
        } else {
            u32::MAX
        }
    };

    let mut parts: Vec<(usize, u32)> = (0..=piece.len()).map(|i| (i, u32::MAX)).collect();
    for i in 0..parts.len().saturating_sub(2) {
        parts[i].1 = rank_of(&parts, i);
    }

    loop {
        let Some((i, rank)) = parts[..parts.len() - 1]
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.1))
            .min_by_key(|&(i, r)| (r, i))
        else {
            break;
        };
        if rank == u32::MAX {
            break;
        }
        parts.remove(i + 1);
        parts[i].1 = rank_of(&parts, i);
        if i > 0 {
            parts[i - 1].1 = rank_of(&parts, i - 1);
        }
    }
    parts.into_iter().map(|p| p.0).collect()
}

impl Tokenizer for BpeTokenizer {
    fn tokenize(&self, text: &str) -> TokenSequence {
        TokenSequence::new(self.encode(text), text.len())
    }

    fn token_text(&self, id: u32) -> String {
        String::from_utf8_lossy(&self.decode(&[id])).into_owned()
    }

    fn name(&self) -> &'static str {
        "bpe"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b64(s: &[u8]) -> String {
        BASE64.encode(s)
    }

    fn byte_vocab_text(extra: &[&[u8]]) -> String {
        let mut lines: Vec<String> = (0u8..=255).map(|b| format!("{} {}", b64(&[b]), b)).collect();
        for (i, tok) in extra.iter().enumerate() {
            lines.push(format!("{} {}", b64(tok), 256 + i));
        }
        lines.join("\n")
    }

    #[test]
    fn three_entry_file() {
        let text = format!("{} 0\n{} 1\n{} 2\n", b64(b"a"), b64(b"b"), b64(b"ab"));
        let v = Vocabulary::read(text.as_bytes()).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.rank(b"ab"), Some(2));
        assert!(!v.is_byte_complete());
        assert!(BpeTokenizer::new(v).is_err());
    }

    #[test]
    fn duplicate_rank_rejected() {
        let text = format!("{} 0\n{} 0\n", b64(b"a"), b64(b"b"));
        match Vocabulary::read(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_line_rejected() {
        let text = format!("{} 0\nnot-a-valid-line\n", b64(b"a"));
        assert!(matches!(
            Vocabulary::read(text.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn merges_lowest_rank_first() {
        // "ab" (256) outranks "bc" (257), so "abc" -> [ab, c].
        let v = Vocabulary::read(byte_vocab_text(&[b"ab", b"bc"]).as_bytes()).unwrap();
        let tok = BpeTokenizer::new(v).unwrap();
        assert_eq!(tok.encode("abc"), vec![256, b'c' as u32]);
        assert_eq!(tok.encode(""), Vec::<u32>::new());
        assert_eq!(tok.decode(&tok.encode("abc abc")), b"abc abc");
    }

    #[test]
    fn specials_not_produced_from_text() {
        let v = Vocabulary::read(byte_vocab_text(&[]).as_bytes())
            .unwrap()
            .with_cl100k_specials();
        let tok = BpeTokenizer::new(v).unwrap();
        let ids = tok.encode("<|endoftext|>");
        assert!(ids.iter().all(|id| *id < 256));
        assert_eq!(tok.decode(&[100257]), b"<|endoftext|>");
    }
}
