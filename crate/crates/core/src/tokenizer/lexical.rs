use std::collections::HashMap;
use std::sync::RwLock;

use super::{TokenSequence, Tokenizer};
use crate::error::{Error, Result};

/// Splits text into identifier runs, digit runs and single punctuation
/// characters. Whitespace separates tokens and is dropped.
///
/// Token ids come from an internal interner and are only stable within one
/// process.
#[derive(Debug, Default)]
pub struct LexicalTokenizer {
    interner: RwLock<Interner>,
}

#[derive(Debug, Default)]
struct Interner {
    ids: HashMap<String, u32>,
    strings: Vec<String>,
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

impl LexicalTokenizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts from a table produced by [`Tokenizer::id_table`], so that id
    /// `i` maps to `table[i]`.
    pub fn from_table(table: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(table.len());
        for (i, s) in table.iter().enumerate() {
            if ids.insert(s.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate token {s:?} in id table")));
            }
        }
        Ok(Self {
            interner: RwLock::new(Interner { ids, strings: table }),
        })
    }

    /// The token strings of `text`, without interning.
    pub fn split(text: &str) -> Vec<&str> {
        let mut out = Vec::new();
        let mut chars = text.char_indices().peekable();
        while let Some((start, c)) = chars.next() {
            if c.is_whitespace() {
                continue;
            }
            let continues: Option<fn(char) -> bool> = if is_ident_start(c) {
                Some(is_ident_continue)
            } else if c.is_numeric() {
                Some(char::is_numeric)
            } else {
                None
            };
            let mut end = start + c.len_utf8();
            if let Some(pred) = continues {
                while let Some(&(i, next)) = chars.peek() {
                    if !pred(next) {
                        break;
                    }
                    end = i + next.len_utf8();
                    chars.next();
                }
            }
            out.push(&text[start..end]);
        }
        out
    }

    fn intern(&self, token: &str) -> u32 {
        if let Some(id) = self.interner.read().expect("interner poisoned").ids.get(token) {
            return *id;
        }
        let mut w = self.interner.write().expect("interner poisoned");
        if let Some(id) = w.ids.get(token) {
            return *id;
        }
        let id = w.strings.len() as u32;
        w.strings.push(token.to_string());
        w.ids.insert(token.to_string(), id);
        id
    }

    pub fn lookup(&self, id: u32) -> Option<String> {
        self.interner
            .read()
            .expect("interner poisoned")
            .strings
            .get(id as usize)
            .cloned()
    }
}

impl Tokenizer for LexicalTokenizer {
    fn tokenize(&self, text: &str) -> TokenSequence {
        let ids = Self::split(text).into_iter().map(|t| self.intern(t)).collect();
        TokenSequence::new(ids, text.len())
    }

    fn token_text(&self, id: u32) -> String {
        self.lookup(id).unwrap_or_else(|| format!("<{id}>"))
    }

    fn name(&self) -> &'static str {
        "lexical"
    }

    fn id_table(&self) -> Option<Vec<String>> {
        Some(self.interner.read().expect("interner poisoned").strings.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_rules() {
        assert_eq!(LexicalTokenizer::split("a=1"), ["a", "=", "1"]);
        assert!(LexicalTokenizer::split("").is_empty());
        assert_eq!(
            LexicalTokenizer::split("def f(x):"),
            ["def", "f", "(", "x", ")", ":"]
        );
        assert_eq!(
            LexicalTokenizer::split("x1 = 12ab  +\t_y"),
            ["x1", "=", "12", "ab", "+", "_y"]
        );
        assert_eq!(LexicalTokenizer::split("a == b"), ["a", "=", "=", "b"]);
    }

    #[test]
    fn table_round_trip() {
        let a = LexicalTokenizer::new();
        let ids = a.tokenize("x = foo(x) + 1").ids;
        let b = LexicalTokenizer::from_table(a.id_table().unwrap()).unwrap();
        assert_eq!(b.tokenize("x = foo(x) + 1").ids, ids);
        assert_eq!(b.token_text(ids[2]), "foo");
        assert!(LexicalTokenizer::from_table(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn ids_are_stable_within_a_run() {
        let tok = LexicalTokenizer::new();
        let a = tok.tokenize("foo bar foo");
        assert_eq!(a.ids[0], a.ids[2]);
        assert_ne!(a.ids[0], a.ids[1]);
        assert_eq!(tok.tokenize("bar").ids, vec![a.ids[1]]);
        assert_eq!(tok.token_text(a.ids[1]), "bar");
        assert!(tok.tokenize("").is_empty());
    }

    proptest! {
        #[test]
        fn respacing_is_a_fixed_point(s in "\\PC{0,64}") {
            let tokens = LexicalTokenizer::split(&s);
            let joined = tokens.join(" ");
            prop_assert_eq!(LexicalTokenizer::split(&joined), tokens);
        }
    }
}
