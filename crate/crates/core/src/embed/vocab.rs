use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{EtmaError, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
/// Number of reserved ids preceding the first vocabulary token.
pub const RESERVED: usize = 4;

const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "has", "have", "in", "is", "it", "its",
    "of", "on", "or", "that", "the", "this", "to", "was", "were", "will", "with",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopWords(HashSet<String>);

impl Default for StopWords {
    fn default() -> Self {
        StopWords(DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect())
    }
}

impl StopWords {
    pub fn none() -> Self {
        StopWords(HashSet::new())
    }

    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        StopWords(words.into_iter().map(|w| w.into().to_lowercase()).collect())
    }

    /// One word per line; blank lines are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| EtmaError::io(path, e))?;
        Ok(Self::from_words(text.lines().map(str::trim).filter(|l| !l.is_empty())))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    /// The words in sorted order.
    pub fn words(&self) -> Vec<String> {
        let mut w: Vec<String> = self.0.iter().cloned().collect();
        w.sort();
        w
    }
}

/// Lowercases, strips everything that is neither alphanumeric nor
/// whitespace, splits on whitespace and drops stopwords.
pub fn normalize_text(text: &str, stopwords: &StopWords) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| !stopwords.contains(w))
        .map(str::to_string)
        .collect()
}

/// Token ↔ id table with ids `0..RESERVED` held for `PAD`, `UNK`, `CLS`, `SEP`.
///
/// Tokens keep their insertion order; token `i` in that order has id `RESERVED + i`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from already-normalized token lists, keeping tokens seen at
    /// least `min_freq` times, ordered by first appearance.
    pub fn build<'a, I>(docs: I, min_freq: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order: Vec<&str> = Vec::new();
        for doc in docs {
            for tok in doc {
                let c = counts.entry(tok.as_str()).or_insert(0);
                if *c == 0 {
                    order.push(tok.as_str());
                }
                *c += 1;
            }
        }
        let mut v = Vocabulary::new();
        for tok in order {
            if counts[tok] >= min_freq.max(1) {
                v.insert(tok);
            }
        }
        v
    }

    /// Adds `token` if absent and returns its id.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = RESERVED + self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Total id space including reserved ids.
    pub fn size(&self) -> usize {
        RESERVED + self.tokens.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        match id {
            PAD => Some("[PAD]"),
            UNK => Some("[UNK]"),
            CLS => Some("[CLS]"),
            SEP => Some("[SEP]"),
            _ => self.tokens.get(id - RESERVED).map(String::as_str),
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `[CLS]` followed by the ids of `text`, truncated or `PAD`-padded to
    /// `n_max`. The mask is true on real tokens (including `CLS`).
    pub fn encode(&self, text: &str, stopwords: &StopWords, n_max: usize) -> (Vec<usize>, Vec<bool>) {
        let words = normalize_text(text, stopwords);
        let mut ids = Vec::with_capacity(n_max);
        ids.push(CLS);
        ids.extend(words.iter().map(|w| self.id(w)));
        ids.truncate(n_max);
        let real = ids.len();
        ids.resize(n_max, PAD);
        let mask = (0..n_max).map(|i| i < real).collect();
        (ids, mask)
    }

    /// Newline-delimited tokens in id order (reserved ids are implicit).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut v = Vocabulary::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.chars().any(char::is_whitespace) {
                return Err(EtmaError::Parse {
                    source_name: "vocabulary".into(),
                    line: i + 1,
                    message: format!("invalid token {line:?}"),
                });
            }
            if v.index.contains_key(line) {
                return Err(EtmaError::Parse {
                    source_name: "vocabulary".into(),
                    line: i + 1,
                    message: format!("duplicate token {line:?}"),
                });
            }
            v.insert(line);
        }
        Ok(v)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| EtmaError::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert_eq, proptest};

    #[test]
    fn normalization_rules() {
        let sw = StopWords::from_words(["the"]);
        assert_eq!(normalize_text("The CELEBS meet!", &sw), vec!["celebs", "meet"]);
    }

    #[test]
    fn unseen_words_map_to_unk() {
        let mut v = Vocabulary::new();
        v.insert("known");
        let (ids, mask) = v.encode("known stranger", &StopWords::none(), 5);
        assert_eq!(ids, vec![CLS, RESERVED, UNK, PAD, PAD]);
        assert_eq!(mask, vec![true, true, true, false, false]);
    }

    #[test]
    fn truncation_keeps_n_max_real_tokens() {
        let v = Vocabulary::new();
        let text = "a1 a2 a3 a4 a5 a6 a7 a8 a9 a10";
        let (ids, mask) = v.encode(text, &StopWords::none(), 4);
        assert_eq!(ids.len(), 4);
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn empty_text_is_cls_plus_padding() {
        let v = Vocabulary::new();
        let (ids, mask) = v.encode("the !!", &StopWords::default(), 3);
        assert_eq!(ids, vec![CLS, PAD, PAD]);
        assert_eq!(mask, vec![true, false, false]);
    }

    #[test]
    fn build_is_insertion_ordered_and_respects_min_freq() {
        let docs: Vec<Vec<String>> = vec![vec!["b".into(), "a".into()], vec!["a".into(), "c".into()]];
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice), 1);
        assert_eq!(v.tokens(), &["b", "a", "c"]);
        assert_eq!(v.id("a"), RESERVED + 1);
        let v2 = Vocabulary::build(docs.iter().map(Vec::as_slice), 2);
        assert_eq!(v2.tokens(), &["a"]);
    }

    #[test]
    fn file_format_roundtrip_and_errors() {
        let mut v = Vocabulary::new();
        for t in ["x", "y", "zed"] {
            v.insert(t);
        }
        assert_eq!(v.to_text(), "x\ny\nzed\n");
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
        match Vocabulary::from_text("x\nx\n") {
            Err(EtmaError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(text in "[A-Za-z0-9 ,.!?'-]{0,60}") {
            let sw = StopWords::default();
            let once = normalize_text(&text, &sw);
            let twice = normalize_text(&once.join(" "), &sw);
            prop_assert_eq!(once, twice);
        }
    }
}
