use std::collections::HashMap;
use std::path::Path;

use super::squad::RawDataset;
use super::tokenize::tokenize;
use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if token_to_id.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("vocabulary token {t:?} appears twice")));
            }
        }
        Ok(Self { token_to_id, id_to_token: tokens })
    }

    /// Specials first, then tokens with frequency >= `min_freq` by
    /// descending frequency, ties in lexicographic order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Result<Self> {
        if min_freq == 0 {
            return Err(Error::config("corpus.min_freq", "must be >= 1"));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for t in tokenize(text) {
                *counts.entry(t.text).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq && !SPECIAL_TOKENS.contains(&t.as_str()))
            .collect();
        if kept.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIAL_TOKENS.iter().map(|s| s.to_string()).chain(kept.into_iter().map(|(t, _)| t)).collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    /// Id of `token`, or `UNK_ID`.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn encode_text(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(&t.text)).collect()
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.id_to_token.join("\n");
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = s.lines().map(str::to_string).collect();
        if tokens.len() < SPECIAL_TOKENS.len() || tokens[..4].iter().zip(SPECIAL_TOKENS).any(|(a, b)| a != b) {
            return Err(Error::Format(format!("{}: vocabulary must start with the special tokens", path.display())));
        }
        Self::from_tokens(tokens)
    }
}

/// Vocabulary over every context and question of `ds`.
pub fn build_vocab(ds: &RawDataset, min_freq: usize) -> Result<Vocab> {
    let texts = ds
        .data
        .iter()
        .flat_map(|a| &a.paragraphs)
        .flat_map(|p| std::iter::once(p.context.as_str()).chain(p.qas.iter().map(|q| q.question.as_str())));
    Vocab::build(texts, min_freq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_threshold() {
        let v = Vocab::build(["a a b"], 2).unwrap();
        assert_eq!(v.tokens(), &["[PAD]", "[UNK]", "[CLS]", "[SEP]", "a"]);
        let v = Vocab::build(["a a b"], 1).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("[PAD]"), PAD_ID);
        assert_eq!(v.id("[UNK]"), UNK_ID);
        assert_eq!(v.id("[CLS]"), CLS_ID);
        assert_eq!(v.id("[SEP]"), SEP_ID);
        assert_eq!(v.id("zzz"), UNK_ID);
    }

    #[test]
    fn ties_are_lexicographic_and_deterministic() {
        let v = Vocab::build(["c b a c"], 1).unwrap();
        assert_eq!(&v.tokens()[4..], &["c", "a", "b"]);
        assert_eq!(Vocab::build(["c b a c"], 1).unwrap(), v);
    }

    #[test]
    fn empty_corpus() {
        assert!(matches!(Vocab::build(["a b"], 2), Err(Error::EmptyCorpus)));
        assert!(matches!(Vocab::build([""], 1), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocab::build(["x y y z"], 1).unwrap();
        v.save(&path).unwrap();
        assert_eq!(Vocab::load(&path).unwrap(), v);
    }
}
