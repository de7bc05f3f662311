//! Closed word-level vocabulary with padded fixed-length token sequences.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const BRAIN_OPEN: &str = "<brain/>";
pub const BRAIN_CLOSE: &str = "</brain>";
pub const SPECIALS: [&str; 5] = [PAD, BOS, EOS, BRAIN_OPEN, BRAIN_CLOSE];

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const BRAIN_OPEN_ID: usize = 3;
pub const BRAIN_CLOSE_ID: usize = 4;

/// Padded length of every [`TokenSeq`].
pub const MAX_LEN: usize = 32;

/// Splits on whitespace and peels leading/trailing ASCII punctuation
/// (apostrophes excepted) into separate tokens.
pub fn split_words(text: &str) -> Vec<String> {
    let is_p = |c: char| c.is_ascii_punctuation() && c != '\'';
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut a = 0;
        let mut b = chars.len();
        while a < b && is_p(chars[a]) {
            out.push(chars[a].to_string());
            a += 1;
        }
        let mut tail = Vec::new();
        while b > a && is_p(chars[b - 1]) {
            tail.push(chars[b - 1].to_string());
            b -= 1;
        }
        if a < b {
            out.push(chars[a..b].iter().collect());
        }
        out.extend(tail.into_iter().rev());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Specials first, then words by descending frequency, ties broken
/// lexicographically.
pub fn build_vocab(corpus: &[String]) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::data("cannot build a vocabulary from an empty corpus"));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in corpus {
        for w in split_words(s) {
            *counts.entry(w).or_default() += 1;
        }
    }
    for sp in SPECIALS {
        counts.remove(sp);
    }
    let mut words: Vec<(String, usize)> = counts.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = SPECIALS.iter().map(|s| s.to_string()).chain(words.into_iter().map(|w| w.0)).collect::<Vec<_>>();
    Ok(Vocabulary::from(tokens))
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// Short content hash used to match checkpoints with vocabularies.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Word ids without bos/eos/padding.
    pub fn encode_words(&self, text: &str) -> Result<Vec<usize>> {
        split_words(text)
            .into_iter()
            .map(|w| self.id(&w).ok_or_else(|| Error::data(format!("word '{w}' is not in the vocabulary"))))
            .collect()
    }

    /// Joins word tokens, attaching punctuation to the preceding word and
    /// dropping special tokens.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if Self::is_special(id) {
                continue;
            }
            let Some(tok) = self.token(id) else { continue };
            let punct = tok.chars().all(|c| c.is_ascii_punctuation() && c != '\'');
            if !out.is_empty() && !punct {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
}

impl TokenSeq {
    /// Non-pad ids (bos … eos).
    pub fn real(&self) -> Vec<usize> {
        self.ids.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(i, _)| *i).collect()
    }

    /// Word ids only.
    pub fn words(&self) -> Vec<usize> {
        self.real().into_iter().filter(|i| !Vocabulary::is_special(*i)).collect()
    }
}

/// bos + words + eos, padded to [`MAX_LEN`]. Longer inputs keep the first
/// MAX_LEN − 2 words.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<TokenSeq> {
    let mut words = vocab.encode_words(text)?;
    if words.len() > MAX_LEN - 2 {
        log::warn!("truncating a {}-token sentence to {MAX_LEN} ids", words.len() + 2);
        words.truncate(MAX_LEN - 2);
    }
    let mut ids = Vec::with_capacity(MAX_LEN);
    ids.push(BOS_ID);
    ids.extend(words);
    ids.push(EOS_ID);
    let real = ids.len();
    ids.resize(MAX_LEN, PAD_ID);
    let mask = (0..MAX_LEN).map(|i| i < real).collect();
    Ok(TokenSeq { ids, mask })
}
