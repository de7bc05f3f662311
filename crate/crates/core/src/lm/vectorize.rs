//! Sentence vectors and per-word contextual vectors taken from the frozen LM.

use std::collections::HashMap;

use super::vocab::{tokenize, BOS_ID};
use super::FrozenLM;
use crate::error::{Error, Result};
use crate::metrics::{normalize_words, TokenEmbedder};
use crate::nn::Tape;
use crate::synthgen::SentenceVectorizer;

/// Sentence vector for the generator: the frozen LM's mean input embedding
/// over the sentence's real tokens, the same quantity the pretraining
/// target uses for a continuation. Unweighted, so template words count as
/// much as topic words.
#[derive(Debug, Clone)]
pub struct LmSentenceVectorizer {
    lm: FrozenLM,
}

impl LmSentenceVectorizer {
    pub fn new(lm: &FrozenLM) -> Self {
        LmSentenceVectorizer { lm: lm.clone() }
    }
}

impl SentenceVectorizer for LmSentenceVectorizer {
    fn width(&self) -> usize {
        self.lm.embed_dim()
    }

    fn sentence_vector(&self, sentence: &str) -> Result<Vec<f64>> {
        self.lm.mean_embedding(&tokenize(sentence, &self.lm.vocab)?)
    }
}

/// Final hidden states of the frozen LM for normalized words, used by the
/// embedding-similarity metric. Each normalized word maps to the most
/// frequent vocabulary token with the same normal form.
pub struct LmTokenEmbedder<'a> {
    lm: &'a FrozenLM,
    lookup: HashMap<String, usize>,
}

impl<'a> LmTokenEmbedder<'a> {
    pub fn new(lm: &'a FrozenLM) -> Self {
        let mut lookup = HashMap::new();
        for (i, t) in lm.vocab.tokens().iter().enumerate().skip(super::vocab::SPECIALS.len()) {
            if let [w] = normalize_words(t).as_slice() {
                lookup.entry(w.clone()).or_insert(i);
            }
        }
        LmTokenEmbedder { lm, lookup }
    }
}

impl TokenEmbedder for LmTokenEmbedder<'_> {
    fn embed_words(&self, words: &[String]) -> Result<Vec<Vec<f64>>> {
        if words.is_empty() {
            return Ok(Vec::new());
        }
        let mut ids = vec![BOS_ID];
        for w in words {
            ids.push(*self.lookup.get(w).ok_or_else(|| Error::data(format!("word '{w}' has no LM token")))?);
        }
        ids.truncate(self.lm.config.context);
        let mut tape = Tape::new();
        let vars = self.lm.bind(&mut tape, false);
        let x = tape.constant(self.lm.embed_ids(&ids)?);
        let h = self.lm.forward_hidden(&mut tape, &vars, &[x])?[0];
        Ok(tape.value(h).rows().into_iter().skip(1).map(|r| r.to_vec()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{build_vocab, LmConfig};
    use crate::metrics::emb_prf;

    fn lm() -> (FrozenLM, Vec<String>) {
        let corpus: Vec<String> = ["The cat sat.", "the dog ran", "a cat ran"].iter().map(|s| s.to_string()).collect();
        let v = build_vocab(&corpus).unwrap();
        (FrozenLM::init(LmConfig { embed_dim: 8, layers: 1, heads: 2, ff_mult: 2, context: 16 }, v, 2).unwrap(), corpus)
    }

    #[test]
    fn sentence_vector_is_mean_embedding() {
        let (lm, _) = lm();
        let vz = LmSentenceVectorizer::new(&lm);
        assert_eq!(vz.width(), 8);
        let v = vz.sentence_vector("the dog ran").unwrap();
        assert_eq!(v, lm.mean_embedding(&tokenize("the dog ran", &lm.vocab).unwrap()).unwrap());
        assert_ne!(v, vz.sentence_vector("a cat ran").unwrap());
        assert!(vz.sentence_vector("unicorn").is_err());
    }

    #[test]
    fn hidden_state_embedder_scores_identity_as_one() {
        let (lm, _) = lm();
        let e = LmTokenEmbedder::new(&lm);
        let w: Vec<String> = ["the", "cat", "sat"].iter().map(|s| s.to_string()).collect();
        let vecs = e.embed_words(&w).unwrap();
        assert_eq!(vecs.len(), 3);
        assert_eq!(vecs[0].len(), 8);
        let (p, r, f) = emb_prf(&w, &w, &e).unwrap();
        assert!((p - 1.0).abs() < 1e-9 && (r - 1.0).abs() < 1e-9 && (f - 1.0).abs() < 1e-9);
        assert!(e.embed_words(&["zebra".to_string()]).is_err());
    }
}
