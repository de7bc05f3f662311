//! NLG metrics for comparing generated continuations with references,
//! plus the paired statistics used to compare experimental conditions.
//!
//! All text metrics operate on word lists produced by [`normalize_words`]:
//! lowercased, punctuation stripped, split on whitespace.

mod embedding;
mod stats;
mod text;

pub use embedding::{emb_prf, prf_from_vectors, TokenEmbedder};
pub use stats::{paired_ttest, PairedTTest};
pub use text::{bleu1, count_chunks, edit_distance, lcs_len, meteor, meteor_alignment, rouge_l, stem, wer};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Casing/tokenisation rule applied before every metric.
pub const NORMALIZATION_RULE: &str = "lowercase; strip ASCII punctuation; split on whitespace";

/// Names of the per-pair metrics, in table order.
pub const METRIC_NAMES: [&str; 7] = ["bleu1", "meteor", "rouge_l", "wer", "emb_p", "emb_r", "emb_f1"];

pub fn normalize_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| !c.is_ascii_punctuation())
                .collect::<String>()
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub bleu1: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub wer: f64,
    pub emb_p: f64,
    pub emb_r: f64,
    pub emb_f1: f64,
}

impl MetricVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "bleu1" => self.bleu1,
            "meteor" => self.meteor,
            "rouge_l" => self.rouge_l,
            "wer" => self.wer,
            "emb_p" => self.emb_p,
            "emb_r" => self.emb_r,
            "emb_f1" => self.emb_f1,
            _ => return None,
        })
    }

    pub fn values(&self) -> [f64; 7] {
        [self.bleu1, self.meteor, self.rouge_l, self.wer, self.emb_p, self.emb_r, self.emb_f1]
    }
}

/// Scores one hypothesis against one reference. An empty hypothesis gets
/// zero overlap scores, WER 1 and zero embedding scores.
pub fn score_pair(hypothesis: &str, reference: &str, embedder: &dyn TokenEmbedder) -> Result<MetricVector> {
    let hyp = normalize_words(hypothesis);
    let reference = normalize_words(reference);
    let (emb_p, emb_r, emb_f1) = if hyp.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        emb_prf(&hyp, &reference, embedder)?
    };
    Ok(MetricVector {
        bleu1: bleu1(&hyp, &reference)?,
        meteor: meteor(&hyp, &reference)?,
        rouge_l: rouge_l(&hyp, &reference)?,
        wer: wer(&hyp, &reference)?,
        emb_p,
        emb_r,
        emb_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_words("Books from the Library."), vec!["books", "from", "the", "library"]);
        assert_eq!(normalize_words(" , ; "), Vec::<String>::new());
        assert_eq!(normalize_words("dad's car"), vec!["dads", "car"]);
    }
}
