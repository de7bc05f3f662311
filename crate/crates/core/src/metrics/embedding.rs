//! Greedy max-cosine precision/recall/F1 over contextual token embeddings.

use crate::error::{Error, Result};

/// Anything able to produce one contextual vector per word of a sentence.
pub trait TokenEmbedder {
    fn embed_words(&self, words: &[String]) -> Result<Vec<Vec<f64>>>;
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// (P, R, F1) from precomputed vectors. P averages each hypothesis
/// token's best cosine against the reference; R is the mirror image.
pub fn prf_from_vectors(hyp: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<(f64, f64, f64)> {
    if hyp.is_empty() || reference.is_empty() {
        return Err(Error::data("embedding score needs non-empty hypothesis and reference"));
    }
    let best = |from: &[Vec<f64>], to: &[Vec<f64>]| {
        from.iter()
            .map(|u| to.iter().map(|v| cosine(u, v)).fold(f64::NEG_INFINITY, f64::max))
            .sum::<f64>()
            / from.len() as f64
    };
    let p = best(hyp, reference);
    let r = best(reference, hyp);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    Ok((p, r, f1))
}

pub fn emb_prf(hyp: &[String], reference: &[String], embedder: &dyn TokenEmbedder) -> Result<(f64, f64, f64)> {
    if hyp.is_empty() || reference.is_empty() {
        return Err(Error::data("embedding score needs non-empty hypothesis and reference"));
    }
    let h = embedder.embed_words(hyp)?;
    let r = embedder.embed_words(reference)?;
    prf_from_vectors(&h, &r)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Context-free embedder: one-hot over a fixed word list.
    struct OneHot(Vec<&'static str>);

    impl TokenEmbedder for OneHot {
        fn embed_words(&self, words: &[String]) -> Result<Vec<Vec<f64>>> {
            Ok(words
                .iter()
                .map(|w| {
                    let mut v = vec![0.0; self.0.len()];
                    if let Some(i) = self.0.iter().position(|x| x == w) {
                        v[i] = 1.0;
                    }
                    v
                })
                .collect())
        }
    }

    fn s(x: &str) -> Vec<String> {
        x.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identity_scores_one() {
        let e = OneHot(vec!["a", "b", "c"]);
        let (p, r, f) = emb_prf(&s("a b c"), &s("a b c"), &e).unwrap();
        for v in [p, r, f] {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn orthogonal_scores_zero() {
        let e = OneHot(vec!["a", "b", "c", "d"]);
        let (p, r, f) = emb_prf(&s("a b"), &s("c d"), &e).unwrap();
        assert!(p.abs() < 1e-12 && r.abs() < 1e-12 && f.abs() < 1e-12);
    }

    #[test]
    fn subset_hypothesis_has_higher_precision() {
        let e = OneHot(vec!["a", "b", "c", "d"]);
        let (p, r, _) = emb_prf(&s("a b"), &s("a b c d"), &e).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        assert!((r - 0.5).abs() < 1e-12);
        assert!(p > r);
    }

    #[test]
    fn empty_side_errors() {
        let e = OneHot(vec!["a"]);
        assert!(emb_prf(&[], &s("a"), &e).is_err());
        assert!(emb_prf(&s("a"), &[], &e).is_err());
    }
}
