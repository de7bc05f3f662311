//! Synthetic "neural" encoding of sentence meaning. A planted set of active
//! channels responds to every imagine event with a constant task amplitude
//! plus a sentence-dependent term from a fixed random map; all other
//! channels carry no response.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derived_rng, streams};
use crate::synthgen::montage::N_LONG_PAIRS;

/// Produces a fixed-width meaning vector for a sentence.
pub trait SentenceVectorizer {
    fn width(&self) -> usize;
    fn sentence_vector(&self, sentence: &str) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticMap {
    /// Sentence-vector width S.
    pub width: usize,
    /// [194 × S] row-major.
    pub loadings: Vec<f64>,
    /// µM of ΔHbO per unit loading.
    pub semantic_amplitude: f64,
    /// Constant ΔHbO (µM) of the planted active channels during imagery.
    pub task_amplitude: f64,
    /// Long-pair indices of the planted active set, ascending.
    pub active: Vec<usize>,
}

impl SemanticMap {
    /// Gaussian loadings on the active rows, zero elsewhere, so a unit
    /// sentence vector gives active-channel amplitudes of unit variance.
    pub fn random(width: usize, n_active: usize, semantic_amplitude: f64, task_amplitude: f64, seed: u64) -> Result<Self> {
        if width == 0 || width > N_LONG_PAIRS {
            return Err(Error::config(format!("semantic width must be in 1..={N_LONG_PAIRS}, got {width}")));
        }
        if n_active > N_LONG_PAIRS || n_active < width {
            return Err(Error::config(format!(
                "active set must hold between {width} (the semantic width) and {N_LONG_PAIRS} channels, got {n_active}"
            )));
        }
        if !(semantic_amplitude >= 0.0) || !(task_amplitude >= 0.0) {
            return Err(Error::config("semantic and task amplitudes must be non-negative"));
        }
        let mut rng = derived_rng(seed, &[streams::SEMANTIC_MAP]);
        let mut loadings: Vec<f64> = (0..N_LONG_PAIRS * width).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut idx: Vec<usize> = (0..N_LONG_PAIRS).collect();
        idx.shuffle(&mut rng);
        let mut active = idx[..n_active].to_vec();
        active.sort_unstable();
        for &p in &idx[n_active..] {
            loadings[p * width..(p + 1) * width].iter_mut().for_each(|v| *v = 0.0);
        }
        let map = SemanticMap { width, loadings, semantic_amplitude, task_amplitude, active };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.loadings.len() != N_LONG_PAIRS * self.width {
            return Err(Error::data("semantic map has the wrong number of loadings"));
        }
        if self.active.iter().any(|&a| a >= N_LONG_PAIRS) {
            return Err(Error::data("semantic map active channel out of range"));
        }
        let silent = (0..N_LONG_PAIRS).filter(|&p| !self.is_active(p));
        for p in silent {
            if self.loadings[p * self.width..(p + 1) * self.width].iter().any(|v| *v != 0.0) {
                return Err(Error::data(format!("semantic map has loadings on inactive pair {p}")));
            }
        }
        if column_rank(&self.loadings, N_LONG_PAIRS, self.width) < self.width {
            return Err(Error::numerical("semantic map is not full column rank"));
        }
        Ok(())
    }

    pub fn is_active(&self, pair: usize) -> bool {
        self.active.binary_search(&pair).is_ok()
    }

    /// Column `j` of the loadings.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..N_LONG_PAIRS).map(|p| self.loadings[p * self.width + j]).collect()
    }

    /// Per-pair ΔHbO amplitude for one imagine event. The sentence vector is
    /// scaled to unit norm; a zero vector contributes only the task term.
    pub fn amplitudes(&self, vector: &[f64]) -> Result<Vec<f64>> {
        if vector.len() != self.width {
            return Err(Error::data(format!(
                "sentence vector has width {} but the semantic map expects {}",
                vector.len(),
                self.width
            )));
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { self.semantic_amplitude / norm } else { 0.0 };
        Ok((0..N_LONG_PAIRS)
            .map(|p| {
                let row = &self.loadings[p * self.width..(p + 1) * self.width];
                let sem: f64 = row.iter().zip(vector).map(|(a, b)| a * b).sum();
                sem * scale + if self.is_active(p) { self.task_amplitude } else { 0.0 }
            })
            .collect())
    }
}

/// Numerical rank of a row-major [rows × cols] matrix by modified Gram-Schmidt.
fn column_rank(a: &[f64], rows: usize, cols: usize) -> usize {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for j in 0..cols {
        let mut v: Vec<f64> = (0..rows).map(|i| a[i * cols + j]).collect();
        let n0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n0 > 0.0 && n > 1e-10 * n0 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis.len()
}

/// Context-free vectorizer from hashed word seeds: the mean of fixed random
/// unit vectors of the sentence's lowercased words. Used when no language
/// model is available.
#[derive(Debug, Clone)]
pub struct HashedVectorizer {
    pub width: usize,
    pub seed: u64,
}

impl SentenceVectorizer for HashedVectorizer {
    fn width(&self) -> usize {
        self.width
    }

    fn sentence_vector(&self, sentence: &str) -> Result<Vec<f64>> {
        let words = crate::metrics::normalize_words(sentence);
        let mut out = vec![0.0; self.width];
        for w in &words {
            let h = w.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
            let mut rng = derived_rng(self.seed, &[streams::SEMANTIC_MAP, h]);
            for o in out.iter_mut() {
                *o += rng.sample::<f64, _>(StandardNormal);
            }
        }
        if !words.is_empty() {
            out.iter_mut().for_each(|o| *o /= words.len() as f64);
        }
        Ok(out)
    }
}

/// Subtracts the mean vector of a reference corpus, so that sentence
/// responses average out over the corpus.
#[derive(Debug, Clone)]
pub struct CentredVectorizer<V> {
    pub inner: V,
    pub mean: Vec<f64>,
}

impl<V: SentenceVectorizer> CentredVectorizer<V> {
    pub fn new(inner: V, corpus: &[String]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::data("cannot centre on an empty corpus"));
        }
        let mut mean = vec![0.0; inner.width()];
        for s in corpus {
            for (m, v) in mean.iter_mut().zip(inner.sentence_vector(s)?) {
                *m += v / corpus.len() as f64;
            }
        }
        Ok(CentredVectorizer { inner, mean })
    }
}

impl<V: SentenceVectorizer> SentenceVectorizer for CentredVectorizer<V> {
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn sentence_vector(&self, sentence: &str) -> Result<Vec<f64>> {
        Ok(self.inner.sentence_vector(sentence)?.iter().zip(&self.mean).map(|(v, m)| v - m).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_rank_and_deterministic() {
        let a = SemanticMap::random(64, 80, 1.0, 0.5, 3).unwrap();
        let b = SemanticMap::random(64, 80, 1.0, 0.5, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.active.len(), 80);
        assert!((0..N_LONG_PAIRS).filter(|p| !a.is_active(*p)).all(|p| a.loadings[p * 64..(p + 1) * 64].iter().all(|v| *v == 0.0)));
        assert_eq!(column_rank(&a.loadings, N_LONG_PAIRS, 64), 64);
    }

    #[test]
    fn rank_detects_duplicate_columns() {
        let mut m = SemanticMap::random(4, 10, 1.0, 0.0, 1).unwrap();
        for p in m.active.clone() {
            m.loadings[p * 4 + 3] = 2.0 * m.loadings[p * 4];
        }
        assert!(m.validate().is_err());
    }

    #[test]
    fn amplitudes_scale_and_task_term() {
        let m = SemanticMap::random(8, 10, 2.0, 0.7, 9).unwrap();
        let zero = m.amplitudes(&[0.0; 8]).unwrap();
        for (p, a) in zero.iter().enumerate() {
            assert_eq!(*a, if m.is_active(p) { 0.7 } else { 0.0 });
        }
        let v = vec![3.0; 8];
        let a1 = m.amplitudes(&v).unwrap();
        let a2 = m.amplitudes(&v.iter().map(|x| x * 10.0).collect::<Vec<_>>()).unwrap();
        for (x, y) in a1.iter().zip(&a2) {
            assert!((x - y).abs() < 1e-12, "amplitude depends only on direction");
        }
        assert!(m.amplitudes(&[1.0; 7]).is_err());
        assert!(SemanticMap::random(8, 7, 1.0, 0.0, 9).is_err());
    }

    #[test]
    fn hashed_vectorizer_is_word_driven() {
        let h = HashedVectorizer { width: 16, seed: 0 };
        assert_eq!(h.sentence_vector("The cat.").unwrap(), h.sentence_vector("the CAT").unwrap());
        assert_ne!(h.sentence_vector("the cat").unwrap(), h.sentence_vector("the dog").unwrap());
    }

    #[test]
    fn centred_vectorizer_has_zero_corpus_mean() {
        let corpus: Vec<String> = ["a red cat", "a blue dog", "the red sky"].iter().map(|s| s.to_string()).collect();
        let c = CentredVectorizer::new(HashedVectorizer { width: 6, seed: 2 }, &corpus).unwrap();
        let mut sum = vec![0.0; 6];
        for s in &corpus {
            sum.iter_mut().zip(c.sentence_vector(s).unwrap()).for_each(|(a, b)| *a += b);
        }
        assert!(sum.iter().all(|v| v.abs() < 1e-12));
    }
}
