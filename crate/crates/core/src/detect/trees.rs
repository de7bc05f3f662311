//! Extremely randomized trees for binary labels.
//!
//! Each split draws `max_features` candidate features without replacement,
//! one uniform threshold per candidate between the node's minimum and
//! maximum, and keeps the candidate with the lowest weighted Gini impurity.
//! No bootstrap: every tree sees the full training set, and randomness comes
//! only from the split draws. Tree `i` uses its own seeded stream, so the
//! ensemble does not depend on the order trees are grown in.

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::rng::{derived_rng, streams, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtraTreesConfig {
    pub n_trees: usize,
    /// Candidate features per split; `None` means floor(sqrt(n_features)).
    pub max_features: Option<usize>,
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
}

impl Default for ExtraTreesConfig {
    fn default() -> Self {
        ExtraTreesConfig { n_trees: 300, max_features: None, min_samples_split: 2, max_depth: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf { p1: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Fraction of class-1 training samples in the leaf reached by `x`.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { p1 } => return p1,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

fn gini(n1: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = n1 as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Grower<'a> {
    /// Feature-major copy of the training matrix: `cols[f][i]`.
    cols: &'a [Vec<f64>],
    y: &'a [u8],
    cfg: &'a ExtraTreesConfig,
    k: usize,
    rng: Rng,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn leaf(&mut self, n1: usize, n: usize) -> usize {
        self.nodes.push(Node::Leaf { p1: n1 as f64 / n as f64 });
        self.nodes.len() - 1
    }

    /// Grows the subtree over `idx`, reordering it in place.
    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let n = idx.len();
        let n1 = idx.iter().filter(|&&i| self.y[i] == 1).count();
        let at_limit = self.cfg.max_depth.is_some_and(|d| depth >= d);
        if n1 == 0 || n1 == n || n < self.cfg.min_samples_split || at_limit {
            return self.leaf(n1, n);
        }
        let n_features = self.cols.len();
        let mut best: Option<(f64, usize, f64)> = None;
        for f in sample(&mut self.rng, n_features, self.k.min(n_features)) {
            let col = &self.cols[f];
            let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = col[i];
                (lo.min(v), hi.max(v))
            });
            if !(hi > lo) {
                continue;
            }
            let t = self.rng.gen_range(lo..hi);
            let (mut nl, mut nl1) = (0usize, 0usize);
            for &i in idx.iter() {
                if col[i] <= t {
                    nl += 1;
                    nl1 += (self.y[i] == 1) as usize;
                }
            }
            let nr = n - nl;
            let score = (nl as f64 * gini(nl1, nl) + nr as f64 * gini(n1 - nl1, nr)) / n as f64;
            if best.is_none_or(|(s, _, _)| score < s) {
                best = Some((score, f, t));
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.leaf(n1, n);
        };
        // Stable partition keeps the left and right orders of the old Vec split.
        let col = &self.cols[feature];
        let mut right = Vec::new();
        let mut nl = 0;
        for j in 0..n {
            let i = idx[j];
            if col[i] <= threshold {
                idx[nl] = i;
                nl += 1;
            } else {
                right.push(i);
            }
        }
        idx[nl..].copy_from_slice(&right);
        let (l, r) = idx.split_at_mut(nl);
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { p1: 0.0 });
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[me] = Node::Split { feature, threshold, left, right };
        me
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtraTrees {
    pub trees: Vec<Tree>,
}

impl ExtraTrees {
    /// Labels are 0/1. Tree `i` draws from stream (seed, DETECT, 1, i).
    pub fn fit(x: &Mat, y: &[u8], cfg: &ExtraTreesConfig, seed: u64) -> Result<Self> {
        if x.nrows() != y.len() || y.is_empty() {
            return Err(Error::data(format!("{} feature rows for {} labels", x.nrows(), y.len())));
        }
        if y.iter().any(|&l| l > 1) {
            return Err(Error::data("labels must be 0 or 1"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("features must be finite"));
        }
        if cfg.n_trees == 0 || cfg.min_samples_split < 2 || cfg.max_features == Some(0) {
            return Err(Error::config(format!("invalid extra-trees config: {cfg:?}")));
        }
        let k = cfg.max_features.unwrap_or_else(|| ((x.ncols() as f64).sqrt().floor() as usize).max(1));
        let cols: Vec<Vec<f64>> = x.columns().into_iter().map(|c| c.to_vec()).collect();
        let mut idx: Vec<usize> = Vec::with_capacity(y.len());
        let trees = (0..cfg.n_trees)
            .map(|t| {
                let mut g = Grower {
                    cols: &cols,
                    y,
                    cfg,
                    k,
                    rng: derived_rng(seed, &[streams::DETECT, 1, t as u64]),
                    nodes: Vec::new(),
                };
                idx.clear();
                idx.extend(0..y.len());
                g.grow(&mut idx, 0);
                Tree { nodes: g.nodes }
            })
            .collect();
        Ok(ExtraTrees { trees })
    }

    /// Mean of the per-tree class-1 probabilities.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_proba(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// Class 1 when its mean probability exceeds one half; ties go to 0.
    pub fn predict(&self, x: &Mat) -> Vec<u8> {
        x.rows().into_iter().map(|r| u8::from(self.predict_proba(r.as_slice().expect("standard layout")) > 0.5)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(n: usize, sep: f64, seed: u64) -> (Mat, Vec<u8>) {
        let mut rng = derived_rng(seed, &[0]);
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x = Mat::from_shape_fn((n, 9), |(i, j)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z + if j < 3 { sep * y[i] as f64 } else { 0.0 }
        });
        (x, y)
    }

    #[test]
    fn fits_training_data_exactly() {
        let (x, y) = blobs(60, 0.5, 1);
        let m = ExtraTrees::fit(&x, &y, &ExtraTreesConfig { n_trees: 10, ..Default::default() }, 0).unwrap();
        // Fully grown trees without bootstrap reproduce distinct training points.
        assert_eq!(m.predict(&x), y);
    }

    #[test]
    fn separable_data_generalises() {
        let (x, y) = blobs(200, 4.0, 2);
        let (xt, yt) = blobs(200, 4.0, 3);
        let m = ExtraTrees::fit(&x, &y, &ExtraTreesConfig { n_trees: 50, ..Default::default() }, 0).unwrap();
        let acc = m.predict(&xt).iter().zip(&yt).filter(|(a, b)| a == b).count() as f64 / 200.0;
        assert!(acc > 0.95, "{acc}");
    }

    #[test]
    fn seeded_and_order_free() {
        let (x, y) = blobs(40, 1.0, 4);
        let cfg = ExtraTreesConfig { n_trees: 6, ..Default::default() };
        let a = ExtraTrees::fit(&x, &y, &cfg, 9).unwrap();
        assert_eq!(a, ExtraTrees::fit(&x, &y, &cfg, 9).unwrap());
        assert_ne!(a, ExtraTrees::fit(&x, &y, &cfg, 10).unwrap());
        // A larger ensemble starts with the same trees.
        let b = ExtraTrees::fit(&x, &y, &ExtraTreesConfig { n_trees: 9, ..cfg }, 9).unwrap();
        assert_eq!(a.trees[..], b.trees[..6]);
    }

    #[test]
    fn depth_limit_and_constant_features() {
        let (x, y) = blobs(40, 1.0, 5);
        let stump = ExtraTrees::fit(&x, &y, &ExtraTreesConfig { n_trees: 1, max_depth: Some(1), ..Default::default() }, 0).unwrap();
        assert!(stump.trees[0].n_nodes() <= 3);
        let flat = Mat::zeros((10, 4));
        let y: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let m = ExtraTrees::fit(&flat, &y, &ExtraTreesConfig { n_trees: 3, ..Default::default() }, 0).unwrap();
        assert_eq!(m.predict_proba(&[0.0; 4]), 0.5);
        assert!(ExtraTrees::fit(&flat, &y[..3], &ExtraTreesConfig::default(), 0).is_err());
    }
}
