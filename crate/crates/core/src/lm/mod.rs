//! Small decoder-only transformer standing in for a large frozen LM.
//!
//! Other modules use only the vocabulary, the embedding width, `embed`,
//! `forward_logits`/`forward_hidden` and greedy generation, so a wider
//! external model could be substituted behind the same surface.

pub mod train;
pub mod vectorize;
pub mod vocab;

use std::path::Path;
use ndarray::{Array2, ArrayView1};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{read_checkpoint, write_checkpoint, xavier_uniform, Checkpoint, Mat, ParamStore, Tape, Var};
use crate::rng::{derived_rng, streams};

pub use train::{fit_toy_lm, split_point, split_sentence, train_toy_lm, LmTrainConfig, LmTrainReport};
pub use vectorize::{LmSentenceVectorizer, LmTokenEmbedder};
pub use vocab::{build_vocab, split_words, tokenize, TokenSeq, Vocabulary};

pub const CHECKPOINT_KIND: &str = "frozen_lm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_mult: usize,
    /// Maximum prompt + continuation length.
    pub context: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig { embed_dim: 64, layers: 2, heads: 4, ff_mult: 4, context: 96 }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.layers == 0 || self.heads == 0 || self.ff_mult == 0 || self.context == 0 {
            return Err(Error::config(format!("LM dimensions must be positive: {self:?}")));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::config(format!("embed_dim {} is not divisible by {} heads", self.embed_dim, self.heads)));
        }
        Ok(())
    }
}

const PER_LAYER: usize = 13;
const LAYER_NAMES: [&str; PER_LAYER] =
    ["ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "bo", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"];

/// Tape handles of every LM parameter for one forward pass.
pub struct LmVars(Vec<Var>);

impl LmVars {
    fn tok(&self) -> Var {
        self.0[0]
    }
    fn pos(&self) -> Var {
        self.0[1]
    }
    fn layer(&self, l: usize, k: usize) -> Var {
        self.0[2 + l * PER_LAYER + k]
    }
    fn tail(&self, k: usize) -> Var {
        self.0[self.0.len() - 4 + k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenLM {
    pub config: LmConfig,
    pub vocab: Vocabulary,
    params: ParamStore,
    checksum: String,
}

impl FrozenLM {
    /// Random weights: Xavier-uniform matrices, N(0, 1) token embeddings,
    /// N(0, 0.1²) position embeddings, unit LayerNorm gains, zero biases.
    pub fn init(config: LmConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let e = config.embed_dim;
        let v = vocab.len();
        let mut rng = derived_rng(seed, &[streams::LM, 0]);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let small = Normal::new(0.0, 0.1).expect("valid normal");
        let mut p = ParamStore::new();
        p.add("tok_emb", Array2::from_shape_fn((v, e), |_| unit.sample(&mut rng)));
        p.add("pos_emb", Array2::from_shape_fn((config.context, e), |_| small.sample(&mut rng)));
        let f = e * config.ff_mult;
        for l in 0..config.layers {
            for name in LAYER_NAMES {
                let m = match name {
                    "ln1_g" | "ln2_g" => Array2::ones((1, e)),
                    "ln1_b" | "ln2_b" | "bo" | "b2" => Array2::zeros((1, e)),
                    "b1" => Array2::zeros((1, f)),
                    "w1" => xavier_uniform(&mut rng, e, f),
                    "w2" => xavier_uniform(&mut rng, f, e),
                    _ => xavier_uniform(&mut rng, e, e),
                };
                p.add(format!("layer{l}.{name}"), m);
            }
        }
        p.add("lnf_g", Array2::ones((1, e)));
        p.add("lnf_b", Array2::zeros((1, e)));
        p.add("w_out", xavier_uniform(&mut rng, e, v));
        p.add("b_out", Array2::zeros((1, v)));
        Ok(Self::from_params(config, vocab, p))
    }

    /// Wraps trained parameters, rounding them to f32 and recording the
    /// checksum (the freeze).
    pub fn from_params(config: LmConfig, vocab: Vocabulary, mut params: ParamStore) -> Self {
        params.round_to_f32();
        let checksum = params.checksum();
        FrozenLM { config, vocab, params, checksum }
    }

    /// Checksum recorded at freeze time.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// Checksum of the parameters as they are now.
    pub fn current_checksum(&self) -> String {
        self.params.checksum()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn embedding_row(&self, id: usize) -> ArrayView1<'_, f64> {
        self.params.values[0].row(id)
    }

    pub fn embed_ids(&self, ids: &[usize]) -> Result<Mat> {
        if let Some(bad) = ids.iter().find(|&&i| i >= self.vocab.len()) {
            return Err(Error::data(format!("token id {bad} is outside the vocabulary ({})", self.vocab.len())));
        }
        Ok(self.params.values[0].select(ndarray::Axis(0), ids))
    }

    /// [MAX_LEN × E]; pad positions get the pad row.
    pub fn embed(&self, seq: &TokenSeq) -> Result<Mat> {
        self.embed_ids(&seq.ids)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> LmVars {
        LmVars(self.params.bind(tape, trainable))
    }

    /// Embedding rows of `ids` as a tape node.
    pub fn embed_var(&self, tape: &mut Tape, vars: &LmVars, ids: &[usize]) -> Var {
        tape.select_rows(vars.tok(), ids)
    }

    /// Final hidden states (after the last LayerNorm) for several input
    /// embedding sequences, one slice per sequence.
    pub fn forward_hidden(&self, tape: &mut Tape, vars: &LmVars, seqs: &[Var]) -> Result<Vec<Var>> {
        let (x, lens) = self.forward_stacked(tape, vars, seqs)?;
        if lens.len() == 1 {
            return Ok(vec![x]);
        }
        let mut out = Vec::with_capacity(lens.len());
        let mut off = 0;
        for &n in &lens {
            out.push(tape.slice_rows(x, off, off + n));
            off += n;
        }
        Ok(out)
    }

    /// Hidden states of all sequences stacked row-wise, plus their lengths.
    /// Sequences share the dense layers and attend only within themselves,
    /// causally.
    pub fn forward_stacked(&self, tape: &mut Tape, vars: &LmVars, seqs: &[Var]) -> Result<(Var, Vec<usize>)> {
        let e = self.config.embed_dim;
        let lens: Vec<usize> = seqs.iter().map(|s| tape.value(*s).nrows()).collect();
        for (s, &n) in seqs.iter().zip(&lens) {
            if n == 0 || n > self.config.context {
                return Err(Error::data(format!("sequence length {n} outside 1..={}", self.config.context)));
            }
            if tape.value(*s).ncols() != e {
                return Err(Error::data(format!("input width {} but the LM expects {e}", tape.value(*s).ncols())));
            }
        }
        if seqs.is_empty() {
            return Err(Error::data("no sequences to run through the LM"));
        }
        let mut parts = Vec::with_capacity(seqs.len());
        for (s, &n) in seqs.iter().zip(&lens) {
            let pos = tape.slice_rows(vars.pos(), 0, n);
            parts.push(tape.add(*s, pos));
        }
        let mut x = if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts) };
        let h = self.config.heads;
        let dh = e / h;
        let inv = 1.0 / (dh as f64).sqrt();
        for l in 0..self.config.layers {
            let p = |k| vars.layer(l, k);
            let ln = tape.layer_norm(x, p(0), p(1));
            let q = tape.matmul(ln, p(2));
            let k = tape.matmul(ln, p(3));
            let v = tape.matmul(ln, p(4));
            let mut outs = Vec::with_capacity(seqs.len());
            let mut off = 0;
            for &n in &lens {
                let (qs, ks, vs) = if lens.len() == 1 {
                    (q, k, v)
                } else {
                    (tape.slice_rows(q, off, off + n), tape.slice_rows(k, off, off + n), tape.slice_rows(v, off, off + n))
                };
                let mut heads = Vec::with_capacity(h);
                for hd in 0..h {
                    let (a, b) = (hd * dh, (hd + 1) * dh);
                    let qh = tape.slice_cols(qs, a, b);
                    let kh = tape.slice_cols(ks, a, b);
                    let vh = tape.slice_cols(vs, a, b);
                    let sc = tape.matmul_t(qh, kh);
                    let sc = tape.scale(sc, inv);
                    let pr = tape.softmax(sc, true);
                    heads.push(tape.matmul(pr, vh));
                }
                outs.push(tape.concat_cols(&heads));
                off += n;
            }
            let att = if outs.len() == 1 { outs[0] } else { tape.concat_rows(&outs) };
            let att = tape.matmul(att, p(5));
            let att = tape.add_row(att, p(6));
            x = tape.add(x, att);
            let ln2 = tape.layer_norm(x, p(7), p(8));
            let f = tape.matmul(ln2, p(9));
            let f = tape.add_row(f, p(10));
            let f = tape.gelu(f);
            let f = tape.matmul(f, p(11));
            let f = tape.add_row(f, p(12));
            x = tape.add(x, f);
        }
        let x = tape.layer_norm(x, vars.tail(0), vars.tail(1));
        Ok((x, lens))
    }

    /// Raw next-token scores for hidden rows.
    pub fn project(&self, tape: &mut Tape, vars: &LmVars, hidden: Var) -> Var {
        let o = tape.matmul(hidden, vars.tail(2));
        tape.add_row(o, vars.tail(3))
    }

    /// Unnormalised logits [len × vocab], causal.
    pub fn forward_logits(&self, prompt: &Mat) -> Result<Mat> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(prompt.clone());
        let h = self.forward_hidden(&mut tape, &vars, &[x])?[0];
        let l = self.project(&mut tape, &vars, h);
        Ok(tape.value(l).clone())
    }

    /// Argmax continuation; stops at eos (not included) or after `max_new`.
    pub fn greedy_generate(&self, prompt: &Mat, max_new: usize) -> Result<Vec<usize>> {
        Ok(self.greedy_generate_batch(std::slice::from_ref(prompt), max_new)?.remove(0))
    }

    /// Greedy decoding of several prompts at once; each output is identical
    /// to decoding that prompt alone.
    pub fn greedy_generate_batch(&self, prompts: &[Mat], max_new: usize) -> Result<Vec<Vec<usize>>> {
        let mut seqs: Vec<Mat> = prompts.to_vec();
        let mut out = vec![Vec::new(); prompts.len()];
        let mut active: Vec<usize> = (0..prompts.len()).collect();
        let tok = self.params.values[0].clone();
        for _ in 0..max_new {
            if active.is_empty() {
                break;
            }
            let room = active.iter().all(|&i| seqs[i].nrows() < self.config.context);
            let mut tape = Tape::new();
            let vars = self.bind(&mut tape, false);
            let xs: Vec<Var> = active.iter().map(|&i| tape.constant(seqs[i].clone())).collect();
            let hs = self.forward_hidden(&mut tape, &vars, &xs)?;
            let lasts: Vec<Var> = hs.iter().map(|h| {
                let n = tape.value(*h).nrows();
                tape.slice_rows(*h, n - 1, n)
            }).collect();
            let last = if lasts.len() == 1 { lasts[0] } else { tape.concat_rows(&lasts) };
            let logits = self.project(&mut tape, &vars, last);
            let lv = tape.value(logits);
            let mut still = Vec::with_capacity(active.len());
            for (r, &i) in active.iter().enumerate() {
                let row = lv.row(r);
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                if best == vocab::EOS_ID {
                    continue;
                }
                out[i].push(best);
                if room {
                    let e = tok.row(best).insert_axis(ndarray::Axis(0));
                    seqs[i] = ndarray::concatenate(ndarray::Axis(0), &[seqs[i].view(), e]).expect("same width");
                    still.push(i);
                }
            }
            active = still;
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            meta: serde_json::json!({
                "config": self.config,
                "vocab_hash": self.vocab.hash(),
                "vocab": self.vocab,
                "checksum": self.checksum,
            }),
            params: self.params.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.to_checkpoint())
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::data(format!("expected a {CHECKPOINT_KIND} checkpoint, got {}", ck.kind)));
        }
        let config: LmConfig = serde_json::from_value(ck.meta["config"].clone())
            .map_err(|e| Error::data(format!("LM checkpoint config: {e}")))?;
        let vocab: Vocabulary = serde_json::from_value(ck.meta["vocab"].clone())
            .map_err(|e| Error::data(format!("LM checkpoint vocabulary: {e}")))?;
        if ck.meta["vocab_hash"].as_str() != Some(vocab.hash().as_str()) {
            return Err(Error::data("LM checkpoint vocabulary hash mismatch"));
        }
        let lm = Self::from_params(config, vocab, ck.params);
        if ck.meta["checksum"].as_str() != Some(lm.checksum.as_str()) {
            return Err(Error::data("LM checkpoint parameters do not match the recorded checksum"));
        }
        Ok(lm)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(read_checkpoint(path)?)
    }

    /// Mean embedding over the real (non-pad) positions of `seq`.
    pub fn mean_embedding(&self, seq: &TokenSeq) -> Result<Vec<f64>> {
        let real = seq.real();
        if real.is_empty() {
            return Err(Error::data("sequence has no real tokens"));
        }
        let rows = self.embed_ids(&real)?;
        Ok(rows.mean_axis(ndarray::Axis(0)).expect("non-empty").to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> FrozenLM {
        let v = build_vocab(&["the cat sat on the mat".to_string()]).unwrap();
        FrozenLM::init(LmConfig { embed_dim: 16, layers: 2, heads: 2, ff_mult: 2, context: 24 }, v, 3).unwrap()
    }

    #[test]
    fn embed_shapes_and_pad_rows() {
        let lm = tiny();
        let s = tokenize("the cat", &lm.vocab).unwrap();
        let e = lm.embed(&s).unwrap();
        assert_eq!(e.dim(), (32, 16));
        assert_eq!(e.row(10), lm.embedding_row(vocab::PAD_ID));
        assert_eq!(e, lm.embed(&s).unwrap());
        assert!(lm.embed_ids(&[999]).is_err());
    }

    #[test]
    fn logits_are_causal() {
        let lm = tiny();
        let x = lm.embed_ids(&[1, 5, 6, 7, 8]).unwrap();
        let a = lm.forward_logits(&x).unwrap();
        assert_eq!(a.dim(), (5, lm.vocab.len()));
        let mut y = x.clone();
        y.row_mut(3).iter_mut().enumerate().for_each(|(j, v)| *v += if j % 2 == 0 { 1.0 } else { -0.5 });
        let b = lm.forward_logits(&y).unwrap();
        for i in 0..3 {
            for j in 0..a.ncols() {
                assert!((a[[i, j]] - b[[i, j]]).abs() < 1e-12);
            }
        }
        assert!((0..a.ncols()).any(|j| (a[[3, j]] - b[[3, j]]).abs() > 1e-9));
        assert!(lm.forward_logits(&Array2::zeros((25, 16))).is_err());
    }

    #[test]
    fn batched_forward_matches_single() {
        let lm = tiny();
        let a = lm.embed_ids(&[1, 5, 6]).unwrap();
        let b = lm.embed_ids(&[1, 7, 8, 9, 5]).unwrap();
        let mut tape = Tape::new();
        let vars = lm.bind(&mut tape, false);
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let hs = lm.forward_hidden(&mut tape, &vars, &[va, vb]).unwrap();
        let lb = lm.project(&mut tape, &vars, hs[1]);
        let single = lm.forward_logits(&b).unwrap();
        for (x, y) in tape.value(lb).iter().zip(single.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_is_deterministic_and_batch_consistent() {
        let lm = tiny();
        let p1 = lm.embed_ids(&[1, 5]).unwrap();
        let p2 = lm.embed_ids(&[1, 7, 8]).unwrap();
        let g1 = lm.greedy_generate(&p1, 6).unwrap();
        assert_eq!(g1, lm.greedy_generate(&p1, 6).unwrap());
        let both = lm.greedy_generate_batch(&[p1, p2.clone()], 6).unwrap();
        assert_eq!(both[0], g1);
        assert_eq!(both[1], lm.greedy_generate(&p2, 6).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_keeps_checksum() {
        let lm = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.ckpt");
        lm.save(&path).unwrap();
        let back = FrozenLM::load(&path).unwrap();
        assert_eq!(back.checksum(), lm.checksum());
        assert_eq!(back, lm);
    }
}
