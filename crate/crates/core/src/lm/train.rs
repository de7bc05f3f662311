//! Training of the stand-in LM, done once before it is frozen.
//!
//! Besides plain next-token prediction, each sentence may be presented as
//! `<s> context <brain/> h… </brain> continuation </s>` or
//! `<s> <brain/> h… </brain> continuation </s>`, where every slot h is a
//! noisy copy of the mean embedding of the tokenized continuation. This is
//! the same quantity the brain encoder is pretrained to predict, so the
//! frozen model already knows how to read content between the brain tags.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::{BOS_ID, BRAIN_CLOSE_ID, BRAIN_OPEN_ID, EOS_ID, MAX_LEN};
use super::{build_vocab, FrozenLM, LmConfig, LmVars};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam, Mat, ParamStore, Tape, Var};
use crate::rng::{derived_rng, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmTrainConfig {
    pub model: LmConfig,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    /// Share of sentences held out for the plateau check; 0 uses the
    /// training loss instead.
    pub val_fraction: f64,
    /// Epochs without a 0.1 % validation improvement before stopping.
    pub patience: usize,
    pub min_corpus: usize,
    pub augment: bool,
    /// Number of hint slots between the brain tags.
    pub hint_slots: usize,
    /// Hint noise sd relative to the RMS of the clean hint.
    pub hint_noise: f64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig {
            model: LmConfig::default(),
            max_epochs: 40,
            batch_size: 16,
            lr: 2e-3,
            clip_norm: 1.0,
            val_fraction: 0.05,
            patience: 3,
            min_corpus: 100,
            augment: true,
            hint_slots: 4,
            hint_noise: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmTrainReport {
    pub vocab_size: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Plain-format perplexity of the frozen model on the training sentences.
    pub train_ppl: f64,
    /// Plain-format validation perplexity per epoch (empty without a
    /// validation split).
    pub val_ppl: Vec<f64>,
    pub checksum: String,
}

/// Context/continuation boundary: the first floor(n/2) words are context.
pub fn split_point(n_words: usize) -> usize {
    n_words / 2
}

/// Splits at whitespace word [`split_point`]; punctuation stays attached
/// to its word, so a trailing full stop belongs to the continuation.
pub fn split_sentence(text: &str) -> (String, String) {
    let words: Vec<&str> = text.split_whitespace().collect();
    let k = split_point(words.len());
    (words[..k].join(" "), words[k..].join(" "))
}

struct Item {
    prefix: Vec<usize>,
    hint: Option<Mat>,
    suffix: Vec<usize>,
    targets: Vec<Option<usize>>,
}

impl Item {
    fn plain(words: &[usize]) -> Item {
        let mut prefix = vec![BOS_ID];
        prefix.extend_from_slice(words);
        let targets = words.iter().copied().chain([EOS_ID]).map(Some).collect();
        Item { prefix, hint: None, suffix: Vec::new(), targets }
    }

    fn hinted(context: Option<&[usize]>, cont: &[usize], hint: Mat) -> Item {
        let mut prefix = vec![BOS_ID];
        prefix.extend_from_slice(context.unwrap_or(&[]));
        prefix.push(BRAIN_OPEN_ID);
        let mut suffix = vec![BRAIN_CLOSE_ID];
        suffix.extend_from_slice(cont);
        let mut targets = vec![None; prefix.len() + hint.nrows()];
        targets.extend(cont.iter().copied().chain([EOS_ID]).map(Some));
        Item { prefix, hint: Some(hint), suffix, targets }
    }

    fn input(&self, tape: &mut Tape, vars: &LmVars) -> Var {
        let mut parts = vec![tape.select_rows(vars.tok(), &self.prefix)];
        if let Some(h) = &self.hint {
            parts.push(tape.constant(h.clone()));
        }
        if !self.suffix.is_empty() {
            parts.push(tape.select_rows(vars.tok(), &self.suffix));
        }
        if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat_rows(&parts)
        }
    }
}

/// K copies of the mean embedding over bos + continuation + eos (the real
/// positions of the tokenized continuation), each with independent noise.
fn hint_block<R: Rng>(store: &ParamStore, cont: &[usize], k: usize, noise: f64, rng: &mut R) -> Mat {
    let ids: Vec<usize> = [BOS_ID].into_iter().chain(cont.iter().copied()).chain([EOS_ID]).collect();
    let emb = &store.values[0];
    let e = emb.ncols();
    let mut mean = vec![0.0; e];
    for &i in &ids {
        for (m, x) in mean.iter_mut().zip(emb.row(i)) {
            *m += x / ids.len() as f64;
        }
    }
    let rms = (mean.iter().map(|x| x * x).sum::<f64>() / e as f64).sqrt();
    let sd = noise * rms;
    let normal = (sd > 0.0).then(|| Normal::new(0.0, sd).expect("positive sd"));
    Mat::from_shape_fn((k, e), |(_, j)| mean[j] + normal.as_ref().map_or(0.0, |n| n.sample(rng)))
}

/// Summed negative log-likelihood and token count, no gradients.
fn eval_nll(shape: &FrozenLM, store: &ParamStore, items: &[Item], batch: usize) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut count = 0;
    for chunk in items.chunks(batch.max(1) * 4) {
        let mut tape = Tape::new();
        let vars = LmVars(store.bind(&mut tape, false));
        let loss = batch_loss(shape, &mut tape, &vars, chunk)?;
        let n: usize = chunk.iter().map(|i| i.targets.iter().flatten().count()).sum();
        total += tape.scalar(loss) * n as f64;
        count += n;
    }
    Ok((total, count))
}

fn batch_loss(shape: &FrozenLM, tape: &mut Tape, vars: &LmVars, items: &[Item]) -> Result<Var> {
    let inputs: Vec<Var> = items.iter().map(|it| it.input(tape, vars)).collect();
    let (hidden, _) = shape.forward_stacked(tape, vars, &inputs)?;
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut off = 0;
    for it in items {
        for (r, t) in it.targets.iter().enumerate() {
            if let Some(t) = t {
                rows.push(off + r);
                targets.push(Some(*t));
            }
        }
        off += it.targets.len();
    }
    if rows.is_empty() {
        return Err(Error::data("batch has no prediction targets"));
    }
    let h = tape.select_rows(hidden, &rows);
    let logits = shape.project(tape, vars, h);
    Ok(tape.cross_entropy(logits, &targets))
}

/// Trains and freezes the stand-in LM.
pub fn train_toy_lm(corpus: &[String], cfg: &LmTrainConfig, seed: u64) -> Result<FrozenLM> {
    Ok(fit_toy_lm(corpus, cfg, seed)?.0)
}

pub fn fit_toy_lm(corpus: &[String], cfg: &LmTrainConfig, seed: u64) -> Result<(FrozenLM, LmTrainReport)> {
    if corpus.len() < cfg.min_corpus.max(1) {
        return Err(Error::data(format!("LM training needs at least {} sentences, got {}", cfg.min_corpus, corpus.len())));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 || !(cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::config(format!("invalid LM training config: {cfg:?}")));
    }
    if cfg.augment && super::vocab::MAX_LEN + cfg.hint_slots + 2 > cfg.model.context {
        return Err(Error::config("LM context is too short for the hinted formats"));
    }
    let vocab = build_vocab(corpus)?;
    let shape = FrozenLM::init(cfg.model, vocab.clone(), seed)?;
    let mut store = shape.params().clone();
    let mut sentences: Vec<(Vec<usize>, Vec<usize>)> = Vec::with_capacity(corpus.len());
    for s in corpus {
        let (a, b) = split_sentence(s);
        let ctx = vocab.encode_words(&a)?;
        let mut cont = vocab.encode_words(&b)?;
        cont.truncate((MAX_LEN - 2).saturating_sub(ctx.len()));
        sentences.push((ctx, cont));
    }
    let whole = |i: usize| -> Vec<usize> { sentences[i].0.iter().chain(&sentences[i].1).copied().collect() };

    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.shuffle(&mut derived_rng(seed, &[streams::LM, 1]));
    let n_val = (cfg.val_fraction * sentences.len() as f64).ceil() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_idx = train_idx.to_vec();

    let hinted_items = |store: &ParamStore, idx: usize, format: usize, rng: &mut crate::rng::Rng| -> Item {
        let (ctx, cont) = (&sentences[idx].0, &sentences[idx].1);
        if format == 0 || cont.is_empty() {
            return Item::plain(&whole(idx));
        }
        let hint = hint_block(store, cont, cfg.hint_slots, cfg.hint_noise, rng);
        Item::hinted((format == 1).then_some(ctx.as_slice()), cont, hint)
    };
    let n_formats = if cfg.augment { 3 } else { 1 };

    let mut opt = Adam::new(&store, cfg.lr);
    let mut best = store.clone();
    let mut best_score = f64::INFINITY;
    let mut best_epoch = 0;
    let mut wait = 0;
    let mut val_ppl = Vec::new();
    let mut epochs_run = 0;
    for epoch in 0..cfg.max_epochs {
        epochs_run = epoch + 1;
        let mut rng = derived_rng(seed, &[streams::LM, 2, epoch as u64]);
        let mut idx = train_idx.clone();
        idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for chunk in idx.chunks(cfg.batch_size) {
            let items: Vec<Item> = chunk
                .iter()
                .map(|&i| {
                    let f = rng.gen_range(0..n_formats);
                    hinted_items(&store, i, f, &mut rng)
                })
                .collect();
            let mut tape = Tape::new();
            let vars = LmVars(store.bind(&mut tape, true));
            let loss = batch_loss(&shape, &mut tape, &vars, &items)?;
            let l = tape.scalar(loss);
            if !l.is_finite() {
                return Err(Error::numerical(format!("LM training diverged at epoch {epoch} (loss {l})")));
            }
            let n: usize = items.iter().map(|i| i.targets.iter().flatten().count()).sum();
            epoch_loss += l * n as f64;
            epoch_tokens += n;
            let mut grads = tape.backward(loss).param_grads(store.len());
            clip_grad_norm(&mut grads, cfg.clip_norm);
            opt.step(&mut store, &grads)?;
        }
        if !store.all_finite() {
            return Err(Error::numerical(format!("LM parameters became non-finite at epoch {epoch}")));
        }
        let score = if val_idx.is_empty() {
            epoch_loss / epoch_tokens.max(1) as f64
        } else {
            let plain: Vec<Item> = val_idx.iter().map(|&i| Item::plain(&whole(i))).collect();
            let (pn, pc) = eval_nll(&shape, &store, &plain, cfg.batch_size)?;
            val_ppl.push((pn / pc as f64).exp());
            let mut vrng = derived_rng(seed, &[streams::LM, 3]);
            let mut all = plain;
            for f in 1..n_formats {
                all.extend(val_idx.iter().map(|&i| hinted_items(&store, i, f, &mut vrng)));
            }
            let (n, c) = eval_nll(&shape, &store, &all, cfg.batch_size)?;
            n / c as f64
        };
        log::info!(
            "lm epoch {epoch}: train nll {:.4}, plateau score {score:.4}",
            epoch_loss / epoch_tokens.max(1) as f64
        );
        if score < best_score * (1.0 - 1e-3) {
            best_score = score;
            best = store.clone();
            best_epoch = epoch;
            wait = 0;
        } else {
            if score < best_score {
                best_score = score;
                best = store.clone();
                best_epoch = epoch;
            }
            wait += 1;
            if wait >= cfg.patience {
                break;
            }
        }
    }
    let lm = FrozenLM::from_params(cfg.model, vocab, best);
    let plain: Vec<Item> = train_idx.iter().map(|&i| Item::plain(&whole(i))).collect();
    let (n, c) = eval_nll(&lm, lm.params(), &plain, cfg.batch_size)?;
    let report = LmTrainReport {
        vocab_size: lm.vocab.len(),
        epochs_run,
        best_epoch,
        train_ppl: (n / c as f64).exp(),
        val_ppl,
        checksum: lm.checksum().to_string(),
    };
    Ok((lm, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::tokenize;

    const TEN: [&str; 10] = [
        "the red fox jumps over the lazy dog",
        "a small bird sings in the morning light",
        "my old friend writes long letters every winter",
        "we often walk along the quiet river path",
        "she quickly painted the fence before the rain",
        "our neighbours keep three cats and a parrot",
        "every library smells of paper and dust",
        "they never visit the museum on sundays",
        "his brother fixes bicycles in a tiny shop",
        "cold coffee tastes better with some ice",
    ];

    fn small_cfg() -> LmTrainConfig {
        LmTrainConfig {
            model: LmConfig { embed_dim: 32, layers: 2, heads: 4, ff_mult: 4, context: 96 },
            max_epochs: 120,
            batch_size: 5,
            lr: 3e-3,
            val_fraction: 0.0,
            patience: 1000,
            min_corpus: 10,
            augment: false,
            ..LmTrainConfig::default()
        }
    }

    #[test]
    fn memorises_a_small_corpus() {
        let corpus: Vec<String> = TEN.iter().map(|s| s.to_string()).collect();
        let (lm, report) = fit_toy_lm(&corpus, &small_cfg(), 1).unwrap();
        assert!(report.train_ppl < lm.vocab.len() as f64);
        let mut hits = 0;
        for s in &corpus {
            let ids = tokenize(s, &lm.vocab).unwrap().words();
            let mut prompt = vec![BOS_ID];
            prompt.extend_from_slice(&ids[..3]);
            let out = lm.greedy_generate(&lm.embed_ids(&prompt).unwrap(), 32).unwrap();
            hits += (out == ids[3..]) as usize;
        }
        assert!(hits >= 9, "{hits}/10 memorised");
    }

    #[test]
    fn small_corpus_is_rejected_by_default() {
        let corpus: Vec<String> = TEN.iter().map(|s| s.to_string()).collect();
        assert!(fit_toy_lm(&corpus, &LmTrainConfig::default(), 1).is_err());
    }

    #[test]
    fn same_seed_same_checksum() {
        let corpus: Vec<String> = TEN.iter().map(|s| s.to_string()).collect();
        let cfg = LmTrainConfig { max_epochs: 2, augment: true, ..small_cfg() };
        let a = train_toy_lm(&corpus, &cfg, 5).unwrap();
        let b = train_toy_lm(&corpus, &cfg, 5).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_eq!(a.checksum(), a.current_checksum());
        let c = train_toy_lm(&corpus, &cfg, 6).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn split_point_is_floor_half() {
        assert_eq!(split_point(10), 5);
        assert_eq!(split_point(9), 4);
        assert_eq!(split_point(1), 0);
        let (a, b) = split_sentence("I like the big red kite.");
        assert_eq!((a.as_str(), b.as_str()), ("I like the", "big red kite."));
    }
}
