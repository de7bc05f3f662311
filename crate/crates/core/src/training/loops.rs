use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::prompt::{prompt_loss, PromptItem};
use super::PromptExample;
use crate::encoder::{BrainEncoder, Dropout};
use crate::error::{Error, Result};
use crate::lm::FrozenLM;
use crate::nn::{clip_grad_norm, Adam, Mat, Tape, Var};
use crate::rng::{derived_rng, streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Small batches give the short pretraining run enough update steps.
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { epochs: 10, lr: 1e-3, batch_size: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub gamma: f64,
    pub clip_norm: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub early_stop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 8, lr: 1e-4, gamma: 0.95, clip_norm: 10.0, patience: 10, max_epochs: 50, early_stop: true }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || !(self.lr > 0.0) || !(self.gamma > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::config(format!("invalid training config: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Encoder at the best validation loss (last epoch without validation).
    pub encoder: BrainEncoder,
    pub best_epoch: usize,
    pub best_val: Option<f64>,
    pub history: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Mean embedding of the tokenized continuation, repeated over K slots.
pub fn pretrain_target(lm: &FrozenLM, ex: &PromptExample, k: usize) -> Result<Mat> {
    let m = lm.mean_embedding(&ex.continuation)?;
    Ok(Mat::from_shape_fn((k, m.len()), |(_, j)| m[j]))
}

fn encode_batch(
    enc: &BrainEncoder,
    tape: &mut Tape,
    vars: &[Var],
    batch: &[&PromptExample],
    rng: Option<&mut crate::rng::Rng>,
) -> Result<Vec<Var>> {
    let xs: Vec<Var> = batch.iter().map(|e| tape.constant(e.brain.clone())).collect();
    let drop = rng.map(|rng| Dropout { p: enc.config.dropout, rng });
    enc.forward(tape, vars, &xs, drop)
}

/// Mean-squared error of the encoder slots against the pretraining targets.
pub fn pretrain_loss(
    enc: &BrainEncoder,
    tape: &mut Tape,
    vars: &[Var],
    batch: &[&PromptExample],
    targets: &[Mat],
    rng: Option<&mut crate::rng::Rng>,
) -> Result<Var> {
    let out = encode_batch(enc, tape, vars, batch, rng)?;
    let y = tape.concat_rows(&out);
    let t: Vec<_> = targets.iter().map(|m| m.view()).collect();
    let t = ndarray::concatenate(ndarray::Axis(0), &t).map_err(|e| Error::data(e.to_string()))?;
    if t.dim() != tape.value(y).dim() {
        return Err(Error::data("pretraining targets do not match the encoder output"));
    }
    Ok(tape.mse(y, t))
}

fn check_frozen(lm: &FrozenLM) -> Result<()> {
    if lm.current_checksum() != lm.checksum() {
        return Err(Error::numerical("frozen LM parameters changed"));
    }
    Ok(())
}

/// Regresses encoder slots onto mean continuation embeddings. Returns the
/// trained encoder and the mean loss of every epoch (index 0 is the loss
/// before any update).
pub fn pretrain(
    enc: &BrainEncoder,
    examples: &[&PromptExample],
    lm: &FrozenLM,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<(BrainEncoder, Vec<f64>)> {
    if examples.is_empty() || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::config("pretraining needs examples, a positive batch size and learning rate"));
    }
    if enc.config.output_width != lm.embed_dim() {
        return Err(Error::config(format!("encoder width {} does not match LM width {}", enc.config.output_width, lm.embed_dim())));
    }
    let k = enc.config.brain_slots;
    let targets: Vec<Mat> = examples.iter().map(|e| pretrain_target(lm, e, k)).collect::<Result<_>>()?;
    let mut enc = enc.clone();
    let mut opt = Adam::new(&enc.params, cfg.lr);
    let eval = |enc: &BrainEncoder| -> Result<f64> {
        let mut total = 0.0;
        for (chunk, tchunk) in examples.chunks(32).zip(targets.chunks(32)) {
            let mut tape = Tape::new();
            let vars = enc.params.bind(&mut tape, false);
            let l = pretrain_loss(enc, &mut tape, &vars, chunk, tchunk, None)?;
            total += tape.scalar(l) * chunk.len() as f64;
        }
        Ok(total / examples.len() as f64)
    };
    let mut losses = vec![eval(&enc)?];
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = derived_rng(seed, &[streams::TRAIN, 0, epoch as u64]);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PromptExample> = chunk.iter().map(|&i| examples[i]).collect();
            let tb: Vec<Mat> = chunk.iter().map(|&i| targets[i].clone()).collect();
            let mut tape = Tape::new();
            let vars = enc.params.bind(&mut tape, true);
            let loss = pretrain_loss(&enc, &mut tape, &vars, &batch, &tb, Some(&mut rng))?;
            if !tape.scalar(loss).is_finite() {
                return Err(Error::numerical(format!("pretraining loss is not finite at epoch {epoch}")));
            }
            let grads = tape.backward(loss).param_grads(enc.params.len());
            opt.step(&mut enc.params, &grads)?;
        }
        losses.push(eval(&enc)?);
        log::info!("pretrain epoch {epoch}: mse {:.5}", losses.last().unwrap());
    }
    check_frozen(lm)?;
    Ok((enc, losses))
}

fn items_loss(
    enc: &BrainEncoder,
    lm: &FrozenLM,
    batch: &[&PromptExample],
    trainable: bool,
    rng: Option<&mut crate::rng::Rng>,
) -> Result<(Tape, Var)> {
    let mut tape = Tape::new();
    let lvars = lm.bind(&mut tape, false);
    let evars = enc.params.bind(&mut tape, trainable);
    let slots = encode_batch(enc, &mut tape, &evars, batch, rng)?;
    let items: Vec<PromptItem<'_>> = batch
        .iter()
        .zip(slots)
        .map(|(e, s)| PromptItem { context: Some(&e.context), slots: s, continuation: &e.continuation })
        .collect();
    let loss = prompt_loss(&mut tape, lm, &lvars, &items)?;
    Ok((tape, loss))
}

/// Token-weighted mean cross-entropy in eval mode.
pub fn validation_loss(enc: &BrainEncoder, examples: &[&PromptExample], lm: &FrozenLM) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::data("empty validation set"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in examples.chunks(32) {
        let (tape, loss) = items_loss(enc, lm, chunk, false, None)?;
        let n: usize = chunk.iter().map(|e| super::masked_targets(&e.continuation).iter().flatten().count()).sum();
        total += tape.scalar(loss) * n as f64;
        count += n;
    }
    Ok(total / count as f64)
}

/// Prompt-tuning: only the encoder is updated; the LM is bound as constants.
pub fn train_main(
    enc: &BrainEncoder,
    train: &[&PromptExample],
    val: &[&PromptExample],
    lm: &FrozenLM,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::data("empty training set"));
    }
    if enc.config.output_width != lm.embed_dim() {
        return Err(Error::config(format!("encoder width {} does not match LM width {}", enc.config.output_width, lm.embed_dim())));
    }
    let mut enc = enc.clone();
    let mut opt = Adam::new(&enc.params, cfg.lr);
    let mut best = enc.clone();
    let mut best_val: Option<f64> = None;
    let mut best_epoch = 0;
    let mut wait = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.max_epochs {
        opt.lr = cfg.lr * cfg.gamma.powi(epoch as i32);
        let mut rng = derived_rng(seed, &[streams::TRAIN, 1, epoch as u64]);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PromptExample> = chunk.iter().map(|&i| train[i]).collect();
            let (tape, loss) = items_loss(&enc, lm, &batch, true, Some(&mut rng))?;
            let l = tape.scalar(loss);
            if !l.is_finite() {
                return Err(Error::numerical(format!("training loss is not finite at epoch {epoch}")));
            }
            total += l * batch.len() as f64;
            let mut grads = tape.backward(loss).param_grads(enc.params.len());
            clip_grad_norm(&mut grads, cfg.clip_norm);
            opt.step(&mut enc.params, &grads)?;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = if val.is_empty() { None } else { Some(validation_loss(&enc, val, lm)?) };
        log::info!("train epoch {epoch}: loss {train_loss:.4}, val {val_loss:?}");
        history.push(EpochLog { epoch, lr: opt.lr, train_loss, val_loss });
        match val_loss {
            Some(v) if best_val.is_none_or(|b| v < b) => {
                best_val = Some(v);
                best = enc.clone();
                best_epoch = epoch;
                wait = 0;
            }
            Some(_) => {
                wait += 1;
                if cfg.early_stop && wait >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
            None => {
                best = enc.clone();
                best_epoch = epoch;
            }
        }
    }
    check_frozen(lm)?;
    Ok(TrainOutcome { encoder: best, best_epoch, best_val, history, stopped_early })
}

/// Continues training a multi-participant encoder on the held-out
/// participant's fine-tune trials (80/20 train/validation), with the same
/// procedure as the main loop.
pub fn finetune(
    enc: &BrainEncoder,
    finetune_set: &[&PromptExample],
    test_ids: &[String],
    lm: &FrozenLM,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let test: BTreeSet<&String> = test_ids.iter().collect();
    if let Some(e) = finetune_set.iter().find(|e| test.contains(&e.id)) {
        return Err(Error::data(format!("fine-tune example {} is also a test example", e.id)));
    }
    if finetune_set.len() < 2 {
        return Err(Error::data("fine-tuning needs at least 2 examples"));
    }
    let mut idx: Vec<usize> = (0..finetune_set.len()).collect();
    idx.shuffle(&mut derived_rng(seed, &[streams::SPLIT, 1]));
    let n_val = (finetune_set.len() as f64 * 0.2).ceil() as usize;
    let val: Vec<&PromptExample> = idx[..n_val].iter().map(|&i| finetune_set[i]).collect();
    let train: Vec<&PromptExample> = idx[n_val..].iter().map(|&i| finetune_set[i]).collect();
    train_main(enc, &train, &val, lm, cfg, seed)
}
