//! Prompt-tuning of the brain encoder against the frozen LM: example
//! preparation, splits, the permutation control, pretraining, the main
//! loop, fine-tuning and the four-condition evaluation.

pub mod evaluate;
pub mod loops;
pub mod prompt;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{split_sentence, tokenize, TokenSeq, Vocabulary};
use crate::nn::Mat;
use crate::rng::{derived_rng, streams};
use crate::sigproc::TrialExample;

pub use evaluate::{evaluate_conditions, Condition, ConditionReport, MetricStats, TrialResult};
pub use loops::{finetune, pretrain, train_main, EpochLog, PretrainConfig, TrainConfig, TrainOutcome};
pub use prompt::{build_prompt, masked_targets, prompt_loss};

/// Sentences with this many words or fewer are dropped.
pub const MIN_WORDS_EXCLUSIVE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct PromptExample {
    /// Trial id (`participant/run/event`).
    pub id: String,
    pub participant: String,
    pub session: usize,
    pub sentence: String,
    pub context: TokenSeq,
    pub continuation: TokenSeq,
    /// Continuation-aligned segment [T' × C].
    pub brain: Mat,
    /// Id of the trial the brain segment came from (differs from `id`
    /// after permutation).
    pub brain_source: String,
}

/// Trailing samples of a `t`-sample epoch that belong to the continuation:
/// ceil(t · n_cont / n_words).
pub fn continuation_window(t: usize, n_words: usize, n_cont: usize) -> usize {
    (t * n_cont).div_ceil(n_words).clamp(1, t)
}

/// Splits every typed sentence at floor(n/2) words and keeps the matching
/// trailing part of its (already delayed) epoch. Trials without a sentence
/// or with three words or fewer are dropped.
pub fn make_examples(trials: &[TrialExample], vocab: &Vocabulary) -> Result<Vec<PromptExample>> {
    let mut out = Vec::with_capacity(trials.len());
    let mut dropped = 0;
    for tr in trials {
        let Some(sentence) = &tr.sentence else {
            dropped += 1;
            continue;
        };
        let n = sentence.split_whitespace().count();
        if n <= MIN_WORDS_EXCLUSIVE {
            dropped += 1;
            continue;
        }
        let (ctx, cont) = split_sentence(sentence);
        let n_cont = cont.split_whitespace().count();
        let t = tr.data.nrows();
        let w = continuation_window(t, n, n_cont);
        out.push(PromptExample {
            id: tr.id(),
            participant: tr.participant.clone(),
            session: tr.session,
            sentence: sentence.clone(),
            context: tokenize(&ctx, vocab)?,
            continuation: tokenize(&cont, vocab)?,
            brain: tr.data.slice(ndarray::s![t - w.., ..]).to_owned(),
            brain_source: tr.id(),
        });
    }
    if dropped > 0 {
        log::info!("make_examples: dropped {dropped} trial(s) without a usable sentence");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub test: Vec<String>,
    pub finetune: Vec<String>,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSizes {
    pub test: usize,
    pub finetune: usize,
    pub val_fraction: f64,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes { test: 200, finetune: 100, val_fraction: 0.2 }
    }
}

impl SplitPlan {
    /// Seeded shuffle of `ids`, then test, finetune, and an 80/20
    /// train/validation split of the rest (validation rounded up).
    pub fn new(ids: &[String], sizes: SplitSizes, seed: u64) -> Result<Self> {
        let unique: BTreeSet<&String> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(Error::data("split ids must be unique"));
        }
        if !(0.0..1.0).contains(&sizes.val_fraction) {
            return Err(Error::config(format!("validation fraction must be in [0, 1), got {}", sizes.val_fraction)));
        }
        let rest = ids.len().checked_sub(sizes.test + sizes.finetune).filter(|r| *r >= 2).ok_or_else(|| {
            Error::data(format!(
                "{} examples cannot hold {} test + {} finetune + a train/validation remainder",
                ids.len(),
                sizes.test,
                sizes.finetune
            ))
        })?;
        let mut order: Vec<String> = ids.to_vec();
        order.sort();
        order.shuffle(&mut derived_rng(seed, &[streams::SPLIT]));
        let n_val = ((rest as f64) * sizes.val_fraction).ceil() as usize;
        let mut it = order.into_iter();
        let test = it.by_ref().take(sizes.test).collect();
        let finetune = it.by_ref().take(sizes.finetune).collect();
        let val = it.by_ref().take(n_val).collect();
        let train = it.collect();
        Ok(SplitPlan { seed, test, finetune, train, val })
    }

    pub fn select<'a>(&self, examples: &'a [PromptExample], part: &[String]) -> Vec<&'a PromptExample> {
        let wanted: BTreeSet<&String> = part.iter().collect();
        examples.iter().filter(|e| wanted.contains(&e.id)).collect()
    }
}

/// Within-participant derangement of brain segments: each example keeps its
/// context and continuation but receives the brain segment of a different
/// example from the same participant.
pub fn permute_pairs(examples: &[PromptExample], seed: u64) -> Result<Vec<PromptExample>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        groups.entry(e.participant.as_str()).or_default().push(i);
    }
    let mut out = examples.to_vec();
    for (gi, (p, members)) in groups.iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::data(format!("participant {p} has a single example; no derangement exists")));
        }
        let mut rng = derived_rng(seed, &[streams::PERMUTE, gi as u64]);
        let perm = loop {
            let mut perm: Vec<usize> = (0..members.len()).collect();
            perm.shuffle(&mut rng);
            if perm.iter().enumerate().all(|(i, j)| i != *j) {
                break perm;
            }
        };
        for (i, j) in perm.into_iter().enumerate() {
            let (dst, src) = (members[i], members[j]);
            out[dst].brain = examples[src].brain.clone();
            out[dst].brain_source = examples[src].brain_source.clone();
        }
    }
    Ok(out)
}

/// Leave-one-participant-out folds: (held-out, training participants).
pub fn lopo_folds(participants: &[String]) -> Result<Vec<(String, Vec<String>)>> {
    let set: BTreeSet<&String> = participants.iter().collect();
    if set.len() < 2 {
        return Err(Error::data("leave-one-participant-out needs at least 2 participants"));
    }
    Ok(set.iter().map(|p| ((*p).clone(), set.iter().filter(|q| *q != p).map(|q| (*q).clone()).collect())).collect())
}
