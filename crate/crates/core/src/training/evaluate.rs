use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::prompt::build_prompt;
use super::{permute_pairs, PromptExample};
use crate::encoder::{BrainEncoder, Mode};
use crate::error::{Error, Result};
use crate::lm::FrozenLM;
use crate::metrics::{paired_ttest, score_pair, MetricVector, TokenEmbedder, METRIC_NAMES, NORMALIZATION_RULE};
use crate::nn::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    ContextOnly,
    BrainOnly,
    BrainContext,
    PermutationContext,
}

impl Condition {
    pub const ALL: [Condition; 4] =
        [Condition::ContextOnly, Condition::BrainOnly, Condition::BrainContext, Condition::PermutationContext];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::ContextOnly => "context_only",
            Condition::BrainOnly => "brain_only",
            Condition::BrainContext => "brain_context",
            Condition::PermutationContext => "permutation_context",
        }
    }

    /// Table numbering, 1..=4.
    pub fn number(self) -> usize {
        self as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: String,
    pub hypothesis: String,
    pub reference: String,
    /// Trial whose brain segment was used, if any.
    pub brain_source: Option<String>,
    pub metrics: MetricVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean_3: f64,
    pub mean_4: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub normalization: String,
    pub seed: u64,
    pub lm_checksum: String,
    pub n_trials: usize,
    pub conditions: BTreeMap<Condition, Vec<TrialResult>>,
    /// condition → metric → mean.
    pub means: BTreeMap<Condition, BTreeMap<String, f64>>,
    /// metric → brain+context vs permutation+context paired test.
    pub stats: BTreeMap<String, MetricStats>,
}

impl ConditionReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::data(format!("condition report: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::data(format!("condition report: {e}")))
    }

    /// `trial_id,condition,bleu1,meteor,rouge_l,wer,emb_p,emb_r,emb_f1`.
    pub fn metrics_csv(&self) -> String {
        let mut out = format!("trial_id,condition,{}\n", METRIC_NAMES.join(","));
        for (c, rows) in &self.conditions {
            for r in rows {
                let vals: Vec<String> = r.metrics.values().iter().map(|v| format!("{v:.6}")).collect();
                out.push_str(&format!("{},{},{}\n", r.trial_id, c.as_str(), vals.join(",")));
            }
        }
        out
    }

    pub fn mean(&self, c: Condition, metric: &str) -> Option<f64> {
        self.means.get(&c)?.get(metric).copied()
    }
}

/// Generates continuations under the four prompt conditions and scores
/// them. Conditions 3 and 4 share each trial's context; only the brain
/// segment differs (within-participant derangement).
pub fn evaluate_conditions(
    enc: &BrainEncoder,
    test: &[&PromptExample],
    lm: &FrozenLM,
    embedder: &dyn TokenEmbedder,
    seed: u64,
    max_new: usize,
) -> Result<ConditionReport> {
    if enc.config.output_width != lm.embed_dim() {
        return Err(Error::config(format!("encoder width {} does not match LM width {}", enc.config.output_width, lm.embed_dim())));
    }
    if let Some(e) = test.iter().find(|e| e.brain.ncols() != enc.config.input_channels) {
        return Err(Error::config(format!("trial {} has {} channels, encoder expects {}", e.id, e.brain.ncols(), enc.config.input_channels)));
    }
    if test.len() < 3 {
        return Err(Error::data("condition evaluation needs at least 3 test trials"));
    }
    let owned: Vec<PromptExample> = test.iter().map(|e| (*e).clone()).collect();
    let permuted = permute_pairs(&owned, seed)?;
    let slots: Vec<Mat> = owned.iter().map(|e| enc.encode(&e.brain, Mode::Eval, 0)).collect::<Result<_>>()?;
    let perm_slots: Vec<Mat> = permuted.iter().map(|e| enc.encode(&e.brain, Mode::Eval, 0)).collect::<Result<_>>()?;

    let mut conditions = BTreeMap::new();
    for c in Condition::ALL {
        let prompts: Vec<Mat> = owned
            .iter()
            .enumerate()
            .map(|(i, e)| match c {
                Condition::ContextOnly => build_prompt(lm, Some(&e.context), None),
                Condition::BrainOnly => build_prompt(lm, None, Some(&slots[i])),
                Condition::BrainContext => build_prompt(lm, Some(&e.context), Some(&slots[i])),
                Condition::PermutationContext => build_prompt(lm, Some(&e.context), Some(&perm_slots[i])),
            })
            .collect::<Result<_>>()?;
        let mut outs = Vec::with_capacity(prompts.len());
        for chunk in prompts.chunks(32) {
            outs.extend(lm.greedy_generate_batch(chunk, max_new)?);
        }
        let mut rows = Vec::with_capacity(owned.len());
        for (i, (e, ids)) in owned.iter().zip(outs).enumerate() {
            let hypothesis = lm.vocab.detokenize(&ids);
            let reference = lm.vocab.detokenize(&e.continuation.ids);
            let brain_source = match c {
                Condition::ContextOnly => None,
                Condition::PermutationContext => Some(permuted[i].brain_source.clone()),
                _ => Some(e.brain_source.clone()),
            };
            let metrics = score_pair(&hypothesis, &reference, embedder)?;
            rows.push(TrialResult { trial_id: e.id.clone(), hypothesis, reference, brain_source, metrics });
        }
        conditions.insert(c, rows);
    }

    let column = |c: Condition, m: &str| -> Vec<f64> {
        conditions[&c].iter().map(|r| r.metrics.get(m).expect("known metric")).collect()
    };
    let mut means = BTreeMap::new();
    for c in Condition::ALL {
        let row: BTreeMap<String, f64> = METRIC_NAMES
            .iter()
            .map(|m| {
                let v = column(c, m);
                (m.to_string(), v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect();
        means.insert(c, row);
    }
    let mut stats = BTreeMap::new();
    for m in METRIC_NAMES {
        let a = column(Condition::BrainContext, m);
        let b = column(Condition::PermutationContext, m);
        let t = paired_ttest(&a, &b)?;
        stats.insert(
            m.to_string(),
            MetricStats { mean_3: means[&Condition::BrainContext][m], mean_4: means[&Condition::PermutationContext][m], t: t.t, p: t.p },
        );
    }
    Ok(ConditionReport {
        normalization: NORMALIZATION_RULE.to_string(),
        seed,
        lm_checksum: lm.checksum().to_string(),
        n_trials: owned.len(),
        conditions,
        means,
        stats,
    })
}
