//! Prompt assembly: `[<s> context <brain/> slots </brain>]` followed by the
//! teacher-forced continuation.

use crate::error::{Error, Result};
use crate::lm::vocab::{BOS_ID, BRAIN_CLOSE_ID, BRAIN_OPEN_ID, MAX_LEN};
use crate::lm::{FrozenLM, LmVars, TokenSeq, Vocabulary};
use crate::nn::{Mat, Tape, Var};

/// Labels for positions 1..MAX_LEN of a padded continuation: the token at
/// real positions (words and eos), `None` at padding.
pub fn masked_targets(cont: &TokenSeq) -> Vec<Option<usize>> {
    (1..MAX_LEN.min(cont.ids.len())).map(|i| cont.mask[i].then_some(cont.ids[i])).collect()
}

/// bos followed by the context words; eos and padding are stripped so the
/// brain tags follow the context directly.
fn prefix_ids(context: Option<&TokenSeq>) -> Vec<usize> {
    let mut ids = vec![BOS_ID];
    if let Some(c) = context {
        ids.extend(c.real().into_iter().filter(|i| !Vocabulary::is_special(*i)));
    }
    ids
}

/// Inference prompt. With slots: `<s> [context] <brain/> slots </brain>`;
/// without: `<s> context`.
pub fn build_prompt(lm: &FrozenLM, context: Option<&TokenSeq>, slots: Option<&Mat>) -> Result<Mat> {
    let mut ids = prefix_ids(context);
    let Some(slots) = slots else {
        return lm.embed_ids(&ids);
    };
    if slots.ncols() != lm.embed_dim() {
        return Err(Error::data(format!("brain slots have width {}, LM expects {}", slots.ncols(), lm.embed_dim())));
    }
    ids.push(BRAIN_OPEN_ID);
    let head = lm.embed_ids(&ids)?;
    let tail = lm.embed_ids(&[BRAIN_CLOSE_ID])?;
    Ok(ndarray::concatenate(ndarray::Axis(0), &[head.view(), slots.view(), tail.view()]).expect("same width"))
}

/// One training prompt on the tape.
pub struct PromptItem<'a> {
    pub context: Option<&'a TokenSeq>,
    pub slots: Var,
    pub continuation: &'a TokenSeq,
}

/// Mean cross-entropy over the real continuation tokens of all items.
/// Padding labels are masked out; rows after the last real label are not
/// fed to the LM since causal attention keeps them from affecting the
/// scored rows.
pub fn prompt_loss(tape: &mut Tape, lm: &FrozenLM, vars: &LmVars, items: &[PromptItem<'_>]) -> Result<Var> {
    if items.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let mut inputs = Vec::with_capacity(items.len());
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut off = 0;
    for it in items {
        let labels = masked_targets(it.continuation);
        let keep = labels.iter().rposition(Option::is_some).map_or(0, |i| i + 1);
        if keep == 0 {
            return Err(Error::data("continuation has no real tokens"));
        }
        let mut head = prefix_ids(it.context);
        head.push(BRAIN_OPEN_ID);
        let mut tail = vec![BRAIN_CLOSE_ID];
        tail.extend_from_slice(&it.continuation.ids[1..keep]);
        let h = lm.embed_var(tape, vars, &head);
        let t = lm.embed_var(tape, vars, &tail);
        let k = tape.value(it.slots).nrows();
        inputs.push(tape.concat_rows(&[h, it.slots, t]));
        let p = head.len() + k + 1;
        for (j, l) in labels[..keep].iter().enumerate() {
            if let Some(l) = l {
                rows.push(off + p - 1 + j);
                targets.push(Some(*l));
            }
        }
        off += p + keep - 1;
    }
    let (hidden, _) = lm.forward_stacked(tape, vars, &inputs)?;
    let h = tape.select_rows(hidden, &rows);
    let logits = lm.project(tape, vars, h);
    Ok(tape.cross_entropy(logits, &targets))
}
