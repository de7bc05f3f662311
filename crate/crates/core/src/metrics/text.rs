//! Word-level overlap metrics: BLEU-1, METEOR (exact + stem), ROUGE-L, WER.

use crate::error::{Error, Result};

fn require_reference<S>(reference: &[S]) -> Result<()> {
    if reference.is_empty() {
        return Err(Error::data("metric reference is empty"));
    }
    Ok(())
}

/// Clipped unigram precision times the brevity penalty.
pub fn bleu1<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Result<f64> {
    require_reference(reference)?;
    if hyp.is_empty() {
        return Ok(0.0);
    }
    let mut ref_counts = std::collections::BTreeMap::<&str, usize>::new();
    for w in reference {
        *ref_counts.entry(w.as_ref()).or_default() += 1;
    }
    let mut clipped = 0usize;
    for w in hyp {
        if let Some(c) = ref_counts.get_mut(w.as_ref()) {
            if *c > 0 {
                *c -= 1;
                clipped += 1;
            }
        }
    }
    let precision = clipped as f64 / hyp.len() as f64;
    let bp = (1.0 - reference.len() as f64 / hyp.len() as f64).min(0.0).exp();
    Ok(precision * bp)
}

/// Longest common subsequence length, two-row dynamic programme.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure with equal weighting of precision and recall.
pub fn rouge_l<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Result<f64> {
    require_reference(reference)?;
    if hyp.is_empty() {
        return Ok(0.0);
    }
    let lcs = lcs_len(hyp, reference) as f64;
    if lcs == 0.0 {
        return Ok(0.0);
    }
    let p = lcs / hyp.len() as f64;
    let r = lcs / reference.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

/// Word-level Levenshtein distance.
pub fn edit_distance<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x.as_ref() != y.as_ref());
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by reference length; may exceed 1.
pub fn wer<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Result<f64> {
    require_reference(reference)?;
    Ok(edit_distance(hyp, reference) as f64 / reference.len() as f64)
}

/// Light suffix-stripping stemmer used for METEOR's second matching stage.
pub fn stem(word: &str) -> String {
    let w = word.to_lowercase();
    for suffix in ["ingly", "edly", "ing", "ies", "ied", "ed", "es", "ly", "s"] {
        if let Some(base) = w.strip_suffix(suffix) {
            if base.chars().count() >= 3 {
                return match suffix {
                    "ies" | "ied" => format!("{base}y"),
                    _ => base.to_string(),
                };
            }
        }
    }
    w
}

/// Unigram alignment as (hyp index, ref index) pairs, exact matches first,
/// then stem matches. Within a stage, a candidate that extends the current
/// chunk is preferred so that identical strings align monotonically.
pub fn meteor_alignment<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Vec<(usize, usize)> {
    let mut ref_used = vec![false; reference.len()];
    let mut hyp_match: Vec<Option<usize>> = vec![None; hyp.len()];
    let hyp_stems: Vec<String> = hyp.iter().map(|w| stem(w.as_ref())).collect();
    let ref_stems: Vec<String> = reference.iter().map(|w| stem(w.as_ref())).collect();

    for stage in 0..2 {
        for i in 0..hyp.len() {
            if hyp_match[i].is_some() {
                continue;
            }
            let matches = |j: usize| {
                if stage == 0 {
                    hyp[i].as_ref() == reference[j].as_ref()
                } else {
                    hyp_stems[i] == ref_stems[j]
                }
            };
            let preferred = i
                .checked_sub(1)
                .and_then(|p| hyp_match[p])
                .map(|j| j + 1)
                .filter(|&j| j < reference.len() && !ref_used[j] && matches(j));
            let chosen = preferred.or_else(|| (0..reference.len()).find(|&j| !ref_used[j] && matches(j)));
            if let Some(j) = chosen {
                ref_used[j] = true;
                hyp_match[i] = Some(j);
            }
        }
    }
    hyp_match
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| (i, j)))
        .collect()
}

/// Number of chunks in an alignment sorted by hypothesis index.
pub fn count_chunks(alignment: &[(usize, usize)]) -> usize {
    if alignment.is_empty() {
        return 0;
    }
    1 + alignment
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

/// METEOR without a synonym table: F-mean = 10PR/(R+9P) times
/// (1 - 0.5 (chunks/matches)^3).
pub fn meteor<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Result<f64> {
    require_reference(reference)?;
    if hyp.is_empty() {
        return Ok(0.0);
    }
    let alignment = meteor_alignment(hyp, reference);
    let m = alignment.len() as f64;
    if m == 0.0 {
        return Ok(0.0);
    }
    let p = m / hyp.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let chunks = count_chunks(&alignment) as f64;
    let penalty = 0.5 * (chunks / m).powi(3);
    Ok(fmean * (1.0 - penalty))
}
