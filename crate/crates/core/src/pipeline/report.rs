//! Markdown report assembled from whatever stage artifacts exist.

use std::fmt::Write as _;
use std::path::Path;

use super::{ConditionArtifact, DetectArtifact, GlmArtifact, LopoArtifact, RunConfig};
use crate::error::Result;
use crate::glm::DelayReport;
use crate::io;
use crate::training::{Condition, ConditionReport};

/// (metric key, row label, lower is better).
const ROWS: [(&str, &str, bool); 7] = [
    ("emb_f1", "Emb F1", false),
    ("emb_p", "Emb P", false),
    ("emb_r", "Emb R", false),
    ("bleu1", "BLEU-1", false),
    ("meteor", "METEOR", false),
    ("rouge_l", "ROUGE-L", false),
    ("wer", "WER", true),
];

pub const SIGNIFICANCE: f64 = 0.05;

fn read_opt<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if path.exists() {
        io::read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

fn fmt_p(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.1e}")
    } else {
        format!("{p:.4}")
    }
}

/// Conditions × metrics with the paired (3) vs (4) test. The flag column
/// marks rows where brain input beats the permutation, and whether that
/// holds at p < 0.05.
pub fn conditions_table(r: &ConditionReport) -> String {
    let mut out = String::from(
        "| Metric | Context only (1) | Brain only (2) | Brain + context (3) | Permutation + context (4) | (3) vs (4) p-value | Flag |\n\
         |---|---|---|---|---|---|---|\n",
    );
    for (key, label, lower_better) in ROWS {
        let m = |c: Condition| r.mean(c, key).unwrap_or(f64::NAN);
        let Some(s) = r.stats.get(key) else { continue };
        let better = if lower_better { s.mean_3 < s.mean_4 } else { s.mean_3 > s.mean_4 };
        let flag = match (better, s.p < SIGNIFICANCE) {
            (true, true) => "(3) beats (4), p < 0.05",
            (true, false) => "(3) beats (4)",
            _ => "",
        };
        let _ = writeln!(
            out,
            "| {label} | {:.3} | {:.3} | {:.3} | {:.3} | {} | {flag} |",
            m(Condition::ContextOnly),
            m(Condition::BrainOnly),
            m(Condition::BrainContext),
            m(Condition::PermutationContext),
            fmt_p(s.p)
        );
    }
    out
}

/// Renders the report without writing it.
pub fn render(cfg: &RunConfig) -> Result<String> {
    let root = &cfg.paths.workdir;
    let pids = cfg.participant_ids();
    let mut out = String::new();
    let _ = writeln!(out, "# Decoding report\n");
    let _ = writeln!(out, "config_hash: `{}`  ", cfg.hash()?);
    let _ = writeln!(
        out,
        "seed: {}, participants: {}, runs per participant: {}, epoch delay: {} s\n",
        cfg.seed, cfg.dataset.participants, cfg.dataset.runs, cfg.epochs.delay_s
    );

    let _ = writeln!(out, "## Haemodynamic delay\n");
    let mut any = false;
    for p in &pids {
        let Some(d) = read_opt::<DelayReport>(&root.join("delay").join(format!("{p}.json")))? else { continue };
        if !any {
            let _ = writeln!(out, "| Participant | HbO word-cloud coefficient per delay bin | Peak (s) |\n|---|---|---|");
            any = true;
        }
        let mut cells: Vec<_> = d.coefficients.iter().filter(|c| c.condition == "wordcloud" && c.chromophore == "hbo").collect();
        cells.sort_by_key(|c| c.delay);
        let coefs: Vec<String> = cells.iter().map(|c| format!("{}-{} s: {:.4}", c.delay_s - d.frame_s, c.delay_s, c.mean)).collect();
        let _ = writeln!(out, "| {p} | {} | {} |", coefs.join("; "), d.chosen_delay_s);
    }
    if !any {
        out.push_str("_not run_\n");
    }

    let _ = writeln!(out, "\n## Individual decoders\n");
    let mut any = false;
    for p in &pids {
        let Some(a) = read_opt::<ConditionArtifact>(&root.join("eval").join(p).join("conditions.json"))? else { continue };
        any = true;
        let _ = writeln!(out, "### {p} ({} test trials)\n", a.report.n_trials);
        out.push_str(&conditions_table(&a.report));
        out.push('\n');
    }
    if !any {
        out.push_str("_not run_\n");
    }

    let _ = writeln!(out, "\n## Multi-participant aligned decoders\n");
    let mut any = false;
    for p in &pids {
        let Some(a) = read_opt::<LopoArtifact>(&root.join("lopo").join(p).join("lopo.json"))? else { continue };
        any = true;
        let _ = writeln!(
            out,
            "### {p} held out ({} training trials from other participants, {} fine-tune trials, {} test trials)\n",
            a.n_training_examples, a.n_finetune, a.report.n_trials
        );
        out.push_str(&conditions_table(&a.report));
        let b = |r: &ConditionReport| r.mean(Condition::BrainContext, "bleu1").unwrap_or(f64::NAN);
        let _ = writeln!(
            out,
            "\nBLEU-1 (3): aligned + fine-tuned {:.3}; individual model on the same {} fine-tune trials {:.3}. LM unchanged: {}.\n",
            b(&a.report),
            a.n_finetune,
            b(&a.baseline),
            if a.lm_checksum_before == a.lm_checksum_after { "yes" } else { "NO" }
        );
    }
    if !any {
        out.push_str("_not run_\n");
    }

    let _ = writeln!(out, "\n## Imagined speech vs rest detection\n");
    match read_opt::<DetectArtifact>(&root.join("detect").join("summary.json"))? {
        None => out.push_str("_not run_\n"),
        Some(d) => {
            let _ = writeln!(out, "| Participant | Trials | Seed | Best fold accuracy | Mean fold accuracy | p-value |\n|---|---|---|---|---|---|");
            for s in &d.table.participants {
                for row in &s.seeds {
                    let _ = writeln!(out, "| {} | {} | {} | {:.3} | {:.3} | |", s.participant, s.n_trials, row.seed, row.best, row.mean);
                }
                let p = s.p_value.map(fmt_p).unwrap_or_default();
                let _ = writeln!(out, "| {} | {} | average | {:.3} | {:.3} | {p} |", s.participant, s.n_trials, s.average_best, s.average_mean);
            }
            let _ = writeln!(out, "\nChance is 0.5; p-values from {} within-participant label permutations.", d.n_perms);
        }
    }

    let _ = writeln!(out, "\n## Word cloud > rest activation\n");
    let mut any = false;
    for p in &pids {
        let Some(g) = read_opt::<GlmArtifact>(&root.join("glm").join(format!("{p}.json")))? else { continue };
        if !any {
            let _ = writeln!(out, "| Participant | Runs | Active pairs with HbO z > 3 | Inactive pairs with HbO abs(z) < 2 |\n|---|---|---|---|");
            any = true;
        }
        let (a, na) = g.active_detected();
        let (q, nq) = g.inactive_quiet();
        let _ = writeln!(out, "| {p} | {} | {a}/{na} | {q}/{nq} |", g.n_runs);
    }
    if !any {
        out.push_str("_not run_\n");
    }
    Ok(out)
}

/// Writes `<workdir>/report.md` and returns its text.
pub fn write_report(cfg: &RunConfig) -> Result<String> {
    let text = render(cfg)?;
    io::write_text(&cfg.paths.workdir.join("report.md"), &text)?;
    Ok(text)
}
