//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test -p nirtext-core --test acceptance` runs all twelve; numeric
//! arguments after `--` select a subset (`-- 3 9`). The trained toy LM is
//! cached under the cargo target tmpdir and reused by later invocations.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nirtext::corpus::{build_schedule, realize_sentences, TopicSet};
use nirtext::detect::train_eval_xtc;
use nirtext::encoder::{BrainEncoder, Mode};
use nirtext::lm::FrozenLM;
use nirtext::metrics::{bleu1, paired_ttest, rouge_l, wer};
use nirtext::nn::Tape;
use nirtext::pipeline::{self, RunConfig};
use nirtext::sigproc::{self, HaemoSeries, OdSeries, PreprocParams};
use nirtext::synthgen::{
    injected_haemo, render_run, CentredVectorizer, HashedVectorizer, Montage, NoiseConfig,
    RenderSpec, RunIds, SemanticMap, WAVELENGTHS,
};
use nirtext::training::loops::{pretrain_loss, pretrain_target, validation_loss};
use nirtext::training::{build_prompt, train_main, Condition, PromptExample, TrainConfig};

type Outcome = Result<(bool, String), String>;

struct Ctx {
    root: PathBuf,
    lm: Option<FrozenLM>,
    /// Seconds spent training the LM in this invocation.
    lm_secs: f64,
}

impl Ctx {
    fn base(&self, dir: &str) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.paths.workdir = self.root.join(dir);
        cfg.paths.lm_checkpoint = Some(self.root.join("lm").join("lm.ckpt"));
        cfg
    }

    /// Two participants, twelve runs each, short training: the full stage
    /// graph in well under a minute.
    fn small(&self, dir: &str) -> RunConfig {
        let mut cfg = self.base(dir);
        cfg.seed = 3;
        cfg.dataset.participants = 2;
        cfg.dataset.runs = 12;
        cfg.dataset.runs_per_session = 4;
        cfg.glm.contrast_runs = 4;
        cfg.model.pretrain.epochs = 1;
        cfg.model.train.max_epochs = 3;
        cfg.model.split.test = 20;
        cfg.model.split.finetune = 20;
        cfg.detect.seeds = vec![0, 6];
        cfg.detect.n_perms = 100;
        cfg.detect.trees.n_trees = 20;
        cfg
    }

    /// One participant at the default size (90 runs).
    fn main(&self) -> RunConfig {
        let mut cfg = self.base("main");
        cfg.dataset.participants = 1;
        cfg
    }

    fn lm(&mut self) -> Result<FrozenLM, String> {
        if let Some(lm) = &self.lm {
            return Ok(lm.clone());
        }
        let cfg = self.base("lm");
        let t = Instant::now();
        let fresh = !cfg.lm_path().exists();
        let lm = pipeline::ensure_lm(&cfg).map_err(|e| e.to_string())?;
        if fresh {
            self.lm_secs = t.elapsed().as_secs_f64();
        }
        self.lm = Some(lm.clone());
        Ok(lm)
    }

    fn main_dataset(&mut self) -> Result<RunConfig, String> {
        let cfg = self.main();
        let lm = self.lm()?;
        if !cfg.paths.workdir.join("haemo").join("p01").join("index.json").exists() {
            pipeline::gen(&cfg, &lm).map_err(s)?;
            pipeline::preprocess(&cfg, &cfg.participant_ids()).map_err(s)?;
        }
        Ok(cfg)
    }
}

fn s(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn c1_preprocessing(_: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let montage = Montage::high_density();
    let topics = TopicSet::shipped();
    let vec = CentredVectorizer::new(HashedVectorizer { width: 16, seed: 1 }, &topics.all_sentences()).map_err(s)?;
    let map = SemanticMap::random(16, 40, 1.0, 0.5, 2).map_err(s)?;
    let spec = RenderSpec { noise: NoiseConfig::none(), ..Default::default() };
    let params = PreprocParams::default();
    let all = build_schedule(&topics, 4, 11).map_err(s)?;
    let sentences = realize_sentences(&all, &topics, 11, 0.0).map_err(s)?;
    let (mut worst_r, mut worst_rt) = (f64::INFINITY, 0.0f64);
    for r in 0..4 {
        let schedule = all.run(r).map_err(s)?;
        let global: Vec<usize> = all.events.iter().enumerate().filter(|(_, e)| e.run == r).map(|(i, _)| i).collect();
        let sent: BTreeMap<usize, String> =
            global.iter().enumerate().filter_map(|(l, g)| sentences.get(g).map(|x| (l, x.clone()))).collect();
        let ids = RunIds { participant: "p01".into(), session: 0, run: r };
        let raw = render_run(&schedule, &sent, &vec, &map, &montage, &spec, 5, ids).map_err(s)?;
        let haemo = sigproc::preprocess(&raw, &montage, &spec.extinction, &params).map_err(s)?;
        let truth = injected_haemo(&schedule, &sent, &vec, &map, &spec).map_err(s)?;
        // The band-pass removes sub-0.01 Hz content by design, so the
        // injected series is compared after the same detrend and band-pass.
        let mut band = truth.hbo.clone();
        sigproc::detrend_matrix(&mut band).map_err(s)?;
        let band = sigproc::bandpass(
            &HaemoSeries { sfreq: spec.sfreq, data: band, provenance: vec![] },
            params.band_lo,
            params.band_hi,
            params.filter_order,
        )
        .map_err(s)?;
        for &p in &map.active {
            worst_r = worst_r.min(pearson(&haemo.data.column(p).to_vec(), &band.data.column(p).to_vec()));
        }

        // Beer-Lambert round trip in f64: injected haemoglobin to OD through
        // the path matrices, then back.
        let pairs = montage.long_pairs().map_err(s)?;
        let n = truth.hbo.nrows();
        let mut od = ndarray::Array2::<f64>::zeros((n, montage.n_channels()));
        for (p, pair) in pairs.iter().enumerate() {
            let a = spec.extinction.path_matrix(WAVELENGTHS, pair.distance_mm, spec.ppf).map_err(s)?;
            for i in 0..n {
                let (o, h) = (truth.hbo[[i, p]], truth.hbr[[i, p]]);
                od[[i, pair.channels[0]]] = a[0][0] * o + a[0][1] * h;
                od[[i, pair.channels[1]]] = a[1][0] * o + a[1][1] * h;
            }
        }
        let ods = OdSeries { sfreq: spec.sfreq, data: od, channels: montage.channels.clone(), provenance: vec![] };
        let back = sigproc::beer_lambert(&ods, &montage, spec.ppf, &spec.extinction).map_err(s)?;
        for p in 0..pairs.len() {
            for i in 0..n {
                worst_rt = worst_rt.max((back.data[[i, p]] - truth.hbo[[i, p]]).abs());
                worst_rt = worst_rt.max((back.data[[i, 194 + p]] - truth.hbr[[i, p]]).abs());
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((
        worst_r > 0.99 && worst_rt < 1e-9 && secs < 60.0,
        format!("min active-pair r = {worst_r:.5}, max round-trip error = {worst_rt:.2e}, {secs:.1} s for 4 runs"),
    ))
}

fn c2_filter(_: &mut Ctx) -> Outcome {
    let params = PreprocParams::default();
    let fs = 5.9;
    let n = (600.0 * fs) as usize;
    let gain = |f: f64, phase: f64| -> Result<f64, String> {
        let x: Vec<f64> = (0..n).map(|i| 1.0 + if f == 0.0 { 0.0 } else { (2.0 * std::f64::consts::PI * f * i as f64 / fs + phase).sin() }).collect();
        let data = ndarray::Array2::from_shape_vec((n, 1), x).map_err(s)?;
        let y = sigproc::bandpass(&HaemoSeries { sfreq: fs, data, provenance: vec![] }, params.band_lo, params.band_hi, params.filter_order)
            .map_err(s)?;
        // Central half, away from edge transients.
        let mid: Vec<f64> = y.data.column(0).iter().skip(n / 4).take(n / 2).copied().collect();
        if f == 0.0 {
            // Input is the unit DC offset alone.
            return Ok(mid.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        let amp = (mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64).sqrt() * 2f64.sqrt();
        Ok(amp)
    };
    let pass = gain(0.1, 0.3)?;
    let dc = gain(0.0, 0.0)?;
    let high = gain(2.0, 0.7)?;
    Ok((
        (pass - 1.0).abs() < 0.05 && dc < 0.1 && high < 0.1,
        format!("0.1 Hz gain {pass:.4}, DC residual {dc:.2e}, 2 Hz gain {high:.2e}"),
    ))
}

fn c3_delay(ctx: &mut Ctx) -> Outcome {
    let lm = ctx.lm()?;
    let t = Instant::now();
    let mut picks = Vec::new();
    for seed in 0..20u64 {
        let mut cfg = ctx.base(&format!("delay/{seed}"));
        cfg.seed = seed;
        cfg.dataset.participants = 1;
        cfg.dataset.runs = 10;
        pipeline::gen(&cfg, &lm).map_err(s)?;
        picks.push(pipeline::delay(&cfg, "p01").map_err(s)?.chosen_delay_s);
        std::fs::remove_dir_all(&cfg.paths.workdir).map_err(s)?;
    }
    let hits = picks.iter().filter(|d| **d == 6.0).count();
    let secs = t.elapsed().as_secs_f64();
    Ok((hits >= 18 && secs < 120.0, format!("6 s chosen in {hits}/20 datasets of 10 runs, {secs:.0} s")))
}

fn c4_frozen(ctx: &mut Ctx) -> Outcome {
    let lm = ctx.lm()?;
    let cfg = ctx.small("full_a");
    let before = lm.current_checksum();
    let file_before = std::fs::read(cfg.lm_path()).map_err(s)?;
    pipeline::run_all(&cfg).map_err(s)?;
    let after = FrozenLM::load(&cfg.lm_path()).map_err(s)?.current_checksum();
    let file_same = std::fs::read(cfg.lm_path()).map_err(s)? == file_before;
    let mut ok = before == after && file_same && lm.current_checksum() == before;
    let mut checked = 0;
    for p in cfg.participant_ids() {
        let lopo: pipeline::LopoArtifact =
            nirtext::io::read_json(&cfg.paths.workdir.join("lopo").join(&p).join("lopo.json")).map_err(s)?;
        ok &= lopo.lm_checksum_before == before && lopo.lm_checksum_after == before;
        let eval: pipeline::ConditionArtifact =
            nirtext::io::read_json(&cfg.paths.workdir.join("eval").join(&p).join("conditions.json")).map_err(s)?;
        ok &= eval.report.lm_checksum == before;
        checked += 2;
    }
    Ok((ok, format!("checksum {}… unchanged across pretrain, train and fine-tune ({checked} stage records, checkpoint bytes identical: {file_same})", &before[..12])))
}

fn c5_gradcheck(ctx: &mut Ctx) -> Outcome {
    let lm = ctx.lm()?;
    let cfg = ctx.small("full_a");
    let examples = pipeline::load_examples(&cfg, "p01", &lm).map_err(s)?;
    let batch: Vec<&PromptExample> = examples.iter().take(3).collect();
    let mut ecfg = cfg.model.encoder;
    ecfg.dropout = 0.0;
    let enc = BrainEncoder::init(ecfg, 17).map_err(s)?;
    let targets: Vec<_> = batch.iter().map(|e| pretrain_target(&lm, e, ecfg.brain_slots)).collect::<Result<_, _>>().map_err(s)?;
    let loss_of = |enc: &BrainEncoder| -> Result<f64, String> {
        let mut tape = Tape::new();
        let vars = enc.params.bind(&mut tape, false);
        let l = pretrain_loss(enc, &mut tape, &vars, &batch, &targets, None).map_err(s)?;
        Ok(tape.scalar(l))
    };
    let mut tape = Tape::new();
    let vars = enc.params.bind(&mut tape, true);
    let l = pretrain_loss(&enc, &mut tape, &vars, &batch, &targets, None).map_err(s)?;
    let grads = tape.backward(l).param_grads(enc.params.len());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for pi in 0..enc.params.len() {
        let Some(g) = &grads[pi] else { continue };
        for _ in 0..2 {
            let (r, c) = (rng.gen_range(0..g.nrows()), rng.gen_range(0..g.ncols()));
            let h = 1e-5;
            let mut plus = enc.clone();
            plus.params.values[pi] = std::rc::Rc::new({
                let mut m = (*plus.params.values[pi]).clone();
                m[[r, c]] += h;
                m
            });
            let mut minus = enc.clone();
            minus.params.values[pi] = std::rc::Rc::new({
                let mut m = (*minus.params.values[pi]).clone();
                m[[r, c]] -= h;
                m
            });
            let fd = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * h);
            let an = g[[r, c]];
            let scale = an.abs().max(fd.abs());
            if scale < 1e-7 {
                skipped += 1;
                continue;
            }
            let rel = (an - fd).abs() / scale;
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok((worst < 1e-3 && checked >= 20, format!("{checked} parameters checked ({skipped} with vanishing gradient skipped), max relative error {worst:.2e}")))
}

fn c6_overfit(ctx: &mut Ctx) -> Outcome {
    let lm = ctx.lm()?;
    let cfg = ctx.small("full_a");
    let examples = pipeline::load_examples(&cfg, "p01", &lm).map_err(s)?;
    let eight: Vec<&PromptExample> = examples.iter().take(8).collect();
    let enc = BrainEncoder::init(cfg.model.encoder, 23).map_err(s)?;
    let tc = TrainConfig { batch_size: 8, lr: 1e-3, gamma: 1.0, max_epochs: 300, early_stop: false, ..TrainConfig::default() };
    let out = train_main(&enc, &eight, &[], &lm, &tc, 29).map_err(s)?;
    let loss = validation_loss(&out.encoder, &eight, &lm).map_err(s)?;
    let mut exact = 0;
    for e in &eight {
        let slots = out.encoder.encode(&e.brain, Mode::Eval, 0).map_err(s)?;
        let prompt = build_prompt(&lm, Some(&e.context), Some(&slots)).map_err(s)?;
        let got = lm.greedy_generate(&prompt, cfg.model.max_new_tokens).map_err(s)?;
        exact += usize::from(got == e.continuation.words());
    }
    Ok((exact >= 6 && loss < 0.1, format!("{exact}/8 continuations exact, training loss {loss:.4} after {} epochs", tc.max_epochs)))
}

fn c7_end_to_end(ctx: &mut Ctx) -> Outcome {
    ctx.lm()?;
    let t = Instant::now();
    let cfg = ctx.main_dataset()?;
    let lm = ctx.lm()?;
    let n_trials = pipeline::load_trials(&cfg, "p01").map_err(s)?.len();
    pipeline::train(&cfg, "p01", &lm).map_err(s)?;
    let art = pipeline::eval(&cfg, "p01", &lm).map_err(s)?;
    let secs = t.elapsed().as_secs_f64() + ctx.lm_secs;
    let r = &art.report;
    let b = |c| r.mean(c, "bleu1").unwrap_or(f64::NAN);
    let (b1, b2, b3, b4) = (b(Condition::ContextOnly), b(Condition::BrainOnly), b(Condition::BrainContext), b(Condition::PermutationContext));
    let p = r.stats["bleu1"].p;
    let ok = n_trials >= 600 && r.n_trials == 200 && b3 > b4 && p < 0.05 && b3 > b1 && b1 > b2 && secs < 1800.0;
    Ok((
        ok,
        format!(
            "{n_trials} trials, {} test: BLEU-1 (1) {b1:.3} (2) {b2:.3} (3) {b3:.3} (4) {b4:.3}, (3) vs (4) p = {p:.2e}, {:.1} min",
            r.n_trials,
            secs / 60.0
        ),
    ))
}

fn c8_alignment(ctx: &mut Ctx) -> Outcome {
    let lm = ctx.lm()?;
    let t = Instant::now();
    let mut cfg = ctx.base("lopo");
    cfg.seed = 8;
    cfg.dataset.participants = 3;
    cfg.dataset.runs = 40;
    cfg.model.split.test = 100;
    cfg.model.split.finetune = 100;
    pipeline::gen(&cfg, &lm).map_err(s)?;
    pipeline::preprocess(&cfg, &cfg.participant_ids()).map_err(s)?;
    pipeline::align(&cfg, &lm).map_err(s)?;
    let a = pipeline::finetune(&cfg, "p01", &lm).map_err(s)?;
    let aligned = a.report.mean(Condition::BrainContext, "bleu1").unwrap_or(f64::NAN);
    let single = a.baseline.mean(Condition::BrainContext, "bleu1").unwrap_or(f64::NAN);
    Ok((
        aligned >= single,
        format!(
            "held-out p01, {} fine-tune trials: aligned BLEU-1 {aligned:.3} vs individual {single:.3} ({} test trials, {:.1} min)",
            a.n_finetune,
            a.report.n_trials,
            t.elapsed().as_secs_f64() / 60.0
        ),
    ))
}

/// Sequences over {0,1,2} are encoded as base-4 digits (d+1), so every
/// sequence of length ≤ 7 has a unique code below 4^8.
fn code(seq: &[u8]) -> usize {
    seq.iter().fold(0, |acc, &d| acc * 4 + d as usize + 1)
}

fn brute_lcs_table(seqs: &[Vec<u8>]) -> (Vec<Vec<(usize, usize)>>, Vec<Vec<u64>>) {
    // For each sequence: every subsequence as (length, code), longest first,
    // and a bitset over codes of its subsequences.
    let mut subs = Vec::with_capacity(seqs.len());
    let mut sets = Vec::with_capacity(seqs.len());
    for q in seqs {
        let mut list = Vec::new();
        let mut bits = vec![0u64; 4usize.pow(8) / 64 + 1];
        for mask in 0u32..(1 << q.len()) {
            let sub: Vec<u8> = (0..q.len()).filter(|i| mask >> i & 1 == 1).map(|i| q[i]).collect();
            let c = code(&sub);
            bits[c / 64] |= 1 << (c % 64);
            list.push((sub.len(), c));
        }
        list.sort_by(|a, b| b.0.cmp(&a.0));
        subs.push(list);
        sets.push(bits);
    }
    (subs, sets)
}

fn brute_lcs_long(a: &[u8], b: &[u8]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let n = mask.count_ones() as usize;
        if n <= best {
            continue;
        }
        let sub: Vec<u8> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
        let mut it = b.iter();
        if sub.iter().all(|x| it.any(|y| y == x)) {
            best = n;
        }
    }
    best
}

/// Edit distance as the minimum over the three last-operation choices,
/// top-down with memoisation.
fn brute_edit(a: &[u8], b: &[u8], memo: &mut [Option<usize>; 256]) -> usize {
    if a.is_empty() || b.is_empty() {
        return a.len() + b.len();
    }
    if let Some(v) = memo[a.len() * 16 + b.len()] {
        return v;
    }
    let (la, lb) = (a.len() - 1, b.len() - 1);
    let v = (brute_edit(&a[..la], &b[..lb], memo) + usize::from(a[la] != b[lb]))
        .min(brute_edit(&a[..la], b, memo) + 1)
        .min(brute_edit(a, &b[..lb], memo) + 1);
    memo[a.len() * 16 + b.len()] = Some(v);
    v
}

fn brute_bleu(h: &[u8], r: &[u8], alphabet: usize) -> f64 {
    if h.is_empty() {
        return 0.0;
    }
    let clipped: usize = (0..alphabet as u8).map(|w| h.iter().filter(|x| **x == w).count().min(r.iter().filter(|x| **x == w).count())).sum();
    let precision = clipped as f64 / h.len() as f64;
    let bp = if h.len() >= r.len() { 1.0 } else { (1.0 - r.len() as f64 / h.len() as f64).exp() };
    precision * bp
}

fn f_measure(lcs: usize, h: usize, r: usize) -> f64 {
    if h == 0 || lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / h as f64;
    let rc = lcs as f64 / r as f64;
    2.0 * p * rc / (p + rc)
}

fn c9_metrics(_: &mut Ctx) -> Outcome {
    const WORDS: [&str; 8] = ["a", "b", "c", "d", "e", "f", "g", "h"];
    let words = |q: &[u8]| -> Vec<&'static str> { q.iter().map(|&i| WORDS[i as usize]).collect() };
    let mut seqs: Vec<Vec<u8>> = vec![vec![]];
    let mut frontier = seqs.clone();
    for _ in 0..7 {
        frontier = frontier.iter().flat_map(|q| (0..3u8).map(move |d| [q.clone(), vec![d]].concat())).collect();
        seqs.extend(frontier.iter().cloned());
    }
    let (subs, sets) = brute_lcs_table(&seqs);
    let wl: Vec<Vec<&str>> = seqs.iter().map(|q| words(q)).collect();
    let mut mismatches = 0usize;
    let mut pairs = 0usize;
    let mut memo = [None; 256];
    for (hi, h) in seqs.iter().enumerate() {
        for (ri, r) in seqs.iter().enumerate() {
            pairs += 1;
            if r.is_empty() {
                // Empty references are rejected by every metric.
                let rejected = bleu1(&wl[hi], &wl[ri]).is_err() && rouge_l(&wl[hi], &wl[ri]).is_err() && wer(&wl[hi], &wl[ri]).is_err();
                mismatches += usize::from(!rejected);
                continue;
            }
            let lcs = subs[hi].iter().find(|(_, c)| sets[ri][c / 64] >> (c % 64) & 1 == 1).map_or(0, |x| x.0);
            memo.fill(None);
            let ed = brute_edit(h, r, &mut memo);
            let ok = bleu1(&wl[hi], &wl[ri]).map_err(s)? == brute_bleu(h, r, 3)
                && rouge_l(&wl[hi], &wl[ri]).map_err(s)? == f_measure(lcs, h.len(), r.len())
                && wer(&wl[hi], &wl[ri]).map_err(s)? == ed as f64 / r.len() as f64;
            mismatches += usize::from(!ok);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut long_mismatch = 0;
    for _ in 0..1000 {
        let h: Vec<u8> = (0..rng.gen_range(8..=12)).map(|_| rng.gen_range(0..8u8)).collect();
        let r: Vec<u8> = (0..rng.gen_range(8..=14)).map(|_| rng.gen_range(0..8u8)).collect();
        let (hw, rw) = (words(&h), words(&r));
        memo.fill(None);
        let ok = bleu1(&hw, &rw).map_err(s)? == brute_bleu(&h, &r, 8)
            && rouge_l(&hw, &rw).map_err(s)? == f_measure(brute_lcs_long(&h, &r), h.len(), r.len())
            && wer(&hw, &rw).map_err(s)? == brute_edit(&h, &r, &mut memo) as f64 / r.len() as f64;
        long_mismatch += usize::from(!ok);
    }
    let tt = paired_ttest(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).map_err(s)?;
    let fixture = (tt.t - 4.2426).abs() < 5e-5 && (tt.p - 0.0132).abs() < 5e-5;
    Ok((
        mismatches == 0 && long_mismatch == 0 && fixture,
        format!(
            "{mismatches} mismatches over {pairs} exhaustive pairs, {long_mismatch} over 1000 longer pairs; t-test fixture t = {:.4}, p = {:.4}",
            tt.t, tt.p
        ),
    ))
}

fn c10_detection(ctx: &mut Ctx) -> Outcome {
    let cfg = ctx.main_dataset()?;
    let t = Instant::now();
    let art = pipeline::detect(&cfg).map_err(s)?;
    let summary = &art.table.participants[0];
    let acc = summary.average_mean;
    let p = summary.p_value.unwrap_or(1.0);
    let folds = art.table.folds.len();

    let data = pipeline::detection_dataset(&cfg, "p01").map_err(s)?;
    let mut shuffled = data.clone();
    shuffled.labels.shuffle(&mut ChaCha8Rng::seed_from_u64(10));
    let null = train_eval_xtc(&shuffled, cfg.detect.folds, &cfg.detect.seeds, &cfg.detect.trees).map_err(s)?;
    let null_acc = null.participants[0].average_mean;
    Ok((
        acc > 0.5 && p < 0.01 && folds == 15 && (0.45..=0.55).contains(&null_acc),
        format!(
            "{} trials, {folds} folds: mean accuracy {acc:.3}, permutation p = {p:.4} ({} perms); shuffled labels {null_acc:.3}; {:.1} min",
            summary.n_trials,
            art.n_perms,
            t.elapsed().as_secs_f64() / 60.0
        ),
    ))
}

fn c11_glm(ctx: &mut Ctx) -> Outcome {
    let cfg = ctx.main_dataset()?;
    let g = pipeline::glm(&cfg, "p01").map_err(s)?;
    let (a, na) = g.active_detected();
    let (q, nq) = g.inactive_quiet();
    let null: Vec<f64> = (0..g.hbo_z.len()).filter(|p| !g.active.contains(p)).map(|p| g.hbo_z[p]).collect();
    let mean = null.iter().sum::<f64>() / null.len() as f64;
    let var = null.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (null.len() - 1) as f64;
    Ok((
        a == na && q == nq,
        format!("{a}/{na} active pairs with z > 3, {q}/{nq} inactive pairs with |z| < 2 (inactive z mean {mean:.2}, variance {var:.2})"),
    ))
}

fn c12_determinism(ctx: &mut Ctx) -> Outcome {
    ctx.lm()?;
    let a = ctx.small("full_a");
    if !a.paths.workdir.join("report.md").exists() {
        pipeline::run_all(&a).map_err(s)?;
    }
    let b = ctx.small("full_b");
    pipeline::run_all(&b).map_err(s)?;
    let ra = std::fs::read(a.paths.workdir.join("report.md")).map_err(s)?;
    let rb = std::fs::read(b.paths.workdir.join("report.md")).map_err(s)?;
    Ok((ra == rb && !ra.is_empty(), format!("two full runs, reports of {} and {} bytes, identical: {}", ra.len(), rb.len(), ra == rb)))
}

type Criterion = (usize, &'static str, fn(&mut Ctx) -> Outcome);

const CRITERIA: [Criterion; 12] = [
    (1, "preprocessing fidelity", c1_preprocessing),
    (2, "filter contract", c2_filter),
    (3, "delay recovery", c3_delay),
    (4, "frozen LM", c4_frozen),
    (5, "encoder gradient check", c5_gradcheck),
    (6, "overfit oracle", c6_overfit),
    (7, "end-to-end discrimination", c7_end_to_end),
    (8, "multi-participant alignment", c8_alignment),
    (9, "metric oracles", c9_metrics),
    (10, "imagined speech detection", c10_detection),
    (11, "GLM contrast", c11_glm),
    (12, "determinism", c12_determinism),
];

fn fresh_root(root: &Path) -> std::io::Result<()> {
    // Keep the LM cache, wipe everything else.
    if root.exists() {
        for entry in std::fs::read_dir(root)? {
            let path = entry?.path();
            if path.file_name().is_some_and(|n| n != "lm") {
                std::fs::remove_dir_all(&path)?;
            }
        }
    }
    std::fs::create_dir_all(root)
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fresh_root(&root).expect("acceptance workdir");
    let mut ctx = Ctx { root, lm: None, lm_secs: 0.0 };
    let mut failed = 0;
    for (n, name, f) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut ctx))).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|x| x.to_string())).unwrap_or_default())
        });
        let (ok, detail) = match outcome {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!ok);
        println!("{} {n:>2} {name}: {detail} [{:.0} s]", if ok { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
    }
    // The PASS/FAIL lines are the verdict. A failing criterion only turns
    // into a non-zero exit under NIRTEXT_ACCEPTANCE_STRICT=1, so that a
    // workspace `cargo test` still runs the remaining test targets.
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        if std::env::var("NIRTEXT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
