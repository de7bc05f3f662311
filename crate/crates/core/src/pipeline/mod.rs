//! Stage orchestration over a working directory. Each stage reads the
//! artifacts of earlier stages from disk, so the CLI can run them as
//! separate processes.
//!
//! ```text
//! <workdir>/lm.ckpt, lm.json
//! <workdir>/dataset/<pid>/...              gen
//! <workdir>/haemo/<pid>/run_000/...        preprocess
//! <workdir>/delay/<pid>.json               delay
//! <workdir>/train/<pid>/{encoder.ckpt, split.json}
//! <workdir>/eval/<pid>/{conditions.json, metrics.csv}
//! <workdir>/align/<pid>.json               fold holding <pid> out
//! <workdir>/lopo/<pid>/{conditions.json, baseline.json, metrics.csv}
//! <workdir>/detect/{accuracy.csv, summary.json}
//! <workdir>/glm/<pid>.{csv,json}
//! <workdir>/report.md
//! ```

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{build_schedule, realize_sentences, Schedule, TopicSet};
use crate::detect::{make_detection_dataset, perm_pvalue, train_eval_xtc, AccuracyTable, DetectRun, DetectionDataset};
use crate::encoder::align::AlignSample;
use crate::encoder::{apply_alignment, fit_alignment, AlignmentModel, BrainEncoder, EncoderConfig, ALIGNED_WIDTH};
use crate::error::{Error, Result};
use crate::glm::{aggregate_delays, contrast_csv, contrast_z, fir_run, prepare_input, z_vector, ContrastRun, DelayReport};
use crate::io;
use crate::lm::{fit_toy_lm, tokenize, FrozenLM, LmSentenceVectorizer, LmTokenEmbedder, LmTrainReport};
use crate::rng::{derive_seed, streams};
use crate::sigproc::{epoch_trials, preprocess as preprocess_run, zscore_by_session, HaemoSeries, TrialExample};
use crate::synthgen::dataset::{participant_dirs, read_run, run_dir_name, sentences_from_tsv, write_run, Manifest, RunEntry};
use crate::synthgen::dataset::{MANIFEST_VERSION, SEMANTIC_MAP_FILE};
use crate::synthgen::{render_run, CentredVectorizer, ExtinctionTable, Montage, RenderSpec, RunIds, SemanticMap, N_HAEMO};
use crate::training::{
    evaluate_conditions, finetune as finetune_encoder, make_examples, pretrain, train_main, ConditionReport, PromptExample,
    SplitPlan, SplitSizes, TrainOutcome,
};

pub use config::{parse_participant, participant_id, RunConfig};

/// Stage names in execution order.
pub const STAGES: [&str; 10] = ["gen", "preprocess", "delay", "train", "eval", "align", "finetune", "detect", "glm", "report"];

/// Per-participant seed; every participant-level random choice derives from it.
pub fn participant_seed(cfg: &RunConfig, pid: &str) -> Result<u64> {
    let n: u64 = pid.trim_start_matches('p').parse().map_err(|_| Error::config(format!("bad participant id '{pid}'")))?;
    Ok(derive_seed(cfg.seed, &[streams::PARTICIPANT, n]))
}

fn workdir(cfg: &RunConfig) -> &Path {
    &cfg.paths.workdir
}

fn dataset_dir(cfg: &RunConfig, pid: &str) -> PathBuf {
    workdir(cfg).join("dataset").join(pid)
}

fn haemo_dir(cfg: &RunConfig, pid: &str, run: usize) -> PathBuf {
    workdir(cfg).join("haemo").join(pid).join(run_dir_name(run))
}

fn need(path: &Path, stage: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::data(format!("{} is missing; run `{stage}` first", path.display())))
    }
}

fn check_hash(what: &str, found: &str, cfg_hash: &str) {
    if found != cfg_hash {
        log::warn!("{what} was produced with config {found}, current config is {cfg_hash}");
    }
}

/// CSV with a leading `# config_hash=` line.
fn write_stamped_csv(path: &Path, hash: &str, body: &str) -> Result<()> {
    io::write_text(path, &format!("# config_hash={hash}\n{body}"))
}

pub fn topics(cfg: &RunConfig) -> Result<TopicSet> {
    match &cfg.paths.topics {
        Some(p) => TopicSet::load(p),
        None => Ok(TopicSet::shipped()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmMeta {
    pub lm_hash: String,
    pub report: LmTrainReport,
}

/// Loads the configured LM checkpoint, training and saving it first if the
/// file does not exist. A checkpoint trained under different LM settings
/// is refused.
pub fn ensure_lm(cfg: &RunConfig) -> Result<FrozenLM> {
    let path = cfg.lm_path();
    let side = path.with_extension("json");
    let want = cfg.lm_hash()?;
    if path.exists() {
        let meta: LmMeta = io::read_json(&side)?;
        if meta.lm_hash != want {
            return Err(Error::config(format!(
                "{} was trained with different LM settings ({} vs {want}); remove it or point paths.lm_checkpoint elsewhere",
                path.display(),
                meta.lm_hash
            )));
        }
        return FrozenLM::load(&path);
    }
    let corpus = topics(cfg)?.all_sentences();
    log::info!("training the toy LM on {} sentences", corpus.len());
    let (lm, report) = fit_toy_lm(&corpus, &cfg.lm.train, cfg.lm.seed)?;
    log::info!("LM ready: {} epochs, train perplexity {:.2}", report.epochs_run, report.train_ppl);
    lm.save(&path)?;
    io::write_json(&side, &LmMeta { lm_hash: want, report })?;
    Ok(lm)
}

fn render_spec(cfg: &RunConfig) -> RenderSpec {
    let d = &cfg.dataset;
    RenderSpec {
        sfreq: d.sfreq,
        ppf: cfg.preprocess.ppf,
        hrf: d.hrf,
        noise: d.noise.scaled(d.noise_scale),
        extinction: ExtinctionTable::shipped(),
        post_run_padding_s: d.post_run_padding_s,
    }
}

/// Sentences of run `r`, re-keyed from global to within-run event indices.
fn run_sentences(all: &Schedule, sentences: &BTreeMap<usize, String>, r: usize) -> BTreeMap<usize, String> {
    all.events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.run == r)
        .enumerate()
        .filter_map(|(local, (global, _))| sentences.get(&global).map(|s| (local, s.clone())))
        .collect()
}

/// Renders every participant's runs under `<workdir>/dataset`.
pub fn gen(cfg: &RunConfig, lm: &FrozenLM) -> Result<Vec<PathBuf>> {
    let hash = cfg.hash()?;
    let topics = topics(cfg)?;
    let corpus = topics.all_sentences();
    let vectorizer = CentredVectorizer::new(LmSentenceVectorizer::new(lm), &corpus)?;
    let montage = Montage::high_density();
    let spec = render_spec(cfg);
    let d = &cfg.dataset;
    let mut out = Vec::new();
    for pid in cfg.participant_ids() {
        let seed = participant_seed(cfg, &pid)?;
        let dir = dataset_dir(cfg, &pid);
        if dir.join("manifest.json").exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let map = SemanticMap::random(lm.embed_dim(), d.active_pairs, d.semantic_amplitude, d.task_amplitude, seed)?;
        let all = build_schedule(&topics, d.runs, seed)?;
        let sentences = realize_sentences(&all, &topics, seed, d.length_bias)?;
        let mut runs = Vec::with_capacity(d.runs);
        for r in 0..d.runs {
            let schedule = all.run(r)?;
            let ids = RunIds { participant: pid.clone(), session: r / d.runs_per_session, run: r };
            let raw = render_run(&schedule, &run_sentences(&all, &sentences, r), &vectorizer, &map, &montage, &spec, seed, ids)?;
            runs.push(write_run(&dir, &raw)?);
        }
        io::write_json(&dir.join(SEMANTIC_MAP_FILE), &map)?;
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            config_hash: hash.clone(),
            participant: pid.clone(),
            seed,
            montage: montage.clone(),
            render: spec.clone(),
            semantic_map_file: SEMANTIC_MAP_FILE.into(),
            runs,
        };
        manifest.save(&dir)?;
        log::info!("gen: {pid} with {} runs", d.runs);
        out.push(dir);
    }
    Ok(out)
}

fn load_manifest(cfg: &RunConfig, pid: &str) -> Result<Manifest> {
    let dir = dataset_dir(cfg, pid);
    need(&dir.join("manifest.json"), "gen")?;
    Manifest::load(&dir)
}

fn read_events(cfg: &RunConfig, pid: &str, entry: &RunEntry) -> Result<(Schedule, BTreeMap<usize, String>)> {
    let dir = dataset_dir(cfg, pid).join(&entry.dir);
    let events = Schedule::from_csv(&io::read_text(&dir.join("events.csv"))?)?;
    let sentences = sentences_from_tsv(&io::read_text(&dir.join("sentences.tsv"))?)?;
    Ok((events, sentences))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HaemoIndex {
    config_hash: String,
    participant: String,
    runs: Vec<usize>,
}

/// Preprocesses every run of the given participants to haemoglobin.
pub fn preprocess(cfg: &RunConfig, pids: &[String]) -> Result<()> {
    let hash = cfg.hash()?;
    for pid in pids {
        let manifest = load_manifest(cfg, pid)?;
        check_hash(&format!("dataset {pid}"), &manifest.config_hash, &hash);
        let pdir = dataset_dir(cfg, pid);
        for entry in &manifest.runs {
            let raw = read_run(&pdir, &manifest, entry)?;
            let h = preprocess_run(&raw, &manifest.montage, &manifest.render.extinction, &cfg.preprocess)?;
            h.save(&haemo_dir(cfg, pid, entry.run))?;
        }
        let index = HaemoIndex { config_hash: hash.clone(), participant: pid.clone(), runs: manifest.runs.iter().map(|r| r.run).collect() };
        io::write_json(&workdir(cfg).join("haemo").join(pid).join("index.json"), &index)?;
        log::info!("preprocess: {pid} with {} runs", manifest.runs.len());
    }
    Ok(())
}

fn load_haemo(cfg: &RunConfig, pid: &str, run: usize) -> Result<HaemoSeries> {
    let dir = haemo_dir(cfg, pid, run);
    need(&dir.join("haemo.f32"), "preprocess")?;
    HaemoSeries::load(&dir, N_HAEMO)
}

/// FIR delay estimate for one participant.
pub fn delay(cfg: &RunConfig, pid: &str) -> Result<DelayReport> {
    let hash = cfg.hash()?;
    let manifest = load_manifest(cfg, pid)?;
    let pdir = dataset_dir(cfg, pid);
    let mut sums = Vec::with_capacity(manifest.runs.len());
    for entry in &manifest.runs {
        let raw = read_run(&pdir, &manifest, entry)?;
        let input = prepare_input(&raw, &manifest.montage, &manifest.render.extinction, &cfg.preprocess)?;
        sums.push(fir_run(&input, &raw.events, &cfg.glm.fir)?);
    }
    let report = DelayReport::new(pid, &hash, aggregate_delays(&sums, cfg.glm.fir.frame_hz)?)?;
    io::write_json(&workdir(cfg).join("delay").join(format!("{pid}.json")), &report)?;
    log::info!("delay: {pid} peaks at {} s", report.chosen_delay_s);
    Ok(report)
}

/// Delayed, session-z-scored imagery epochs of one participant.
pub fn load_trials(cfg: &RunConfig, pid: &str) -> Result<Vec<TrialExample>> {
    let manifest = load_manifest(cfg, pid)?;
    let mut trials = Vec::new();
    for entry in &manifest.runs {
        let h = load_haemo(cfg, pid, entry.run)?;
        let (events, sentences) = read_events(cfg, pid, entry)?;
        let ids = RunIds { participant: pid.to_string(), session: entry.session, run: entry.run };
        trials.extend(epoch_trials(&h, &events, Some(&sentences), &ids, cfg.epochs.delay_s, cfg.epochs.window_s)?);
    }
    Ok(zscore_by_session(trials)?.0)
}

pub fn load_examples(cfg: &RunConfig, pid: &str, lm: &FrozenLM) -> Result<Vec<PromptExample>> {
    make_examples(&load_trials(cfg, pid)?, &lm.vocab)
}

pub fn split_plan(cfg: &RunConfig, pid: &str, examples: &[PromptExample]) -> Result<SplitPlan> {
    let ids: Vec<String> = examples.iter().map(|e| e.id.clone()).collect();
    SplitPlan::new(&ids, cfg.model.split, participant_seed(cfg, pid)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub participant: String,
    pub n_examples: usize,
    pub pretrain_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_val: Option<f64>,
    pub stopped_early: bool,
    pub history: Vec<crate::training::EpochLog>,
}

/// Pretraining followed by the main loop, on the participant's train split.
pub fn train(cfg: &RunConfig, pid: &str, lm: &FrozenLM) -> Result<TrainSummary> {
    let hash = cfg.hash()?;
    let seed = participant_seed(cfg, pid)?;
    let ex = load_examples(cfg, pid, lm)?;
    let plan = split_plan(cfg, pid, &ex)?;
    let (tr, val) = (plan.select(&ex, &plan.train), plan.select(&ex, &plan.val));
    let enc = BrainEncoder::init(cfg.model.encoder, seed)?;
    let (enc, pretrain_losses) = pretrain(&enc, &tr, lm, &cfg.model.pretrain, seed)?;
    let out = train_main(&enc, &tr, &val, lm, &cfg.model.train, seed)?;
    let summary = TrainSummary {
        config_hash: hash.clone(),
        participant: pid.to_string(),
        n_examples: ex.len(),
        pretrain_losses,
        best_epoch: out.best_epoch,
        best_val: out.best_val,
        stopped_early: out.stopped_early,
        history: out.history,
    };
    let dir = workdir(cfg).join("train").join(pid);
    out.encoder.save(&dir.join("encoder.ckpt"), serde_json::to_value(&summary).map_err(|e| Error::data(e.to_string()))?)?;
    io::write_json(&dir.join("split.json"), &serde_json::json!({ "config_hash": hash, "plan": plan }))?;
    log::info!("train: {pid} best epoch {} of {}", summary.best_epoch, summary.history.len());
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionArtifact {
    pub config_hash: String,
    pub participant: String,
    pub report: ConditionReport,
}

fn write_conditions(dir: &Path, art: &ConditionArtifact) -> Result<()> {
    io::write_json(&dir.join("conditions.json"), art)?;
    write_stamped_csv(&dir.join("metrics.csv"), &art.config_hash, &art.report.metrics_csv())
}

/// The four prompt conditions on the participant's test split.
pub fn eval(cfg: &RunConfig, pid: &str, lm: &FrozenLM) -> Result<ConditionArtifact> {
    let hash = cfg.hash()?;
    let tdir = workdir(cfg).join("train").join(pid);
    need(&tdir.join("encoder.ckpt"), "train")?;
    let (enc, meta) = BrainEncoder::load(&tdir.join("encoder.ckpt"))?;
    check_hash(&format!("encoder {pid}"), meta["config_hash"].as_str().unwrap_or(""), &hash);
    let ex = load_examples(cfg, pid, lm)?;
    let plan = split_plan(cfg, pid, &ex)?;
    let test = plan.select(&ex, &plan.test);
    let embedder = LmTokenEmbedder::new(lm);
    let report = evaluate_conditions(&enc, &test, lm, &embedder, participant_seed(cfg, pid)?, cfg.model.max_new_tokens)?;
    let art = ConditionArtifact { config_hash: hash, participant: pid.to_string(), report };
    write_conditions(&workdir(cfg).join("eval").join(pid), &art)?;
    log::info!("eval: {pid} on {} test trials", test.len());
    Ok(art)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignArtifact {
    pub config_hash: String,
    pub held_out: String,
    /// Trials per participant used to fit its map.
    pub n_trials: BTreeMap<String, usize>,
    pub model: AlignmentModel,
}

/// Every participant's examples, with the held-out participant's split.
fn all_examples(cfg: &RunConfig, lm: &FrozenLM) -> Result<BTreeMap<String, Vec<PromptExample>>> {
    cfg.participant_ids().into_iter().map(|p| Ok((p.clone(), load_examples(cfg, &p, lm)?))).collect()
}

/// Alignment for the fold that holds `held_out` out: training participants
/// contribute every trial, the held-out participant only its fine-tune
/// trials.
fn fit_fold(
    cfg: &RunConfig,
    held_out: &str,
    examples: &BTreeMap<String, Vec<PromptExample>>,
    lm: &FrozenLM,
) -> Result<AlignArtifact> {
    let ho = examples.get(held_out).ok_or_else(|| Error::config(format!("unknown participant {held_out}")))?;
    let plan = split_plan(cfg, held_out, ho)?;
    let mut chosen: BTreeMap<String, Vec<&PromptExample>> = BTreeMap::new();
    for (p, ex) in examples {
        let rows = if p == held_out { plan.select(ex, &plan.finetune) } else { ex.iter().collect() };
        chosen.insert(p.clone(), rows);
    }
    let targets: BTreeMap<String, Vec<Vec<f64>>> = chosen
        .iter()
        .map(|(p, rows)| Ok((p.clone(), rows.iter().map(|e| lm.mean_embedding(&tokenize(&e.sentence, &lm.vocab)?)).collect::<Result<Vec<_>>>()?)))
        .collect::<Result<_>>()?;
    let samples: BTreeMap<String, Vec<AlignSample<'_>>> = chosen
        .iter()
        .map(|(p, rows)| (p.clone(), rows.iter().zip(&targets[p]).map(|(e, t)| AlignSample { data: &e.brain, target: t }).collect()))
        .collect();
    let model = fit_alignment(&samples, cfg.model.align_lambda, derive_seed(cfg.seed, &[streams::ALIGN]))?;
    Ok(AlignArtifact {
        config_hash: cfg.hash()?,
        held_out: held_out.to_string(),
        n_trials: chosen.iter().map(|(p, r)| (p.clone(), r.len())).collect(),
        model,
    })
}

/// Fits one alignment per leave-one-participant-out fold.
pub fn align(cfg: &RunConfig, lm: &FrozenLM) -> Result<Vec<AlignArtifact>> {
    let examples = all_examples(cfg, lm)?;
    let mut out = Vec::new();
    for held_out in examples.keys() {
        let art = fit_fold(cfg, held_out, &examples, lm)?;
        io::write_json(&workdir(cfg).join("align").join(format!("{held_out}.json")), &art)?;
        log::info!("align: fold {held_out}");
        out.push(art);
    }
    Ok(out)
}

fn aligned(examples: &[&PromptExample], model: &AlignmentModel) -> Result<Vec<PromptExample>> {
    examples
        .iter()
        .map(|e| Ok(PromptExample { brain: apply_alignment(&e.brain, &e.participant, model)?, ..(*e).clone() }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LopoArtifact {
    pub config_hash: String,
    pub held_out: String,
    pub n_training_examples: usize,
    pub n_finetune: usize,
    pub lm_checksum_before: String,
    pub lm_checksum_after: String,
    pub multi_best_epoch: usize,
    pub finetune_best_epoch: usize,
    /// Fine-tuned multi-participant model.
    pub report: ConditionReport,
    /// Individual model trained only on the same fine-tune trials.
    pub baseline: ConditionReport,
}

/// Individual encoder restricted to `trials`: pretraining, then the main
/// loop on an 80/20 split of the same trials.
fn restricted_individual(
    cfg: &RunConfig,
    trials: &[&PromptExample],
    test_ids: &[String],
    lm: &FrozenLM,
    seed: u64,
) -> Result<TrainOutcome> {
    let enc = BrainEncoder::init(cfg.model.encoder, seed)?;
    let (enc, _) = pretrain(&enc, trials, lm, &cfg.model.pretrain, seed)?;
    finetune_encoder(&enc, trials, test_ids, lm, &cfg.model.train, seed)
}

/// Leave-one-participant-out: multi-participant encoder on the aligned
/// data of the others, fine-tuned on the held-out participant's fine-tune
/// trials and tested on its test trials.
pub fn finetune(cfg: &RunConfig, held_out: &str, lm: &FrozenLM) -> Result<LopoArtifact> {
    let hash = cfg.hash()?;
    let apath = workdir(cfg).join("align").join(format!("{held_out}.json"));
    need(&apath, "align")?;
    let art: AlignArtifact = io::read_json(&apath)?;
    check_hash(&format!("alignment {held_out}"), &art.config_hash, &hash);
    let before = lm.current_checksum();
    let seed = derive_seed(participant_seed(cfg, held_out)?, &[streams::ALIGN, 1]);

    let examples = all_examples(cfg, lm)?;
    let ho = &examples[held_out];
    let plan = split_plan(cfg, held_out, ho)?;
    let others: Vec<&PromptExample> = examples.iter().filter(|(p, _)| *p != held_out).flat_map(|(_, e)| e.iter()).collect();
    let pool = aligned(&others, &art.model)?;
    let pool_ids: Vec<String> = pool.iter().map(|e| e.id.clone()).collect();
    let sizes = SplitSizes { test: 0, finetune: 0, ..cfg.model.split };
    let pool_plan = SplitPlan::new(&pool_ids, sizes, seed)?;
    let (tr, val) = (pool_plan.select(&pool, &pool_plan.train), pool_plan.select(&pool, &pool_plan.val));

    let multi_cfg = EncoderConfig { input_channels: ALIGNED_WIDTH, ..cfg.model.encoder };
    let enc = BrainEncoder::init(multi_cfg, seed)?;
    let (enc, _) = pretrain(&enc, &tr, lm, &cfg.model.pretrain, seed)?;
    let multi = train_main(&enc, &tr, &val, lm, &cfg.model.train, seed)?;

    let ft_raw = plan.select(ho, &plan.finetune);
    let test_raw = plan.select(ho, &plan.test);
    let ft = aligned(&ft_raw, &art.model)?;
    let test = aligned(&test_raw, &art.model)?;
    let ft_refs: Vec<&PromptExample> = ft.iter().collect();
    let test_refs: Vec<&PromptExample> = test.iter().collect();
    let tuned = finetune_encoder(&multi.encoder, &ft_refs, &plan.test, lm, &cfg.model.train, seed)?;

    let embedder = LmTokenEmbedder::new(lm);
    let eval_seed = participant_seed(cfg, held_out)?;
    let report = evaluate_conditions(&tuned.encoder, &test_refs, lm, &embedder, eval_seed, cfg.model.max_new_tokens)?;
    let base = restricted_individual(cfg, &ft_raw, &plan.test, lm, seed)?;
    let baseline = evaluate_conditions(&base.encoder, &test_raw, lm, &embedder, eval_seed, cfg.model.max_new_tokens)?;

    let out = LopoArtifact {
        config_hash: hash.clone(),
        held_out: held_out.to_string(),
        n_training_examples: pool.len(),
        n_finetune: ft.len(),
        lm_checksum_before: before,
        lm_checksum_after: lm.current_checksum(),
        multi_best_epoch: multi.best_epoch,
        finetune_best_epoch: tuned.best_epoch,
        report,
        baseline,
    };
    let dir = workdir(cfg).join("lopo").join(held_out);
    tuned.encoder.save(&dir.join("encoder.ckpt"), serde_json::json!({ "config_hash": hash, "held_out": held_out }))?;
    io::write_json(&dir.join("lopo.json"), &out)?;
    write_stamped_csv(&dir.join("metrics.csv"), &hash, &out.report.metrics_csv())?;
    log::info!("finetune: fold {held_out} done");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectArtifact {
    pub config_hash: String,
    pub n_perms: usize,
    pub table: AccuracyTable,
}

/// Detection dataset of one participant from its preprocessed runs.
pub fn detection_dataset(cfg: &RunConfig, pid: &str) -> Result<DetectionDataset> {
    let manifest = load_manifest(cfg, pid)?;
    let mut loaded = Vec::with_capacity(manifest.runs.len());
    for entry in &manifest.runs {
        let h = load_haemo(cfg, pid, entry.run)?;
        let (events, _) = read_events(cfg, pid, entry)?;
        loaded.push((h, events, RunIds { participant: pid.to_string(), session: entry.session, run: entry.run }));
    }
    let runs: Vec<DetectRun<'_>> = loaded.iter().map(|(h, e, ids)| DetectRun { haemo: h, events: e, ids }).collect();
    make_detection_dataset(&runs, cfg.detect.window_s, cfg.epochs.delay_s, participant_seed(cfg, pid)?)
}

/// Cross-validated extra-trees accuracies and permutation p-values.
pub fn detect(cfg: &RunConfig) -> Result<DetectArtifact> {
    let hash = cfg.hash()?;
    let d = &cfg.detect;
    let mut table = AccuracyTable { folds: Vec::new(), participants: Vec::new() };
    for pid in cfg.participant_ids() {
        let data = detection_dataset(cfg, &pid)?;
        let mut t = train_eval_xtc(&data, d.folds, &d.seeds, &d.trees)?;
        for s in &mut t.participants {
            let seed = derive_seed(participant_seed(cfg, &pid)?, &[streams::DETECT]);
            s.p_value = Some(perm_pvalue(&data, s.average_mean, d.n_perms, d.folds, &d.trees, seed)?);
            log::info!("detect: {pid} mean accuracy {:.3}, p = {:.4}", s.average_mean, s.p_value.unwrap_or(1.0));
        }
        table.folds.extend(t.folds);
        table.participants.extend(t.participants);
    }
    let art = DetectArtifact { config_hash: hash.clone(), n_perms: d.n_perms, table };
    let dir = workdir(cfg).join("detect");
    write_stamped_csv(&dir.join("accuracy.csv"), &hash, &art.table.to_csv())?;
    io::write_json(&dir.join("summary.json"), &art)?;
    Ok(art)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmArtifact {
    pub config_hash: String,
    pub participant: String,
    pub n_runs: usize,
    /// Planted active long pairs.
    pub active: Vec<usize>,
    pub hbo_z: Vec<f64>,
    pub hbr_z: Vec<f64>,
}

impl GlmArtifact {
    /// (active HbO pairs with z > 3, number of active pairs).
    pub fn active_detected(&self) -> (usize, usize) {
        (self.active.iter().filter(|&&p| self.hbo_z[p] > 3.0).count(), self.active.len())
    }

    /// (inactive HbO pairs with |z| < 2, number of inactive pairs).
    pub fn inactive_quiet(&self) -> (usize, usize) {
        let inactive: Vec<usize> = (0..self.hbo_z.len()).filter(|p| !self.active.contains(p)).collect();
        (inactive.iter().filter(|&&p| self.hbo_z[p].abs() < 2.0).count(), inactive.len())
    }
}

/// Word cloud > rest activation contrast over the first runs.
pub fn glm(cfg: &RunConfig, pid: &str) -> Result<GlmArtifact> {
    let hash = cfg.hash()?;
    let manifest = load_manifest(cfg, pid)?;
    let pdir = dataset_dir(cfg, pid);
    let map = manifest.semantic_map(&pdir)?;
    let mut runs = Vec::new();
    for entry in manifest.runs.iter().take(cfg.glm.contrast_runs) {
        let raw = read_run(&pdir, &manifest, entry)?;
        let input = prepare_input(&raw, &manifest.montage, &manifest.render.extinction, &cfg.preprocess)?;
        runs.push(ContrastRun { input, events: raw.events });
    }
    let zs = contrast_z(&runs, &manifest.montage, &cfg.glm.contrast)?;
    let art = GlmArtifact {
        config_hash: hash.clone(),
        participant: pid.to_string(),
        n_runs: runs.len(),
        active: map.active.clone(),
        hbo_z: z_vector(&zs, "hbo"),
        hbr_z: z_vector(&zs, "hbr"),
    };
    let dir = workdir(cfg).join("glm");
    write_stamped_csv(&dir.join(format!("{pid}.csv")), &hash, &contrast_csv(&zs))?;
    io::write_json(&dir.join(format!("{pid}.json")), &art)?;
    Ok(art)
}

/// Every stage in order, then the report. Returns the report text.
pub fn run_all(cfg: &RunConfig) -> Result<String> {
    let lm = ensure_lm(cfg)?;
    let pids = cfg.participant_ids();
    gen(cfg, &lm)?;
    preprocess(cfg, &pids)?;
    for p in &pids {
        delay(cfg, p)?;
        train(cfg, p, &lm)?;
        eval(cfg, p, &lm)?;
    }
    if pids.len() >= 2 {
        align(cfg, &lm)?;
        for p in &pids {
            finetune(cfg, p, &lm)?;
        }
    }
    detect(cfg)?;
    for p in &pids {
        glm(cfg, p)?;
    }
    report::write_report(cfg)
}

/// Participant directories present in the dataset.
pub fn dataset_participants(cfg: &RunConfig) -> Result<Vec<String>> {
    participant_dirs(&workdir(cfg).join("dataset"))?
        .iter()
        .map(|d| Ok(Manifest::load(d)?.participant))
        .collect()
}
