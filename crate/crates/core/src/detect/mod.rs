//! Imagined-speech vs rest detection: balanced epochs, per-epoch summary
//! features, extremely randomized trees under stratified k-fold, and a
//! label-permutation p-value.

pub mod trees;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::s;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{EventKind, Schedule};
use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::rng::{derived_rng, streams};
use crate::sigproc::{n_epoch_samples, HaemoSeries};
use crate::synthgen::RunIds;

pub use trees::{ExtraTrees, ExtraTreesConfig};

pub const IMAGINED: u8 = 1;
pub const REST: u8 = 0;

/// Cross-validation seeds of the reference accuracy table.
pub const TABLE_SEEDS: [u64; 5] = [0, 6, 12, 24, 42];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionDataset {
    /// [trials × features].
    pub features: Mat,
    /// `IMAGINED` or `REST`.
    pub labels: Vec<u8>,
    pub participants: Vec<String>,
    pub sessions: Vec<usize>,
    pub seed: u64,
}

impl DetectionDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let n1 = self.labels.iter().filter(|&&l| l == IMAGINED).count();
        (self.labels.len() - n1, n1)
    }

    /// Rows belonging to one participant, in order.
    pub fn subset(&self, participant: &str) -> DetectionDataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.participants[i] == participant).collect();
        DetectionDataset {
            features: self.features.select(ndarray::Axis(0), &idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            participants: idx.iter().map(|&i| self.participants[i].clone()).collect(),
            sessions: idx.iter().map(|&i| self.sessions[i]).collect(),
            seed: self.seed,
        }
    }

    pub fn participant_ids(&self) -> Vec<String> {
        let mut p = self.participants.clone();
        p.sort();
        p.dedup();
        p
    }
}

/// One preprocessed run with its events.
pub struct DetectRun<'a> {
    pub haemo: &'a HaemoSeries,
    pub events: &'a Schedule,
    pub ids: &'a RunIds,
}

/// Per channel: mean, least-squares slope against the sample index, and
/// population standard deviation, laid out as [means | slopes | sds].
pub fn featurize(epoch: &Mat, expected: (usize, usize)) -> Result<Vec<f64>> {
    if epoch.dim() != expected {
        return Err(Error::data(format!("epoch has shape {:?}, expected {expected:?}", epoch.dim())));
    }
    let (t, c) = epoch.dim();
    let tm = (t as f64 - 1.0) / 2.0;
    let sxx: f64 = (0..t).map(|i| (i as f64 - tm).powi(2)).sum();
    let mut out = vec![0.0; 3 * c];
    for j in 0..c {
        let col = epoch.column(j);
        let mean = col.sum() / t as f64;
        let sxy: f64 = col.iter().enumerate().map(|(i, v)| (i as f64 - tm) * (v - mean)).sum();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
        out[j] = mean;
        out[c + j] = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        out[2 * c + j] = var.sqrt();
    }
    Ok(out)
}

/// Imagined epochs are the keyword windows; rest epochs are consecutive
/// non-overlapping crops of each rest trial. Both start `delay_s` after
/// their event time. Within each run the majority class is randomly
/// downsampled to the minority count.
pub fn make_detection_dataset(runs: &[DetectRun<'_>], window_s: f64, delay_s: f64, seed: u64) -> Result<DetectionDataset> {
    if !(window_s > 0.0) || !(delay_s >= 0.0) {
        return Err(Error::config(format!("detection window {window_s} s / delay {delay_s} s is invalid")));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut participants = Vec::new();
    let mut sessions = Vec::new();
    let mut any_rest = false;
    for (ri, run) in runs.iter().enumerate() {
        let sf = run.haemo.sfreq;
        let t = n_epoch_samples(window_s, sf);
        let c = run.haemo.data.ncols();
        let n = run.haemo.data.nrows();
        let crop = |start_s: f64| -> Option<Mat> {
            let a = (start_s * sf).round() as usize;
            (a + t <= n).then(|| run.haemo.data.slice(s![a..a + t, ..]).to_owned())
        };
        let mut imagined = Vec::new();
        let mut rest = Vec::new();
        for ev in &run.events.events {
            match ev.kind {
                EventKind::Imagine => imagined.extend(crop(ev.onset + delay_s)),
                EventKind::Rest => {
                    let k = (ev.duration / window_s + 1e-9).floor() as usize;
                    rest.extend((0..k).filter_map(|j| crop(ev.onset + delay_s + j as f64 * window_s)));
                }
                EventKind::Break => {}
            }
        }
        any_rest |= !rest.is_empty();
        let m = imagined.len().min(rest.len());
        let mut rng = derived_rng(seed, &[streams::DETECT, 0, ri as u64]);
        for (mut group, label) in [(imagined, IMAGINED), (rest, REST)] {
            if group.len() > m {
                group.shuffle(&mut rng);
                group.truncate(m);
            }
            for e in group {
                rows.push(featurize(&e, (t, c))?);
                labels.push(label);
                participants.push(run.ids.participant.clone());
                sessions.push(run.ids.session);
            }
        }
    }
    if !any_rest {
        return Err(Error::data("no rest trials: detection needs rest epochs"));
    }
    if rows.is_empty() {
        return Err(Error::data("no run holds both imagined and rest epochs"));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::data("runs have different channel counts"));
    }
    let features = Mat::from_shape_fn((rows.len(), width), |(i, j)| rows[i][j]);
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("detection features are not finite"));
    }
    Ok(DetectionDataset { features, labels, participants, sessions, seed })
}

/// Stratified assignment of samples to `k` folds: each class is shuffled
/// and dealt round-robin, so class proportions match across folds.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {k}")));
    }
    let mut fold = vec![0; labels.len()];
    let mut offset = 0;
    for class in [REST, IMAGINED] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::data(format!("class {class} has {} samples; every fold needs one", idx.len())));
        }
        idx.shuffle(&mut derived_rng(seed, &[streams::DETECT, 2, class as u64]));
        for (j, i) in idx.into_iter().enumerate() {
            fold[i] = (j + offset) % k;
        }
        // Continue dealing where the previous class stopped so fold sizes stay even.
        offset = (offset + labels.iter().filter(|&&l| l == class).count()) % k;
    }
    Ok(fold)
}

/// Per-fold accuracies of one cross-validation pass.
pub fn cross_validate(data: &DetectionDataset, folds: usize, cv_seed: u64, cfg: &ExtraTreesConfig) -> Result<Vec<f64>> {
    let assign = stratified_folds(&data.labels, folds, cv_seed)?;
    (0..folds)
        .map(|f| {
            let train: Vec<usize> = (0..data.len()).filter(|&i| assign[i] != f).collect();
            let test: Vec<usize> = (0..data.len()).filter(|&i| assign[i] == f).collect();
            let xtr = data.features.select(ndarray::Axis(0), &train);
            let ytr: Vec<u8> = train.iter().map(|&i| data.labels[i]).collect();
            if ytr.iter().all(|&l| l == ytr[0]) {
                return Err(Error::data(format!("fold {f}: a class is absent from the training part")));
            }
            let model = ExtraTrees::fit(&xtr, &ytr, cfg, cv_seed)?;
            let pred = model.predict(&data.features.select(ndarray::Axis(0), &test));
            let hits = test.iter().zip(&pred).filter(|(&i, &p)| data.labels[i] == p).count();
            Ok(hits as f64 / test.len() as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAccuracy {
    pub participant: String,
    pub seed: u64,
    pub fold: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub participant: String,
    pub seed: u64,
    pub best: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantSummary {
    pub participant: String,
    pub n_trials: usize,
    pub seeds: Vec<SeedSummary>,
    /// Averages over seeds of the best and mean fold accuracy.
    pub average_best: f64,
    pub average_mean: f64,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub folds: Vec<FoldAccuracy>,
    pub participants: Vec<ParticipantSummary>,
}

impl AccuracyTable {
    /// `participant,seed,fold,accuracy`, then per participant one `best` and
    /// one `mean` row per seed and two `average` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("participant,seed,fold,accuracy\n");
        for f in &self.folds {
            let _ = writeln!(out, "{},{},{},{:.6}", f.participant, f.seed, f.fold, f.accuracy);
        }
        for p in &self.participants {
            for s in &p.seeds {
                let _ = writeln!(out, "{},{},best,{:.6}", p.participant, s.seed, s.best);
                let _ = writeln!(out, "{},{},mean,{:.6}", p.participant, s.seed, s.mean);
            }
            let _ = writeln!(out, "{},average,best,{:.6}", p.participant, p.average_best);
            let _ = writeln!(out, "{},average,mean,{:.6}", p.participant, p.average_mean);
        }
        out
    }

    pub fn summary(&self, participant: &str) -> Option<&ParticipantSummary> {
        self.participants.iter().find(|p| p.participant == participant)
    }
}

/// Stratified k-fold for every seed, separately per participant.
pub fn train_eval_xtc(data: &DetectionDataset, folds: usize, seeds: &[u64], cfg: &ExtraTreesConfig) -> Result<AccuracyTable> {
    if seeds.is_empty() {
        return Err(Error::config("no cross-validation seeds"));
    }
    let mut table = AccuracyTable { folds: Vec::new(), participants: Vec::new() };
    for p in data.participant_ids() {
        let sub = data.subset(&p);
        let (n0, n1) = sub.class_counts();
        if n0 != n1 {
            return Err(Error::data(format!("participant {p}: classes are unbalanced ({n0} rest, {n1} imagined)")));
        }
        let mut seed_rows = Vec::new();
        for &seed in seeds {
            let accs = cross_validate(&sub, folds, seed, cfg)?;
            for (fold, &accuracy) in accs.iter().enumerate() {
                table.folds.push(FoldAccuracy { participant: p.clone(), seed, fold, accuracy });
            }
            let best = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            seed_rows.push(SeedSummary { participant: p.clone(), seed, best, mean });
        }
        let k = seed_rows.len() as f64;
        table.participants.push(ParticipantSummary {
            participant: p.clone(),
            n_trials: sub.len(),
            average_best: seed_rows.iter().map(|s| s.best).sum::<f64>() / k,
            average_mean: seed_rows.iter().map(|s| s.mean).sum::<f64>() / k,
            seeds: seed_rows,
            p_value: None,
        });
    }
    Ok(table)
}

/// Label-permutation p-value: (1 + #{permuted ≥ observed}) / (1 + n_perms).
/// Labels are shuffled within participant; each permutation is scored by
/// the mean fold accuracy of one cross-validation pass.
pub fn perm_pvalue(
    data: &DetectionDataset,
    observed: f64,
    n_perms: usize,
    folds: usize,
    cfg: &ExtraTreesConfig,
    seed: u64,
) -> Result<f64> {
    if n_perms < 100 {
        return Err(Error::config(format!("permutation test needs at least 100 permutations, got {n_perms}")));
    }
    let null = permutation_null(data, n_perms, folds, cfg, seed)?;
    Ok(pvalue_from_null(&null, observed))
}

/// Mean CV accuracies of `n_perms` within-participant label shuffles.
pub fn permutation_null(data: &DetectionDataset, n_perms: usize, folds: usize, cfg: &ExtraTreesConfig, seed: u64) -> Result<Vec<f64>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in data.participants.iter().enumerate() {
        groups.entry(p.as_str()).or_default().push(i);
    }
    (0..n_perms)
        .map(|k| {
            let mut rng = derived_rng(seed, &[streams::DETECT, 3, k as u64]);
            let mut shuffled = data.clone();
            for members in groups.values() {
                let mut labels: Vec<u8> = members.iter().map(|&i| data.labels[i]).collect();
                labels.shuffle(&mut rng);
                for (&i, l) in members.iter().zip(labels) {
                    shuffled.labels[i] = l;
                }
            }
            let accs = cross_validate(&shuffled, folds, derived_rng_seed(seed, k), cfg)?;
            Ok(accs.iter().sum::<f64>() / accs.len() as f64)
        })
        .collect()
}

fn derived_rng_seed(seed: u64, k: usize) -> u64 {
    crate::rng::derive_seed(seed, &[streams::DETECT, 4, k as u64])
}

pub fn pvalue_from_null(null: &[f64], observed: f64) -> f64 {
    let count = null.iter().filter(|&&a| a >= observed).count();
    (1 + count) as f64 / (1 + null.len()) as f64
}
