//! Run configuration: one TOML file, every key optional.
//!
//! Defaults follow the published protocol where it states a value (7 s
//! epochs, 6 s delay, 0.01-0.7 Hz band, ppf 6, 5 FIR delays at 0.5 Hz,
//! hidden 100, dropout 0.3, learning rates 1e-3 / 1e-4, batch 8, patience
//! 10, 50 epochs, clip 10, 200 test / 100 fine-tune trials, 80/20 split)
//! and are calibration choices for the synthetic generator otherwise.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::{ExtraTreesConfig, TABLE_SEEDS};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::glm::{ContrastParams, FirParams};
use crate::lm::LmTrainConfig;
use crate::sigproc::PreprocParams;
use crate::synthgen::{HrfParams, NoiseConfig};
use crate::training::{PretrainConfig, SplitSizes, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Root of every artifact the pipeline writes.
    pub workdir: PathBuf,
    /// LM checkpoint; `<workdir>/lm.ckpt` when unset. Trained on first use
    /// if the file does not exist.
    pub lm_checkpoint: Option<PathBuf>,
    /// Topic list replacing the shipped one.
    pub topics: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { workdir: PathBuf::from("nirtext-out"), lm_checkpoint: None, topics: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub participants: usize,
    pub runs: usize,
    /// Consecutive runs grouped into one session (z-scoring unit).
    pub runs_per_session: usize,
    pub sfreq: f64,
    /// Multiplies every noise amplitude; lower is higher SNR.
    pub noise_scale: f64,
    pub noise: NoiseConfig,
    pub hrf: HrfParams,
    pub post_run_padding_s: f64,
    /// Long pairs carrying task and semantic signal.
    pub active_pairs: usize,
    /// µM per unit loading of the (unit) sentence vector.
    pub semantic_amplitude: f64,
    /// µM added to active pairs during every imagery trial.
    pub task_amplitude: f64,
    pub length_bias: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            participants: 4,
            runs: 90,
            runs_per_session: 10,
            sfreq: 5.9,
            noise_scale: 1.0,
            noise: NoiseConfig::default(),
            hrf: HrfParams::default(),
            post_run_padding_s: 15.0,
            active_pairs: 120,
            semantic_amplitude: 1.0,
            task_amplitude: 0.5,
            length_bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpochConfig {
    /// Fixed delay applied to every participant; `delay` reports the FIR
    /// estimate but does not override this.
    pub delay_s: f64,
    pub window_s: f64,
}

impl Default for EpochConfig {
    fn default() -> Self {
        EpochConfig { delay_s: 6.0, window_s: 7.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlmConfig {
    pub fir: FirParams,
    pub contrast: ContrastParams,
    /// Runs per participant entering the activation contrast.
    pub contrast_runs: usize,
}

impl Default for GlmConfig {
    fn default() -> Self {
        GlmConfig { fir: FirParams::default(), contrast: ContrastParams::default(), contrast_runs: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    /// Independent of the top-level seed so one LM serves every dataset.
    pub seed: u64,
    pub train: LmTrainConfig,
}

impl Default for LmSection {
    fn default() -> Self {
        LmSection { seed: 1, train: LmTrainConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub split: SplitSizes,
    /// Ridge penalty of the cross-participant alignment, on z-scored channels.
    pub align_lambda: f64,
    pub max_new_tokens: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            split: SplitSizes::default(),
            align_lambda: 100.0,
            max_new_tokens: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub folds: usize,
    pub seeds: Vec<u64>,
    pub n_perms: usize,
    pub window_s: f64,
    pub trees: ExtraTreesConfig,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig { folds: 3, seeds: TABLE_SEEDS.to_vec(), n_perms: 1000, window_s: 7.0, trees: ExtraTreesConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub dataset: DatasetConfig,
    pub preprocess: PreprocParams,
    pub epochs: EpochConfig,
    pub glm: GlmConfig,
    pub lm: LmSection,
    pub model: ModelConfig,
    pub detect: DetectConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            paths: Paths::default(),
            dataset: DatasetConfig::default(),
            preprocess: PreprocParams::default(),
            epochs: EpochConfig::default(),
            glm: GlmConfig::default(),
            lm: LmSection::default(),
            model: ModelConfig::default(),
            detect: DetectConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&crate::io::read_text(path)?)
    }

    /// Applies `section.key=value` overrides; values parse as TOML
    /// (numbers, booleans, arrays) and fall back to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table = toml::from_str(&self.to_toml()?).map_err(|e| Error::config(format!("config: {e}")))?;
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| Error::config(format!("override '{o}' is not key=value")))?;
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            let parts: Vec<&str> = key.trim().split('.').collect();
            let (last, parents) = parts.split_last().expect("split yields one part");
            let mut table = &mut root;
            for part in parents {
                table = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::config(format!("override '{key}': '{part}' is not a section")))?;
            }
            table.insert(last.to_string(), value);
        }
        let text = toml::to_string(&root).map_err(|e| Error::config(format!("config: {e}")))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("config: {e}")))
    }

    /// sha256 of the canonical TOML with `paths` reset, so moving the
    /// working directory does not change the hash.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.paths = Paths::default();
        Ok(hex::encode(Sha256::digest(c.to_toml()?.as_bytes())))
    }

    /// Hash of the settings the LM depends on (its own section and the topics).
    pub fn lm_hash(&self) -> Result<String> {
        let key = toml::to_string(&self.lm).map_err(|e| Error::config(format!("config: {e}")))?;
        let topics = match &self.paths.topics {
            Some(p) => crate::io::read_text(p)?,
            None => String::new(),
        };
        Ok(hex::encode(Sha256::digest(format!("{key}\n{topics}").as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.participants == 0 || d.runs == 0 || d.runs_per_session == 0 {
            return Err(Error::config("dataset participants, runs and runs_per_session must be positive"));
        }
        if d.participants > 99 {
            return Err(Error::config("at most 99 participants are supported"));
        }
        if !(d.sfreq > 0.0) || !(d.noise_scale >= 0.0) || !(d.post_run_padding_s >= 0.0) {
            return Err(Error::config("dataset sfreq must be positive; noise_scale and padding non-negative"));
        }
        d.noise.validate()?;
        d.hrf.validate()?;
        if !(self.epochs.delay_s >= 0.0) || !(self.epochs.window_s > 0.0) {
            return Err(Error::config("epoch delay must be non-negative and the window positive"));
        }
        self.glm.fir.validate()?;
        if self.glm.contrast_runs == 0 {
            return Err(Error::config("glm contrast_runs must be positive"));
        }
        let m = &self.model;
        m.encoder.validate()?;
        if m.encoder.output_width != self.lm.train.model.embed_dim {
            return Err(Error::config(format!(
                "encoder output width {} must equal the LM embedding width {}",
                m.encoder.output_width, self.lm.train.model.embed_dim
            )));
        }
        if !(m.align_lambda >= 0.0) || m.max_new_tokens == 0 {
            return Err(Error::config("align_lambda must be non-negative and max_new_tokens positive"));
        }
        let t = &self.detect;
        if t.folds < 2 || t.seeds.is_empty() || t.n_perms < 100 || !(t.window_s > 0.0) {
            return Err(Error::config("detect needs folds ≥ 2, at least one seed, n_perms ≥ 100 and a positive window"));
        }
        Ok(())
    }

    pub fn participant_ids(&self) -> Vec<String> {
        (1..=self.dataset.participants).map(participant_id).collect()
    }

    pub fn lm_path(&self) -> PathBuf {
        self.paths.lm_checkpoint.clone().unwrap_or_else(|| self.paths.workdir.join("lm.ckpt"))
    }
}

/// `p01`, `p02`, ...
pub fn participant_id(n: usize) -> String {
    format!("p{n:02}")
}

/// Accepts `3`, `03` or `p03`.
pub fn parse_participant(s: &str) -> Result<String> {
    let digits = s.strip_prefix('p').unwrap_or(s);
    let n: usize = digits.parse().map_err(|_| Error::config(format!("participant '{s}' is not a number or pNN id")))?;
    if n == 0 {
        return Err(Error::config("participants are numbered from 1"));
    }
    Ok(participant_id(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
        assert_eq!(c.hash().unwrap().len(), 64);
    }

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
        let c = RunConfig::from_toml("seed = 3\n[dataset]\nruns = 12\n").unwrap();
        assert_eq!((c.seed, c.dataset.runs, c.dataset.participants), (3, 12, 4));
    }

    #[test]
    fn published_constants() {
        let c = RunConfig::default();
        assert_eq!((c.epochs.window_s, c.epochs.delay_s, c.dataset.sfreq), (7.0, 6.0, 5.9));
        assert_eq!((c.preprocess.band_lo, c.preprocess.band_hi, c.preprocess.ppf), (0.01, 0.7, 6.0));
        assert_eq!((c.glm.fir.n_delays, c.glm.fir.frame_hz), (5, 0.5));
        assert_eq!((c.model.encoder.input_channels, c.model.encoder.hidden, c.model.encoder.dropout), (388, 100, 0.3));
        assert_eq!((c.model.pretrain.lr, c.model.pretrain.epochs), (1e-3, 10));
        let t = c.model.train;
        assert_eq!((t.lr, t.batch_size, t.patience, t.max_epochs, t.clip_norm), (1e-4, 8, 10, 50, 10.0));
        assert_eq!((c.model.split.test, c.model.split.finetune, c.model.split.val_fraction), (200, 100, 0.2));
        assert_eq!(c.model.max_new_tokens, 32);
    }

    #[test]
    fn hash_ignores_paths_but_not_values() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.workdir = "/elsewhere".into();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("[dataset]\nparticipants = 0\n").is_err());
        assert!(RunConfig::from_toml("[detect]\nn_perms = 10\n").is_err());
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
        let e = RunConfig::from_toml("[model.encoder]\noutput_width = 32\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn overrides_win() {
        let c = RunConfig::default()
            .with_overrides(&["dataset.runs=12".into(), "detect.seeds=[1, 2]".into(), "paths.workdir=/tmp/x".into()])
            .unwrap();
        assert_eq!(c.dataset.runs, 12);
        assert_eq!(c.detect.seeds, [1, 2]);
        assert_eq!(c.paths.workdir, PathBuf::from("/tmp/x"));
        assert!(RunConfig::default().with_overrides(&["dataset.nope=1".into()]).is_err());
        assert!(RunConfig::default().with_overrides(&["seed".into()]).is_err());
    }

    #[test]
    fn participant_ids() {
        assert_eq!(parse_participant("1").unwrap(), "p01");
        assert_eq!(parse_participant("p12").unwrap(), "p12");
        assert!(parse_participant("x").is_err());
        assert!(parse_participant("0").is_err());
        assert_eq!(RunConfig::default().participant_ids(), ["p01", "p02", "p03", "p04"]);
    }
}
