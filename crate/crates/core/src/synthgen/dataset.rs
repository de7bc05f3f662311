//! On-disk dataset layout.
//!
//! ```text
//! <dataset>/<participant>/manifest.json
//! <dataset>/<participant>/semantic_map.json
//! <dataset>/<participant>/run_000/{events.csv, raw.f32, sentences.tsv}
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Schedule;
use crate::error::{Error, Result};
use crate::io;
use crate::synthgen::montage::Montage;
use crate::synthgen::render::{RawRecording, RenderSpec, RunIds};
use crate::synthgen::semantic::SemanticMap;

pub const MANIFEST_VERSION: u32 = 1;
pub const SEMANTIC_MAP_FILE: &str = "semantic_map.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run: usize,
    pub session: usize,
    pub dir: String,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config_hash: String,
    pub participant: String,
    pub seed: u64,
    pub montage: Montage,
    pub render: RenderSpec,
    pub semantic_map_file: String,
    pub runs: Vec<RunEntry>,
}

impl Manifest {
    pub fn load(participant_dir: &Path) -> Result<Self> {
        let m: Manifest = io::read_json(&participant_dir.join("manifest.json"))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::data(format!("manifest version {} is not supported", m.version)));
        }
        m.montage.validate()?;
        Ok(m)
    }

    pub fn save(&self, participant_dir: &Path) -> Result<()> {
        io::write_json(&participant_dir.join("manifest.json"), self)
    }

    pub fn semantic_map(&self, participant_dir: &Path) -> Result<SemanticMap> {
        let m: SemanticMap = io::read_json(&participant_dir.join(&self.semantic_map_file))?;
        m.validate()?;
        Ok(m)
    }
}

pub fn run_dir_name(run: usize) -> String {
    format!("run_{run:03}")
}

pub fn sentences_to_tsv(sentences: &BTreeMap<usize, String>) -> String {
    let mut out = String::from("event\tsentence\n");
    for (k, v) in sentences {
        let _ = writeln!(out, "{k}\t{v}");
    }
    out
}

pub fn sentences_from_tsv(text: &str) -> Result<BTreeMap<usize, String>> {
    let mut lines = text.lines();
    if lines.next() != Some("event\tsentence") {
        return Err(Error::data("sentences.tsv: missing 'event<TAB>sentence' header"));
    }
    let mut out = BTreeMap::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let (k, v) = line
            .split_once('\t')
            .ok_or_else(|| Error::data(format!("sentences.tsv line {}: no tab", n + 2)))?;
        let k: usize = k
            .parse()
            .map_err(|_| Error::data(format!("sentences.tsv line {}: bad event index '{k}'", n + 2)))?;
        out.insert(k, v.to_string());
    }
    Ok(out)
}

pub fn write_run(participant_dir: &Path, raw: &RawRecording) -> Result<RunEntry> {
    let name = run_dir_name(raw.ids.run);
    let dir = participant_dir.join(&name);
    io::write_text(&dir.join("events.csv"), &raw.events.to_csv())?;
    io::write_f32_matrix(&dir.join("raw.f32"), &raw.data)?;
    io::write_text(&dir.join("sentences.tsv"), &sentences_to_tsv(&raw.sentences))?;
    Ok(RunEntry { run: raw.ids.run, session: raw.ids.session, dir: name, n_samples: raw.data.nrows() })
}

pub fn read_run(participant_dir: &Path, manifest: &Manifest, entry: &RunEntry) -> Result<RawRecording> {
    let dir = participant_dir.join(&entry.dir);
    let data = io::read_f32_matrix(&dir.join("raw.f32"), manifest.montage.n_channels())?;
    if data.nrows() != entry.n_samples {
        return Err(Error::data(format!(
            "{}: {} samples on disk, manifest says {}",
            dir.display(),
            data.nrows(),
            entry.n_samples
        )));
    }
    let events = Schedule::from_csv(&io::read_text(&dir.join("events.csv"))?)?;
    let sentences = sentences_from_tsv(&io::read_text(&dir.join("sentences.tsv"))?)?;
    Ok(RawRecording {
        sfreq: manifest.render.sfreq,
        data,
        events,
        sentences,
        ids: RunIds { participant: manifest.participant.clone(), session: entry.session, run: entry.run },
    })
}

/// Participant directories of a dataset, sorted by name.
pub fn participant_dirs(dataset: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dataset).map_err(|e| Error::io(dataset, e))? {
        let entry = entry.map_err(|e| Error::io(dataset, e))?;
        if entry.path().join("manifest.json").is_file() {
            out.push(entry.path());
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::data(format!("{} contains no participant manifests", dataset.display())));
    }
    Ok(out)
}
