//! Forward model: schedule + sentences → raw two-wavelength intensities.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{EventKind, Schedule};
use crate::error::{Error, Result};
use crate::rng::{derived_rng, streams};
use crate::synthgen::hrf::{response_kernel, HrfParams};
use crate::synthgen::montage::{Montage, WAVELENGTHS};
use crate::synthgen::optics::ExtinctionTable;
use crate::synthgen::semantic::{SemanticMap, SentenceVectorizer};

/// Additive nuisance components, all in optical-density units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub white_sd: f64,
    pub cardiac_amplitude: f64,
    pub cardiac_hz: f64,
    pub respiratory_amplitude: f64,
    pub respiratory_hz: f64,
    pub mayer_amplitude: f64,
    pub mayer_hz: f64,
    /// Maximum absolute drift slope, OD per second.
    pub drift_slope: f64,
    /// Expected motion spikes per minute.
    pub spike_rate_per_min: f64,
    pub spike_magnitude: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            white_sd: 0.004,
            cardiac_amplitude: 0.01,
            cardiac_hz: 1.0,
            respiratory_amplitude: 0.006,
            respiratory_hz: 0.25,
            mayer_amplitude: 0.006,
            mayer_hz: 0.1,
            drift_slope: 1e-4,
            spike_rate_per_min: 0.5,
            spike_magnitude: 0.15,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig {
            white_sd: 0.0,
            cardiac_amplitude: 0.0,
            respiratory_amplitude: 0.0,
            mayer_amplitude: 0.0,
            drift_slope: 0.0,
            spike_rate_per_min: 0.0,
            spike_magnitude: 0.0,
            ..Default::default()
        }
    }

    /// Every amplitude multiplied by `factor`; frequencies and spike rate kept.
    pub fn scaled(&self, factor: f64) -> Self {
        NoiseConfig {
            white_sd: self.white_sd * factor,
            cardiac_amplitude: self.cardiac_amplitude * factor,
            respiratory_amplitude: self.respiratory_amplitude * factor,
            mayer_amplitude: self.mayer_amplitude * factor,
            drift_slope: self.drift_slope * factor,
            spike_magnitude: self.spike_magnitude * factor,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.white_sd,
            self.cardiac_amplitude,
            self.respiratory_amplitude,
            self.mayer_amplitude,
            self.drift_slope,
            self.spike_rate_per_min,
            self.spike_magnitude,
            self.cardiac_hz,
            self.respiratory_hz,
            self.mayer_hz,
        ];
        if fields.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::config("noise amplitudes, rates and frequencies must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Everything about the forward model that is not the schedule or the map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub sfreq: f64,
    pub ppf: f64,
    pub hrf: HrfParams,
    pub noise: NoiseConfig,
    pub extinction: ExtinctionTable,
    /// Recording continues this long after the last event so the final
    /// epochs fit.
    pub post_run_padding_s: f64,
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec {
            sfreq: 5.9,
            ppf: 6.0,
            hrf: HrfParams::default(),
            noise: NoiseConfig::default(),
            extinction: ExtinctionTable::shipped(),
            post_run_padding_s: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunIds {
    pub participant: String,
    pub session: usize,
    pub run: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub sfreq: f64,
    /// Intensities [samples × channels]; values are exactly representable
    /// as f32 so the on-disk format is lossless.
    pub data: Array2<f64>,
    /// Single-run schedule with onsets relative to the first sample.
    pub events: Schedule,
    /// Ground truth keyed by event index in `events`.
    pub sentences: BTreeMap<usize, String>,
    pub ids: RunIds,
}

/// Noise-free haemodynamics of one run, [samples × 194] each, µM.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectedHaemo {
    pub hbo: Array2<f64>,
    pub hbr: Array2<f64>,
}

pub fn n_samples(duration_s: f64, sfreq: f64) -> usize {
    (duration_s * sfreq).ceil() as usize
}

/// ΔHbO/ΔHbR that the forward model injects for this run.
pub fn injected_haemo(
    schedule: &Schedule,
    sentences: &BTreeMap<usize, String>,
    vectorizer: &dyn SentenceVectorizer,
    semmap: &SemanticMap,
    spec: &RenderSpec,
) -> Result<InjectedHaemo> {
    if schedule.runs.len() != 1 {
        return Err(Error::data(format!("render expects a single-run schedule, got {} runs", schedule.runs.len())));
    }
    if !(spec.sfreq > 0.0) {
        return Err(Error::config(format!("sampling rate must be positive, got {}", spec.sfreq)));
    }
    let dt = 1.0 / spec.sfreq;
    let n = n_samples(schedule.total_duration() + spec.post_run_padding_s, spec.sfreq);
    let kernel = response_kernel(dt, &spec.hrf)?;
    let n_pairs = semmap.loadings.len() / semmap.width;
    let mut hbo = Array2::<f64>::zeros((n, n_pairs));
    for (idx, ev) in schedule.imagine_events() {
        let sentence = sentences
            .get(&idx)
            .ok_or_else(|| Error::data(format!("imagine event {idx} has no sentence")))?;
        let amps = semmap.amplitudes(&vectorizer.sentence_vector(sentence)?)?;
        let boxcar: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 * dt;
                if t >= ev.onset && t < ev.end() { 1.0 } else { 0.0 }
            })
            .collect();
        let first = boxcar.iter().position(|&b| b > 0.0).unwrap_or(n);
        let mut response = vec![0.0; n];
        for (i, r) in response.iter_mut().enumerate().skip(first) {
            let lo = i.saturating_sub(kernel.len() - 1).max(first);
            *r = (lo..=i).map(|j| boxcar[j] * kernel[i - j]).sum::<f64>() * dt;
        }
        for (i, r) in response.iter().enumerate() {
            if *r != 0.0 {
                for (p, a) in amps.iter().enumerate() {
                    hbo[[i, p]] += r * a;
                }
            }
        }
    }
    let hbr = hbo.mapv(|v| -spec.hrf.hbr_ratio * v);
    Ok(InjectedHaemo { hbo, hbr })
}

/// Renders one run. Deterministic in (inputs, seed, ids.run).
#[allow(clippy::too_many_arguments)]
pub fn render_run(
    schedule: &Schedule,
    sentences: &BTreeMap<usize, String>,
    vectorizer: &dyn SentenceVectorizer,
    semmap: &SemanticMap,
    montage: &Montage,
    spec: &RenderSpec,
    seed: u64,
    ids: RunIds,
) -> Result<RawRecording> {
    spec.noise.validate()?;
    let injected = injected_haemo(schedule, sentences, vectorizer, semmap, spec)?;
    let (n, _) = injected.hbo.dim();
    let pairs = montage.long_pairs()?;
    if pairs.len() != injected.hbo.ncols() {
        return Err(Error::data(format!(
            "montage has {} long pairs but the semantic map covers {}",
            pairs.len(),
            injected.hbo.ncols()
        )));
    }
    let n_ch = montage.n_channels();
    let mut od = Array2::<f64>::zeros((n, n_ch));
    for (p, pair) in pairs.iter().enumerate() {
        let a = spec.extinction.path_matrix(WAVELENGTHS, pair.distance_mm, spec.ppf)?;
        for i in 0..n {
            let (o, r) = (injected.hbo[[i, p]], injected.hbr[[i, p]]);
            od[[i, pair.channels[0]]] = a[0][0] * o + a[0][1] * r;
            od[[i, pair.channels[1]]] = a[1][0] * o + a[1][1] * r;
        }
    }

    let mut rng = derived_rng(seed, &[streams::RENDER, ids.run as u64]);
    let noise = &spec.noise;
    let dt = 1.0 / spec.sfreq;
    let phases: [f64; 3] = [rng.gen::<f64>() * 2.0 * PI, rng.gen::<f64>() * 2.0 * PI, rng.gen::<f64>() * 2.0 * PI];
    let physio: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            noise.cardiac_amplitude * (2.0 * PI * noise.cardiac_hz * t + phases[0]).sin()
                + noise.respiratory_amplitude * (2.0 * PI * noise.respiratory_hz * t + phases[1]).sin()
                + noise.mayer_amplitude * (2.0 * PI * noise.mayer_hz * t + phases[2]).sin()
        })
        .collect();
    let baseline: Vec<f64> = (0..n_ch).map(|_| rng.gen_range(0.5..2.0)).collect();
    for c in 0..n_ch {
        let coupling = rng.gen_range(0.8..1.2);
        let slope = noise.drift_slope * rng.gen_range(-1.0..1.0);
        for i in 0..n {
            od[[i, c]] += coupling * physio[i] + slope * i as f64 * dt;
        }
    }
    // Motion: short bursts hitting a random tenth of the channels.
    let duration_min = n as f64 * dt / 60.0;
    let expected = noise.spike_rate_per_min * duration_min;
    let n_spikes = if expected > 0.0 { poisson(&mut rng, expected) } else { 0 };
    for _ in 0..n_spikes {
        let at = rng.gen_range(0..n);
        let width = rng.gen_range(1..=3usize);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        for c in 0..n_ch {
            if rng.gen::<f64>() < 0.1 {
                for i in at..(at + width).min(n) {
                    od[[i, c]] += sign * noise.spike_magnitude;
                }
            }
        }
    }
    if noise.white_sd > 0.0 {
        let normal = Normal::new(0.0, noise.white_sd).map_err(|e| Error::config(e.to_string()))?;
        od.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    let mut data = Array2::<f64>::zeros((n, n_ch));
    for ((i, c), v) in data.indexed_iter_mut() {
        *v = (baseline[c] * (-od[[i, c]]).exp()) as f32 as f64;
    }
    Ok(RawRecording {
        sfreq: spec.sfreq,
        data,
        events: schedule.clone(),
        sentences: sentences.clone(),
        ids,
    })
}

fn poisson(rng: &mut crate::rng::Rng, lambda: f64) -> usize {
    if lambda > 30.0 {
        let x: f64 = rng.sample(StandardNormal);
        return (lambda + lambda.sqrt() * x).round().max(0.0) as usize;
    }
    let limit = (-lambda).exp();
    let mut k = 0;
    let mut p = rng.gen::<f64>();
    while p > limit {
        k += 1;
        p *= rng.gen::<f64>();
    }
    k
}

/// Sample index range [start, end) of each imagine event.
pub fn event_samples(schedule: &Schedule, sfreq: f64) -> Vec<(usize, usize, usize)> {
    schedule
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == EventKind::Imagine)
        .map(|(i, e)| (i, (e.onset * sfreq).ceil() as usize, (e.end() * sfreq).ceil() as usize))
        .collect()
}
