//! Raw intensities → optical density → haemoglobin, and trial epochs.
//!
//! The chain runs in a fixed order: OD, detrend, short-channel regression,
//! motion correction, Beer-Lambert, band-pass. Every step appends itself to
//! the series provenance.

pub mod epochs;
pub mod filter;
pub mod motion;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::io;
use crate::synthgen::{Channel, ExtinctionTable, Montage, PairIndex, RawRecording, WAVELENGTHS};

pub use epochs::{epoch_trials, n_epoch_samples, zscore_by_session, TrialExample, ZscoreReport};
pub use filter::BandPass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceStep {
    pub step: String,
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdSeries {
    pub sfreq: f64,
    /// [samples × channels].
    pub data: Array2<f64>,
    pub channels: Vec<Channel>,
    pub provenance: Vec<ProvenanceStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaemoSeries {
    pub sfreq: f64,
    /// [samples × 2P]: HbO of every long pair, then HbR in the same order. µM.
    pub data: Array2<f64>,
    pub provenance: Vec<ProvenanceStep>,
}

impl OdSeries {
    fn push(&mut self, step: &str, params: serde_json::Value) {
        self.provenance.push(ProvenanceStep { step: step.into(), params });
    }

    pub fn select(&self, idx: &[usize]) -> OdSeries {
        OdSeries {
            sfreq: self.sfreq,
            data: self.data.select(Axis(1), idx),
            channels: idx.iter().map(|&i| self.channels[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }

    fn split(&self) -> (Vec<usize>, Vec<usize>) {
        let long = (0..self.channels.len()).filter(|&i| !self.channels[i].is_short).collect();
        let short = (0..self.channels.len()).filter(|&i| self.channels[i].is_short).collect();
        (long, short)
    }
}

impl HaemoSeries {
    pub fn n_pairs(&self) -> usize {
        self.data.ncols() / 2
    }

    pub fn hbo(&self) -> ndarray::ArrayView2<'_, f64> {
        self.data.slice(ndarray::s![.., ..self.n_pairs()])
    }

    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        io::write_f32_matrix(&dir.join("haemo.f32"), &self.data)?;
        io::write_json(&dir.join("provenance.json"), &json!({ "sfreq": self.sfreq, "steps": self.provenance }))
    }

    pub fn load(dir: &std::path::Path, n_cols: usize) -> Result<Self> {
        let data = io::read_f32_matrix(&dir.join("haemo.f32"), n_cols)?;
        #[derive(Deserialize)]
        struct Prov {
            sfreq: f64,
            steps: Vec<ProvenanceStep>,
        }
        let p: Prov = io::read_json(&dir.join("provenance.json"))?;
        Ok(HaemoSeries { sfreq: p.sfreq, data, provenance: p.steps })
    }
}

/// OD(t) = −ln(I(t)/Ī) with Ī the channel's run mean.
pub fn to_optical_density(raw: &RawRecording, montage: &Montage) -> Result<OdSeries> {
    let (n, c) = raw.data.dim();
    if c != montage.n_channels() {
        return Err(Error::data(format!("recording has {c} channels, montage {}", montage.n_channels())));
    }
    if n == 0 {
        return Err(Error::data("recording has no samples"));
    }
    let mut data = Array2::<f64>::zeros((n, c));
    for (j, col) in raw.data.columns().into_iter().enumerate() {
        if let Some(i) = col.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::data(format!(
                "non-positive intensity {} at channel {j}, sample {i}",
                col[i]
            )));
        }
        let mean = col.sum() / n as f64;
        for (i, v) in col.iter().enumerate() {
            data[[i, j]] = -(v / mean).ln();
        }
    }
    Ok(OdSeries {
        sfreq: raw.sfreq,
        data,
        channels: montage.channels.clone(),
        provenance: vec![ProvenanceStep { step: "optical_density".into(), params: json!({ "baseline": "run_mean" }) }],
    })
}

/// Least-squares line removed from every column.
pub fn detrend_matrix(m: &mut Array2<f64>) -> Result<()> {
    let n = m.nrows();
    if n < 3 {
        return Err(Error::data(format!("detrend needs at least 3 samples, got {n}")));
    }
    let tm = (n - 1) as f64 / 2.0;
    let stt: f64 = (0..n).map(|i| (i as f64 - tm).powi(2)).sum();
    for mut col in m.columns_mut() {
        let mean = col.sum() / n as f64;
        let slope = col.iter().enumerate().map(|(i, v)| (i as f64 - tm) * (v - mean)).sum::<f64>() / stt;
        for (i, v) in col.iter_mut().enumerate() {
            *v -= mean + slope * (i as f64 - tm);
        }
    }
    Ok(())
}

pub fn detrend(series: &OdSeries) -> Result<OdSeries> {
    let mut out = series.clone();
    detrend_matrix(&mut out.data)?;
    out.push("detrend", json!({ "order": 1 }));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionParams {
    pub z_thresh: f64,
    pub window_s: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        MotionParams { z_thresh: 5.0, window_s: 5.0 }
    }
}

pub fn motion_correct(series: &OdSeries, params: MotionParams) -> Result<OdSeries> {
    if !(params.z_thresh > 0.0) || !(params.window_s > 0.0) {
        return Err(Error::config("motion z threshold and window must be positive"));
    }
    let window = ((params.window_s * series.sfreq).round() as usize).max(3) | 1;
    let mut out = series.clone();
    let mut corrected = 0usize;
    for mut col in out.data.columns_mut() {
        let mut x = col.to_vec();
        let flags = motion::detect_spikes(&x, params.z_thresh, window);
        let k = motion::repair(&mut x, &flags);
        if k > 0 {
            corrected += k;
            col.iter_mut().zip(x).for_each(|(c, v)| *c = v);
        }
    }
    out.push(
        "motion_correct",
        json!({ "z_thresh": params.z_thresh, "window_samples": window, "corrected_samples": corrected }),
    );
    Ok(out)
}

/// Regresses the across-short-channel mean out of every long channel. The
/// slope comes from centred covariances, so outputs are uncorrelated with
/// the short average.
pub fn short_channel_regress(long: &OdSeries, short: &OdSeries) -> Result<OdSeries> {
    if short.data.ncols() == 0 {
        return Err(Error::data("short-channel regression needs at least one short channel"));
    }
    let n = long.data.nrows();
    if short.data.nrows() < n {
        return Err(Error::data(format!(
            "short series has {} samples, long series {n}",
            short.data.nrows()
        )));
    }
    let avg: Vec<f64> = (0..n).map(|i| short.data.row(i).mean().unwrap_or(0.0)).collect();
    let s_mean = avg.iter().sum::<f64>() / n as f64;
    let sc: Vec<f64> = avg.iter().map(|v| v - s_mean).collect();
    let sss: f64 = sc.iter().map(|v| v * v).sum();
    let mut out = long.clone();
    let skipped = !(sss > 0.0);
    if !skipped {
        for mut col in out.data.columns_mut() {
            let m = col.sum() / n as f64;
            let beta = col.iter().zip(&sc).map(|(x, s)| (x - m) * s).sum::<f64>() / sss;
            col.iter_mut().zip(&avg).for_each(|(x, s)| *x -= beta * s);
        }
    }
    out.push(
        "short_channel_regression",
        json!({ "n_short": short.data.ncols(), "skipped_zero_variance": skipped }),
    );
    Ok(out)
}

/// Applies [`short_channel_regress`] to the long channels of a full series,
/// leaving the short channels untouched.
pub fn regress_short_channels(series: &OdSeries) -> Result<OdSeries> {
    let (long_idx, short_idx) = series.split();
    let cleaned = short_channel_regress(&series.select(&long_idx), &series.select(&short_idx))?;
    let mut out = series.clone();
    for (k, &j) in long_idx.iter().enumerate() {
        out.data.column_mut(j).assign(&cleaned.data.column(k));
    }
    out.provenance = cleaned.provenance;
    Ok(out)
}

/// Inverts the modified Beer-Lambert law for the given pairs: [n × 2P],
/// HbO columns first.
pub fn invert_pairs(od: &OdSeries, pairs: &[PairIndex], ppf: f64, table: &ExtinctionTable) -> Result<Array2<f64>> {
    if !(ppf > 0.0) {
        return Err(Error::config(format!("ppf must be positive, got {ppf}")));
    }
    let n = od.data.nrows();
    let np = pairs.len();
    let mut data = Array2::<f64>::zeros((n, 2 * np));
    for (p, pair) in pairs.iter().enumerate() {
        let a = table.path_matrix(WAVELENGTHS, pair.distance_mm, ppf)?;
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let norm = a.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
        if !(det.abs() > 1e-12 * norm * norm) {
            return Err(Error::numerical(format!("extinction matrix is singular for pair {p}")));
        }
        let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
        for i in 0..n {
            let (d0, d1) = (od.data[[i, pair.channels[0]]], od.data[[i, pair.channels[1]]]);
            data[[i, p]] = inv[0][0] * d0 + inv[0][1] * d1;
            data[[i, np + p]] = inv[1][0] * d0 + inv[1][1] * d1;
        }
    }
    Ok(data)
}

/// Inverts the modified Beer-Lambert law per long source-detector pair.
pub fn beer_lambert(od: &OdSeries, montage: &Montage, ppf: f64, table: &ExtinctionTable) -> Result<HaemoSeries> {
    if od.channels.len() != montage.n_channels() {
        return Err(Error::data("optical density channels do not match the montage"));
    }
    let pairs = Montage { channels: od.channels.clone() }.long_pairs()?;
    let data = invert_pairs(od, &pairs, ppf, table)?;
    let mut provenance = od.provenance.clone();
    provenance.push(ProvenanceStep {
        step: "beer_lambert".into(),
        params: json!({ "ppf": ppf, "units": "uM", "wavelengths_nm": WAVELENGTHS }),
    });
    Ok(HaemoSeries { sfreq: od.sfreq, data, provenance })
}

/// Mean HbO and HbR over the short pairs, µM.
pub fn short_haemo_average(od: &OdSeries, ppf: f64, table: &ExtinctionTable) -> Result<(Vec<f64>, Vec<f64>)> {
    let pairs = Montage { channels: od.channels.clone() }.short_pairs()?;
    if pairs.is_empty() {
        return Err(Error::data("montage has no short channels"));
    }
    let h = invert_pairs(od, &pairs, ppf, table)?;
    let np = pairs.len();
    let avg = |off: usize| -> Vec<f64> {
        h.rows().into_iter().map(|r| r.iter().skip(off).take(np).sum::<f64>() / np as f64).collect()
    };
    Ok((avg(0), avg(np)))
}

pub fn bandpass(haemo: &HaemoSeries, lo: f64, hi: f64, order: usize) -> Result<HaemoSeries> {
    let bp = BandPass::design(lo, hi, order, haemo.sfreq)?;
    let mut out = haemo.clone();
    for mut col in out.data.columns_mut() {
        let y = bp.filtfilt(&col.to_vec())?;
        col.iter_mut().zip(y).for_each(|(c, v)| *c = v);
    }
    out.provenance.push(ProvenanceStep {
        step: "bandpass".into(),
        params: json!({
            "lo_hz": lo, "hi_hz": hi, "order": order,
            "family": "butterworth", "zero_phase": true, "sections": bp.sections.len(),
        }),
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocParams {
    pub ppf: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    pub filter_order: usize,
    pub motion: MotionParams,
}

impl Default for PreprocParams {
    fn default() -> Self {
        PreprocParams { ppf: 6.0, band_lo: 0.01, band_hi: 0.7, filter_order: 4, motion: MotionParams::default() }
    }
}

pub const PIPELINE_ORDER: [&str; 6] =
    ["optical_density", "detrend", "short_channel_regression", "motion_correct", "beer_lambert", "bandpass"];

/// Cleaned optical density, before conversion to haemoglobin.
pub fn clean_od(raw: &RawRecording, montage: &Montage, params: &PreprocParams) -> Result<OdSeries> {
    let od = to_optical_density(raw, montage)?;
    let od = detrend(&od)?;
    let od = regress_short_channels(&od)?;
    motion_correct(&od, params.motion)
}

pub fn preprocess(raw: &RawRecording, montage: &Montage, table: &ExtinctionTable, params: &PreprocParams) -> Result<HaemoSeries> {
    let od = clean_od(raw, montage, params)?;
    let haemo = beer_lambert(&od, montage, params.ppf, table)?;
    bandpass(&haemo, params.band_lo, params.band_hi, params.filter_order)
}

/// Long-channel haemoglobin plus the band-passed short-channel averages
/// used as GLM nuisance regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub haemo: HaemoSeries,
    pub short_hbo: Vec<f64>,
    pub short_hbr: Vec<f64>,
}

pub fn preprocess_with_short(
    raw: &RawRecording,
    montage: &Montage,
    table: &ExtinctionTable,
    params: &PreprocParams,
) -> Result<Preprocessed> {
    let od = clean_od(raw, montage, params)?;
    let haemo = beer_lambert(&od, montage, params.ppf, table)?;
    let haemo = bandpass(&haemo, params.band_lo, params.band_hi, params.filter_order)?;
    let (o, r) = short_haemo_average(&od, params.ppf, table)?;
    let bp = BandPass::design(params.band_lo, params.band_hi, params.filter_order, od.sfreq)?;
    Ok(Preprocessed { haemo, short_hbo: bp.filtfilt(&o)?, short_hbr: bp.filtfilt(&r)? })
}

/// Mean over the short channels of an OD series.
pub fn short_channel_average(od: &OdSeries) -> Vec<f64> {
    let (_, short) = od.split();
    (0..od.data.nrows())
        .map(|i| {
            if short.is_empty() {
                0.0
            } else {
                short.iter().map(|&j| od.data[[i, j]]).sum::<f64>() / short.len() as f64
            }
        })
        .collect()
}
