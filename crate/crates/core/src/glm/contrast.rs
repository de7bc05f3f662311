//! Word-cloud > rest contrast with a canonical-HRF design at the native rate.

use serde::{Deserialize, Serialize};

use super::{assemble, fit_ar1, fit_ols, DesignMatrix, GlmInput};
use crate::corpus::{EventKind, Schedule};
use crate::error::{Error, Result};
use crate::synthgen::{canonical_hrf, HrfParams, Montage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastParams {
    pub hp_cutoff: f64,
    pub stim_duration_s: f64,
    /// AR(1) prewhitening; plain OLS when false.
    pub ar1: bool,
    pub hrf: HrfParams,
}

impl Default for ContrastParams {
    fn default() -> Self {
        ContrastParams { hp_cutoff: 0.005, stim_duration_s: 7.0, ar1: true, hrf: HrfParams::default() }
    }
}

/// Columns `wordcloud`, `rest`: fixed-duration boxcars at each onset
/// convolved with the canonical HRF, then drifts, nuisance and intercept.
pub fn canonical_design(
    events: &Schedule,
    n: usize,
    sfreq: f64,
    params: &ContrastParams,
    nuisance: Option<&[f64]>,
) -> Result<DesignMatrix> {
    params.hrf.validate()?;
    if !(params.stim_duration_s > 0.0) {
        return Err(Error::config("stimulus duration must be positive"));
    }
    let dt = 1.0 / sfreq;
    let kernel = canonical_hrf(dt, &params.hrf)?;
    let mut cols = Vec::new();
    for (name, kind) in [("wordcloud", EventKind::Imagine), ("rest", EventKind::Rest)] {
        let mut boxcar = vec![0.0; n];
        for e in events.events.iter().filter(|e| e.kind == kind) {
            let a = (e.onset * sfreq).round().max(0.0) as usize;
            let b = (((e.onset + params.stim_duration_s) * sfreq).round() as usize).min(n);
            for v in boxcar.iter_mut().take(b).skip(a) {
                *v = 1.0;
            }
        }
        let mut reg = vec![0.0; n];
        for (i, &u) in boxcar.iter().enumerate().filter(|(_, u)| **u != 0.0) {
            for (k, h) in kernel.iter().enumerate().take(n - i) {
                reg[i + k] += u * h * dt;
            }
        }
        cols.push((name.to_string(), reg));
    }
    assemble(cols, n, dt, params.hp_cutoff, nuisance)
}

/// One run's GLM input and its events.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastRun {
    pub input: GlmInput,
    pub events: Schedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelZ {
    pub channel: String,
    pub pair: usize,
    pub chromophore: String,
    pub z: f64,
}

/// Per long channel z for `weights` · (wordcloud, rest), fixed-effects
/// combined over runs: z = Σ(e/v) / sqrt(Σ 1/v).
pub fn contrast_z_weighted(
    runs: &[ContrastRun],
    montage: &Montage,
    params: &ContrastParams,
    weights: [f64; 2],
) -> Result<Vec<ChannelZ>> {
    if runs.is_empty() {
        return Err(Error::data("contrast needs at least one run"));
    }
    let pairs = montage.long_pairs()?;
    let np = pairs.len();
    let mut num = vec![0.0; 2 * np];
    let mut den = vec![0.0; 2 * np];
    for run in runs {
        let h = &run.input.haemo;
        if h.n_pairs() != np {
            return Err(Error::data(format!("run has {} pairs, montage {np}", h.n_pairs())));
        }
        for c in 0..2 {
            let short = if c == 0 { &run.input.short_hbo } else { &run.input.short_hbr };
            let design = canonical_design(&run.events, h.data.nrows(), h.sfreq, params, Some(short))?;
            let mut w = vec![0.0; design.n_regressors()];
            w[design.column_index("wordcloud").expect("column")] = weights[0];
            w[design.column_index("rest").expect("column")] = weights[1];
            let y = h.data.slice(ndarray::s![.., c * np..(c + 1) * np]);
            let fit = if params.ar1 { fit_ar1(&design, y)? } else { fit_ols(&design, y)? };
            for (p, (e, v)) in fit.contrast(&w)?.into_iter().enumerate() {
                if v > 0.0 {
                    num[c * np + p] += e / v;
                    den[c * np + p] += 1.0 / v;
                }
            }
        }
    }
    Ok((0..2 * np)
        .map(|k| {
            let (c, p) = (k / np, k % np);
            let chrom = if c == 0 { "hbo" } else { "hbr" };
            let ch = &montage.channels[pairs[p].channels[0]];
            ChannelZ {
                channel: format!("S{}_D{} {chrom}", ch.source, ch.detector),
                pair: p,
                chromophore: chrom.to_string(),
                z: if den[k] > 0.0 { num[k] / den[k].sqrt() } else { 0.0 },
            }
        })
        .collect())
}

/// Word cloud > rest.
pub fn contrast_z(runs: &[ContrastRun], montage: &Montage, params: &ContrastParams) -> Result<Vec<ChannelZ>> {
    contrast_z_weighted(runs, montage, params, [1.0, -1.0])
}

pub fn contrast_csv(zs: &[ChannelZ]) -> String {
    let mut out = String::from("channel,z\n");
    for z in zs {
        out.push_str(&format!("{},{:.6}\n", z.channel, z.z));
    }
    out
}

/// z for one chromophore as a dense [pairs] vector.
pub fn z_vector(zs: &[ChannelZ], chromophore: &str) -> Vec<f64> {
    zs.iter().filter(|z| z.chromophore == chromophore).map(|z| z.z).collect()
}
