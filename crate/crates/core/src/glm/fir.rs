//! FIR delay model on 0.5 Hz data, aggregated across runs.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{assemble, fit_ols, DesignMatrix, GlmInput};
use crate::corpus::{EventKind, Schedule};
use crate::error::{Error, Result};

pub const CONDITIONS: [(&str, EventKind); 2] = [("wordcloud", EventKind::Imagine), ("rest", EventKind::Rest)];
pub const CHROMOPHORES: [&str; 2] = ["hbo", "hbr"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FirParams {
    pub n_delays: usize,
    pub frame_hz: f64,
    pub hp_cutoff: f64,
}

impl Default for FirParams {
    fn default() -> Self {
        FirParams { n_delays: 5, frame_hz: 0.5, hp_cutoff: 0.01 }
    }
}

impl FirParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_delays == 0 || !(self.frame_hz > 0.0) || !(self.hp_cutoff >= 0.0) {
            return Err(Error::config(format!("invalid FIR parameters {self:?}")));
        }
        Ok(())
    }
}

/// Frame j is the mean of the samples within ±dt/2 of j·dt.
pub fn resample_frames(data: ArrayView2<'_, f64>, sfreq: f64, frame_hz: f64) -> Result<Array2<f64>> {
    let n = data.nrows();
    if n == 0 || !(sfreq > 0.0) || !(frame_hz > 0.0) {
        return Err(Error::data("cannot resample an empty series"));
    }
    let dt = 1.0 / frame_hz;
    let last = (n - 1) as f64 / sfreq;
    let m = (last / dt + 1e-9).floor() as usize + 1;
    let mut out = Array2::<f64>::zeros((m, data.ncols()));
    for j in 0..m {
        let centre = j as f64 * dt;
        let lo = (((centre - dt / 2.0) * sfreq).ceil().max(0.0)) as usize;
        let hi = (((centre + dt / 2.0) * sfreq).ceil() as usize).min(n);
        if hi <= lo {
            return Err(Error::data(format!("sampling rate {sfreq} Hz is too low for {frame_hz} Hz frames")));
        }
        let block = data.slice(ndarray::s![lo..hi, ..]);
        out.row_mut(j).assign(&block.mean_axis(ndarray::Axis(0)).expect("non-empty block"));
    }
    Ok(out)
}

/// Fraction of each frame bin [j·dt, (j+1)·dt) covered by events of `kind`.
pub fn condition_regressor(events: &Schedule, kind: EventKind, n_frames: usize, frame_hz: f64) -> Vec<f64> {
    let dt = 1.0 / frame_hz;
    let mut reg = vec![0.0; n_frames];
    for e in events.events.iter().filter(|e| e.kind == kind) {
        let first = (e.onset / dt).floor().max(0.0) as usize;
        for (j, r) in reg.iter_mut().enumerate().skip(first) {
            let (a, b) = (j as f64 * dt, (j + 1) as f64 * dt);
            if a >= e.end() {
                break;
            }
            *r += ((b.min(e.end()) - a.max(e.onset)) / dt).max(0.0);
        }
    }
    reg
}

/// Condition × delay columns (`<condition>_delay_<k>`, k = 1..n_delays,
/// shifted k frames), cosine drifts, the nuisance series and an intercept.
pub fn fir_design(
    events: &Schedule,
    frame_hz: f64,
    n_frames: usize,
    n_delays: usize,
    hp_cutoff: f64,
    nuisance: Option<&[f64]>,
) -> Result<DesignMatrix> {
    let mut cols = Vec::new();
    for (name, kind) in CONDITIONS {
        let base = condition_regressor(events, kind, n_frames, frame_hz);
        for k in 1..=n_delays {
            let shifted: Vec<f64> = (0..n_frames).map(|j| if j >= k { base[j - k] } else { 0.0 }).collect();
            cols.push((format!("{name}_delay_{k}"), shifted));
        }
    }
    assemble(cols, n_frames, 1.0 / frame_hz, hp_cutoff, nuisance)
}

/// Channel-mean FIR coefficient and its variance for one run, keyed by
/// (condition, chromophore, delay).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDelaySummary {
    pub cells: BTreeMap<(String, String, usize), (f64, f64)>,
}

pub fn fir_run(input: &GlmInput, events: &Schedule, params: &FirParams) -> Result<RunDelaySummary> {
    params.validate()?;
    let sfreq = input.haemo.sfreq;
    let y = resample_frames(input.haemo.data.view(), sfreq, params.frame_hz)?;
    let np = input.haemo.n_pairs();
    let mut cells = BTreeMap::new();
    for (c, chrom) in CHROMOPHORES.iter().enumerate() {
        let short = if c == 0 { &input.short_hbo } else { &input.short_hbr };
        let short = Array2::from_shape_vec((short.len(), 1), short.clone()).map_err(|e| Error::data(e.to_string()))?;
        let short = resample_frames(short.view(), sfreq, params.frame_hz)?.column(0).to_vec();
        let design = fir_design(events, params.frame_hz, y.nrows(), params.n_delays, params.hp_cutoff, Some(&short))?;
        let cols = y.slice(ndarray::s![.., c * np..(c + 1) * np]);
        let fit = fit_ols(&design, cols)?;
        for (cond, _) in CONDITIONS {
            for k in 1..=params.n_delays {
                let j = design.column_index(&format!("{cond}_delay_{k}")).expect("column present");
                let mean = fit.beta.row(j).mean().unwrap_or(0.0);
                let var = fit.cov.iter().map(|m| m[[j, j]]).sum::<f64>() / (np * np) as f64;
                cells.insert((cond.to_string(), chrom.to_string(), k), (mean, var));
            }
        }
    }
    Ok(RunDelaySummary { cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayCell {
    pub condition: String,
    pub chromophore: String,
    pub delay: usize,
    /// Upper edge of the delay bin, seconds.
    pub delay_s: f64,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayTable {
    pub frame_s: f64,
    pub n_runs: usize,
    pub cells: Vec<DelayCell>,
}

/// Inverse-variance weighted mean per cell. SE is the weighted dispersion
/// of the run estimates about that mean.
pub fn aggregate_delays(runs: &[RunDelaySummary], frame_hz: f64) -> Result<DelayTable> {
    if runs.len() < 2 {
        return Err(Error::data(format!("delay aggregation needs at least 2 runs, got {}", runs.len())));
    }
    let keys: Vec<_> = runs[0].cells.keys().cloned().collect();
    if runs.iter().any(|r| r.cells.keys().ne(keys.iter())) {
        return Err(Error::data("runs were fitted with inconsistent designs"));
    }
    let frame_s = 1.0 / frame_hz;
    let cells = keys
        .into_iter()
        .map(|key| {
            let vals: Vec<(f64, f64)> = runs.iter().map(|r| r.cells[&key]).collect();
            let (mean, se) = weighted_mean_se(&vals);
            DelayCell {
                condition: key.0.clone(),
                chromophore: key.1.clone(),
                delay: key.2,
                delay_s: frame_s * key.2 as f64,
                mean,
                se,
            }
        })
        .collect();
    Ok(DelayTable { frame_s, n_runs: runs.len(), cells })
}

/// (estimate, variance) pairs; equal weights when any variance is zero.
fn weighted_mean_se(vals: &[(f64, f64)]) -> (f64, f64) {
    let equal = vals.iter().any(|v| !(v.1 > 0.0));
    let w: Vec<f64> = vals.iter().map(|v| if equal { 1.0 } else { 1.0 / v.1 }).collect();
    let sw: f64 = w.iter().sum();
    let mean = vals.iter().zip(&w).map(|(v, w)| w * v.0).sum::<f64>() / sw;
    let n = vals.len() as f64;
    let disp = vals.iter().zip(&w).map(|(v, w)| w * (v.0 - mean).powi(2)).sum::<f64>();
    (mean, (disp / ((n - 1.0) * sw)).sqrt())
}

/// Upper edge of the argmax bin, frame_s · k (1-based). Ties resolve to
/// the earlier delay.
pub fn pick_delay_from_coefficients(coefs: &[f64], frame_s: f64) -> Result<f64> {
    if coefs.is_empty() || coefs.iter().any(|c| !c.is_finite()) {
        return Err(Error::data("delay coefficients are empty or not finite"));
    }
    let best = coefs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = (0..coefs.len()).filter(|&i| coefs[i] == best).collect();
    if winners.len() > 1 {
        log::warn!("delay coefficients tie at delays {:?}; using the earliest", winners.iter().map(|i| i + 1).collect::<Vec<_>>());
    }
    Ok(frame_s * (winners[0] + 1) as f64)
}

/// Picks from the HbO word-cloud coefficients.
pub fn pick_delay(table: &DelayTable) -> Result<f64> {
    let mut cells: Vec<&DelayCell> =
        table.cells.iter().filter(|c| c.condition == "wordcloud" && c.chromophore == "hbo").collect();
    cells.sort_by_key(|c| c.delay);
    if cells.is_empty() || cells.iter().enumerate().any(|(i, c)| c.delay != i + 1) {
        return Err(Error::data("HbO word-cloud coefficients are missing for some delays"));
    }
    pick_delay_from_coefficients(&cells.iter().map(|c| c.mean).collect::<Vec<_>>(), table.frame_s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayReport {
    pub participant: String,
    pub config_hash: String,
    pub n_runs: usize,
    pub frame_s: f64,
    pub coefficients: Vec<DelayCell>,
    pub chosen_delay_s: f64,
}

impl DelayReport {
    pub fn new(participant: &str, config_hash: &str, table: DelayTable) -> Result<Self> {
        let chosen_delay_s = pick_delay(&table)?;
        Ok(DelayReport {
            participant: participant.to_string(),
            config_hash: config_hash.to_string(),
            n_runs: table.n_runs,
            frame_s: table.frame_s,
            coefficients: table.cells,
            chosen_delay_s,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Event;

    fn schedule(events: &[(EventKind, f64, f64)]) -> Schedule {
        let end = events.iter().map(|e| e.1 + e.2).fold(0.0, f64::max);
        Schedule {
            events: events
                .iter()
                .map(|&(kind, onset, duration)| Event { kind, onset, duration, run: 0, topic: None, keyword: None })
                .collect(),
            runs: vec![(0.0, end)],
            rest_positions: vec![],
        }
    }

    #[test]
    fn column_count_and_names() {
        let s = schedule(&[(EventKind::Imagine, 10.0, 7.0), (EventKind::Rest, 30.0, 7.0), (EventKind::Imagine, 60.0, 7.0)]);
        let n = 60;
        let nuis: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64).collect();
        let d = fir_design(&s, 0.5, n, 5, 0.01, Some(&nuis)).unwrap();
        let n_drift = d.names.iter().filter(|c| c.starts_with("drift_")).count();
        assert_eq!(n_drift, 2);
        assert_eq!(d.n_regressors(), 10 + n_drift + 2);
        assert_eq!(d.names[0], "wordcloud_delay_1");
        assert_eq!(d.names[9], "rest_delay_5");
    }

    #[test]
    fn delay_three_is_a_six_second_shift() {
        let s = schedule(&[(EventKind::Imagine, 0.0, 2.0)]);
        let base = condition_regressor(&s, EventKind::Imagine, 20, 0.5);
        assert_eq!(base[0], 1.0);
        assert!(base[1..].iter().all(|v| *v == 0.0));
        let cols: Vec<Vec<f64>> = (1..=5)
            .map(|k| (0..20).map(|j| if j >= k { base[j - k] } else { 0.0 }).collect())
            .collect();
        let on: Vec<usize> = cols[2].iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(j, _)| j).collect();
        assert_eq!(on, vec![3]);
        assert_eq!(on[0] as f64 * 2.0, 6.0);
    }

    #[test]
    fn coverage_fraction_of_partial_bins() {
        let s = schedule(&[(EventKind::Imagine, 1.0, 7.0)]);
        let r = condition_regressor(&s, EventKind::Imagine, 6, 0.5);
        assert_eq!(r, vec![0.5, 1.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn resampling_averages_centred_windows() {
        let x = Array2::from_shape_fn((41, 1), |(i, _)| i as f64);
        let r = resample_frames(x.view(), 4.0, 0.5).unwrap();
        assert_eq!(r.nrows(), 6);
        // Frame 0 sees samples 0..=3 (t < 1 s); frame 1 sees t ∈ [1, 3).
        assert_eq!(r[[0, 0]], 1.5);
        assert_eq!(r[[1, 0]], 7.5);
    }

    #[test]
    fn pick_delay_examples() {
        assert_eq!(pick_delay_from_coefficients(&[0.0, 0.0, 1.0, 0.0, 0.0], 2.0).unwrap(), 6.0);
        assert_eq!(pick_delay_from_coefficients(&[0.0, 0.0, 0.0, 1.0, 0.0], 2.0).unwrap(), 8.0);
        assert_eq!(pick_delay_from_coefficients(&[0.0, 1.0, 1.0, 0.0, 0.0], 2.0).unwrap(), 4.0);
        assert!(pick_delay_from_coefficients(&[], 2.0).is_err());
    }

    fn summary(vals: &[(f64, f64)]) -> RunDelaySummary {
        RunDelaySummary {
            cells: vals
                .iter()
                .enumerate()
                .map(|(k, v)| (("wordcloud".to_string(), "hbo".to_string(), k + 1), *v))
                .collect(),
        }
    }

    #[test]
    fn aggregation_examples() {
        let a = summary(&[(1.0, 0.5), (2.0, 0.5)]);
        let t = aggregate_delays(&[a.clone(), a.clone(), a], 0.5).unwrap();
        assert_eq!(t.cells[0].mean, 1.0);
        assert_eq!(t.cells[0].se, 0.0);
        let t = aggregate_delays(&[summary(&[(1.0, 1.0)]), summary(&[(3.0, 1.0)])], 0.5).unwrap();
        assert_eq!(t.cells[0].mean, 2.0);
        assert!(aggregate_delays(&[summary(&[(1.0, 1.0)])], 0.5).is_err());
        let bad = summary(&[(1.0, 1.0), (1.0, 1.0)]);
        assert!(aggregate_delays(&[summary(&[(1.0, 1.0)]), bad], 0.5).is_err());
    }

    #[test]
    fn aggregation_matches_brute_force_weights() {
        let vals = [(0.3, 0.1), (1.2, 0.4), (-0.5, 2.0), (0.9, 0.05)];
        let runs: Vec<_> = vals.iter().map(|v| summary(&[*v])).collect();
        let t = aggregate_delays(&runs, 0.5).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for (b, v) in vals {
            num += b / v;
            den += 1.0 / v;
        }
        assert!((t.cells[0].mean - num / den).abs() < 1e-12);
    }
}
