//! Delay-aligned imagine epochs and per-session standardisation.

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::corpus::Schedule;
use crate::error::{Error, Result};
use crate::sigproc::HaemoSeries;
use crate::synthgen::RunIds;

/// Floor applied to a channel standard deviation before dividing.
pub const SD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialExample {
    pub participant: String,
    pub session: usize,
    pub run: usize,
    /// Event index within the run's schedule.
    pub event: usize,
    pub sentence: Option<String>,
    pub start_sample: usize,
    /// [T × channels].
    pub data: Array2<f64>,
}

impl TrialExample {
    pub fn id(&self) -> String {
        format!("{}/r{:03}/e{:02}", self.participant, self.run, self.event)
    }
}

/// T = ceil(window × sfreq), tolerant to representation error in the product.
pub fn n_epoch_samples(window_s: f64, sfreq: f64) -> usize {
    (window_s * sfreq - 1e-9).ceil() as usize
}

/// [onset + delay, onset + delay + window) for every imagine event. Epochs
/// running past the end of the recording are dropped with a warning.
pub fn epoch_trials(
    haemo: &HaemoSeries,
    events: &Schedule,
    sentences: Option<&BTreeMap<usize, String>>,
    ids: &RunIds,
    delay_s: f64,
    window_s: f64,
) -> Result<Vec<TrialExample>> {
    if !(delay_s >= 0.0) {
        return Err(Error::config(format!("epoch delay must be non-negative, got {delay_s}")));
    }
    if !(window_s > 0.0) {
        return Err(Error::config(format!("epoch window must be positive, got {window_s}")));
    }
    let t = n_epoch_samples(window_s, haemo.sfreq);
    let n = haemo.data.nrows();
    let mut out = Vec::new();
    for (idx, ev) in events.imagine_events() {
        let start = ((ev.onset + delay_s) * haemo.sfreq).round() as usize;
        if start + t > n {
            log::warn!(
                "{} run {} event {idx}: epoch [{start}, {}) passes the end of the recording ({n}); dropped",
                ids.participant,
                ids.run,
                start + t
            );
            continue;
        }
        out.push(TrialExample {
            participant: ids.participant.clone(),
            session: ids.session,
            run: ids.run,
            event: idx,
            sentence: sentences.and_then(|m| m.get(&idx).cloned()),
            start_sample: start,
            data: haemo.data.slice(s![start..start + t, ..]).to_owned(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ZscoreReport {
    /// (participant, session, channel) whose sd hit the floor.
    pub floored: Vec<(String, usize, usize)>,
}

/// Standardises each channel with the mean and sd pooled over all samples
/// of all trials in the same (participant, session).
pub fn zscore_by_session(mut trials: Vec<TrialExample>) -> Result<(Vec<TrialExample>, ZscoreReport)> {
    let mut groups: BTreeMap<(String, usize), Vec<usize>> = BTreeMap::new();
    for (i, t) in trials.iter().enumerate() {
        groups.entry((t.participant.clone(), t.session)).or_default().push(i);
    }
    let mut report = ZscoreReport::default();
    for ((participant, session), members) in groups {
        if members.len() < 2 {
            return Err(Error::data(format!(
                "participant {participant} session {session} has {} trial(s); z-scoring needs at least 2",
                members.len()
            )));
        }
        let c = trials[members[0]].data.ncols();
        if members.iter().any(|&i| trials[i].data.ncols() != c) {
            return Err(Error::data(format!("participant {participant} session {session}: channel counts differ")));
        }
        let mut sum = vec![0.0; c];
        let mut count = 0usize;
        for &i in &members {
            for row in trials[i].data.rows() {
                sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            }
            count += trials[i].data.nrows();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut ss = vec![0.0; c];
        for &i in &members {
            for row in trials[i].data.rows() {
                ss.iter_mut().zip(row).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2));
            }
        }
        let sd: Vec<f64> = ss
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let sd = (s / count as f64).sqrt();
                if sd < SD_FLOOR {
                    report.floored.push((participant.clone(), session, j));
                    SD_FLOOR
                } else {
                    sd
                }
            })
            .collect();
        for &i in &members {
            for mut row in trials[i].data.rows_mut() {
                row.iter_mut().zip(&mean).zip(&sd).for_each(|((v, m), s)| *v = (*v - m) / s);
            }
        }
    }
    Ok((trials, report))
}
