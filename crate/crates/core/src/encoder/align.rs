//! Multi-participant alignment: one ridge map per participant from the raw
//! channel space to a shared feature space, fitted so that every
//! participant's mapped features predict the same sentence-level targets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ridge_solve;
use crate::nn::{xavier_uniform, Mat};
use crate::rng::{derived_rng, streams};

/// Width of the shared feature space.
pub const ALIGNED_WIDTH: usize = 100;

/// Minimum trials per participant.
pub const MIN_TRIALS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentModel {
    pub lambda: f64,
    /// Fixed map [S × 100] lifting centred sentence vectors to shared targets.
    pub lift: Mat,
    /// Per-participant [C × 100] maps, no intercept.
    pub maps: BTreeMap<String, Mat>,
}

/// One training trial: epoch [T × C] and the sentence vector it encodes.
pub struct AlignSample<'a> {
    pub data: &'a Mat,
    pub target: &'a [f64],
}

/// Time-averaged channel values, one row per trial.
pub fn trial_features(samples: &[AlignSample<'_>]) -> Result<Mat> {
    let c = samples.first().map(|s| s.data.ncols()).ok_or_else(|| Error::data("no trials"))?;
    let mut x = Mat::zeros((samples.len(), c));
    for (i, s) in samples.iter().enumerate() {
        if s.data.ncols() != c || s.data.nrows() == 0 {
            return Err(Error::data(format!("trial {i} has shape {:?}, expected [T × {c}]", s.data.dim())));
        }
        x.row_mut(i).assign(&s.data.mean_axis(ndarray::Axis(0)).expect("non-empty"));
    }
    Ok(x)
}

/// Closed-form ridge per participant. `seed` fixes the shared lift.
pub fn fit_alignment(by_participant: &BTreeMap<String, Vec<AlignSample<'_>>>, lambda: f64, seed: u64) -> Result<AlignmentModel> {
    if by_participant.len() < 2 {
        return Err(Error::data(format!("alignment needs at least 2 participants, got {}", by_participant.len())));
    }
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("ridge penalty must be non-negative, got {lambda}")));
    }
    let width = by_participant.values().flatten().next().map(|s| s.target.len()).unwrap_or(0);
    if width == 0 {
        return Err(Error::data("alignment targets are empty"));
    }
    let lift = xavier_uniform(&mut derived_rng(seed, &[streams::ALIGN]), width, ALIGNED_WIDTH);
    let mut maps = BTreeMap::new();
    for (p, samples) in by_participant {
        if samples.len() < MIN_TRIALS {
            return Err(Error::data(format!("participant {p} has {} trials; alignment needs at least {MIN_TRIALS}", samples.len())));
        }
        let x = trial_features(samples)?;
        let mut s = Mat::zeros((samples.len(), width));
        for (i, smp) in samples.iter().enumerate() {
            if smp.target.len() != width {
                return Err(Error::data(format!("participant {p}: target width {} vs {width}", smp.target.len())));
            }
            s.row_mut(i).assign(&ndarray::ArrayView1::from(smp.target));
        }
        // Inputs are z-scored and the map has no intercept, so targets are
        // centred per participant.
        let mean = s.mean_axis(ndarray::Axis(0)).expect("non-empty");
        let z = (&s - &mean).dot(&lift);
        maps.insert(p.clone(), ridge_solve(x.view(), z.view(), lambda)?);
    }
    Ok(AlignmentModel { lambda, lift, maps })
}

/// Per-sample projection [T × C] → [T × 100].
pub fn apply_alignment(trial: &Mat, participant: &str, model: &AlignmentModel) -> Result<Mat> {
    let w = model.maps.get(participant).ok_or_else(|| Error::data(format!("no alignment map for participant {participant}")))?;
    if trial.ncols() != w.nrows() {
        return Err(Error::data(format!("trial has {} channels, map expects {}", trial.ncols(), w.nrows())));
    }
    Ok(trial.dot(w))
}
