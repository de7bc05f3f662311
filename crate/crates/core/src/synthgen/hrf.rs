//! Double-gamma haemodynamic response.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Kernel support in seconds.
pub const KERNEL_DURATION_S: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HrfParams {
    /// Mode of the response gamma, seconds.
    pub peak_delay: f64,
    /// Mode of the undershoot gamma, seconds.
    pub undershoot_delay: f64,
    pub peak_dispersion: f64,
    pub undershoot_dispersion: f64,
    /// Peak-to-undershoot amplitude ratio.
    pub undershoot_ratio: f64,
    /// Onset-to-peak latency of the generating response, seconds.
    pub true_onset_delay: f64,
    /// ΔHbR = -hbr_ratio · ΔHbO.
    pub hbr_ratio: f64,
}

impl Default for HrfParams {
    fn default() -> Self {
        HrfParams {
            peak_delay: 6.0,
            undershoot_delay: 16.0,
            peak_dispersion: 1.0,
            undershoot_dispersion: 1.0,
            undershoot_ratio: 6.0,
            true_onset_delay: 5.0,
            hbr_ratio: 1.0 / 3.0,
        }
    }
}

fn gamma_pdf(t: f64, mode: f64, dispersion: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let shape = mode / dispersion + 1.0;
    ((shape - 1.0) * t.ln() - t / dispersion - ln_gamma(shape) - shape * dispersion.ln()).exp()
}

impl HrfParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("peak_delay", self.peak_delay),
            ("undershoot_delay", self.undershoot_delay),
            ("peak_dispersion", self.peak_dispersion),
            ("undershoot_dispersion", self.undershoot_dispersion),
            ("undershoot_ratio", self.undershoot_ratio),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("hrf {name} must be positive, got {v}")));
            }
        }
        if self.undershoot_delay <= self.peak_delay {
            return Err(Error::config("hrf undershoot must come after the peak"));
        }
        if !(self.true_onset_delay >= 0.0) || !(self.hbr_ratio >= 0.0) {
            return Err(Error::config("hrf true_onset_delay and hbr_ratio must be non-negative"));
        }
        Ok(())
    }

    /// Unnormalised double gamma at time `t`.
    pub fn value(&self, t: f64) -> f64 {
        gamma_pdf(t, self.peak_delay, self.peak_dispersion)
            - gamma_pdf(t, self.undershoot_delay, self.undershoot_dispersion) / self.undershoot_ratio
    }
}

/// Canonical kernel sampled every `dt` seconds over 32 s, scaled to unit peak.
pub fn canonical_hrf(dt: f64, params: &HrfParams) -> Result<Vec<f64>> {
    sampled(dt, params, 0.0)
}

/// Generating kernel: the canonical shape re-timed so its peak falls
/// `true_onset_delay` seconds after stimulus onset.
pub fn response_kernel(dt: f64, params: &HrfParams) -> Result<Vec<f64>> {
    sampled(dt, params, params.peak_delay - params.true_onset_delay)
}

fn sampled(dt: f64, params: &HrfParams, advance: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config(format!("hrf sampling interval must be positive, got {dt}")));
    }
    params.validate()?;
    let n = (KERNEL_DURATION_S / dt).ceil() as usize + 1;
    let mut k: Vec<f64> = (0..n).map(|i| params.value(i as f64 * dt + advance)).collect();
    let peak = k.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::numerical("hrf kernel has no positive lobe in its support"));
    }
    k.iter_mut().for_each(|v| *v /= peak);
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_at_six_seconds() {
        let k = canonical_hrf(0.1, &HrfParams::default()).unwrap();
        let arg = k.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((arg as f64 * 0.1 - 6.0).abs() <= 0.2, "peak at {}", arg as f64 * 0.1);
        assert!((k[arg] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_at_origin_and_one_sign_change() {
        let k = canonical_hrf(0.1, &HrfParams::default()).unwrap();
        assert!(k[0].abs() < 1e-6);
        let signs: Vec<bool> = k.iter().filter(|v| v.abs() > 1e-12).map(|v| *v > 0.0).collect();
        let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(changes, 1);
        assert!(k.iter().sum::<f64>() > 0.0);
    }

    #[test]
    fn response_kernel_peaks_at_latency() {
        let p = HrfParams { true_onset_delay: 5.0, ..Default::default() };
        let k = response_kernel(0.05, &p).unwrap();
        let arg = k.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((arg as f64 * 0.05 - 5.0).abs() < 0.06);
    }

    #[test]
    fn bad_dt() {
        assert!(canonical_hrf(0.0, &HrfParams::default()).is_err());
        assert!(canonical_hrf(-1.0, &HrfParams::default()).is_err());
    }
}
