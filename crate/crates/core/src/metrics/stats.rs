use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Result of a two-sided paired t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    pub p: f64,
    pub mean_diff: f64,
    pub df: usize,
    /// Set when the differences had zero variance and the p-value was
    /// assigned by rule rather than from the t distribution.
    pub degenerate: bool,
}

/// Two-sided paired t-test of `a - b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::data(format!(
            "paired t-test length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 3 {
        return Err(Error::data(format!("paired t-test needs >= 3 pairs, got {n}")));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    // Relative floor so that rounding noise in constant differences counts as zero.
    let scale = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs())).max(1e-300);
    if var.sqrt() <= 1e-12 * scale {
        return Ok(if mean.abs() <= 1e-12 * scale {
            PairedTTest { t: 0.0, p: 1.0, mean_diff: 0.0, df, degenerate: true }
        } else {
            PairedTTest {
                t: f64::INFINITY.copysign(mean),
                p: 0.0,
                mean_diff: mean,
                df,
                degenerate: true,
            }
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::numerical(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(PairedTTest { t, p, mean_diff: mean, df, degenerate: false })
}
