//! General linear models for haemodynamic delay estimation (FIR) and for
//! the word-cloud > rest activation contrast (canonical HRF).

pub mod contrast;
pub mod fir;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve};
use crate::sigproc::{beer_lambert, motion_correct, short_haemo_average, to_optical_density, HaemoSeries, PreprocParams};
use crate::synthgen::{ExtinctionTable, Montage, RawRecording};

pub use contrast::{canonical_design, contrast_csv, contrast_z, contrast_z_weighted, z_vector, ChannelZ, ContrastParams, ContrastRun};
pub use fir::{
    aggregate_delays, condition_regressor, fir_design, fir_run, pick_delay, pick_delay_from_coefficients, resample_frames,
    DelayCell, DelayReport, DelayTable, FirParams, RunDelaySummary,
};

/// Unfiltered long-pair haemoglobin with short-pair averages, the input
/// to both GLMs. Drift is left to the design's cosine regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmInput {
    pub haemo: HaemoSeries,
    pub short_hbo: Vec<f64>,
    pub short_hbr: Vec<f64>,
}

/// Optical density, spike repair, then Beer-Lambert for long and short pairs.
pub fn prepare_input(
    raw: &RawRecording,
    montage: &Montage,
    table: &ExtinctionTable,
    params: &PreprocParams,
) -> Result<GlmInput> {
    let od = motion_correct(&to_optical_density(raw, montage)?, params.motion)?;
    let haemo = beer_lambert(&od, montage, params.ppf, table)?;
    let (short_hbo, short_hbr) = short_haemo_average(&od, params.ppf, table)?;
    Ok(GlmInput { haemo, short_hbo, short_hbr })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    /// [samples × regressors].
    pub data: Array2<f64>,
    pub names: Vec<String>,
}

impl DesignMatrix {
    pub fn n_regressors(&self) -> usize {
        self.data.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Unique names and full column rank.
    pub fn validate(&self) -> Result<()> {
        if self.names.len() != self.data.ncols() {
            return Err(Error::data("design matrix names do not match its columns"));
        }
        let mut seen = BTreeSet::new();
        for n in &self.names {
            if !seen.insert(n) {
                return Err(Error::data(format!("duplicate design column '{n}'")));
            }
        }
        if self.data.nrows() <= self.data.ncols() {
            return Err(Error::numerical(format!(
                "design has {} rows for {} regressors",
                self.data.nrows(),
                self.data.ncols()
            )));
        }
        let g = normalized_gram(self.data.view());
        cholesky(g.view()).map_err(|_| Error::numerical("design matrix is rank deficient"))?;
        Ok(())
    }
}

/// XᵀX scaled to unit diagonal, for a scale-free rank test.
fn normalized_gram(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let g = x.t().dot(&x);
    let d: Vec<f64> = (0..g.nrows()).map(|i| g[[i, i]].sqrt().max(f64::MIN_POSITIVE)).collect();
    Array2::from_shape_fn(g.dim(), |(i, j)| g[[i, j]] / (d[i] * d[j]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub names: Vec<String>,
    /// [regressors × channels].
    pub beta: Array2<f64>,
    pub sigma2: Vec<f64>,
    /// Per-channel coefficient covariance.
    pub cov: Vec<Array2<f64>>,
    pub dof: usize,
    /// Per-channel AR(1) coefficient used for prewhitening (0 for OLS).
    pub rho: Vec<f64>,
}

impl GlmFit {
    /// (cᵀβ, cᵀ Cov c) per channel.
    pub fn contrast(&self, c: &[f64]) -> Result<Vec<(f64, f64)>> {
        if c.len() != self.beta.nrows() {
            return Err(Error::data(format!("contrast has {} weights for {} regressors", c.len(), self.beta.nrows())));
        }
        let c = Array1::from_vec(c.to_vec());
        Ok((0..self.beta.ncols())
            .map(|ch| (c.dot(&self.beta.column(ch)), c.dot(&self.cov[ch].dot(&c))))
            .collect())
    }
}

/// β = (XᵀX)⁻¹Xᵀy per channel, with σ² = RSS/dof and Cov = σ²(XᵀX)⁻¹.
pub fn fit_ols(design: &DesignMatrix, y: ArrayView2<'_, f64>) -> Result<GlmFit> {
    let (n, p) = design.data.dim();
    if y.nrows() != n {
        return Err(Error::data(format!("design has {n} rows but data has {} samples", y.nrows())));
    }
    design.validate()?;
    let x = &design.data;
    let l = cholesky(x.t().dot(x).view())?;
    let xtx_inv = cholesky_solve(&l, Array2::eye(p).view());
    let beta = cholesky_solve(&l, x.t().dot(&y).view());
    let resid = &y - &x.dot(&beta);
    let dof = n - p;
    let sigma2: Vec<f64> = resid.axis_iter(Axis(1)).map(|r| r.dot(&r) / dof as f64).collect();
    let cov = sigma2.iter().map(|s| &xtx_inv * *s).collect();
    Ok(GlmFit { names: design.names.clone(), beta, sigma2, cov, dof, rho: vec![0.0; y.ncols()] })
}

/// OLS, then a refit on AR(1)-prewhitened data and design. The residual
/// lag-1 autocorrelation is rounded to 0.01 so channels can share designs.
pub fn fit_ar1(design: &DesignMatrix, y: ArrayView2<'_, f64>) -> Result<GlmFit> {
    let ols = fit_ols(design, y)?;
    let x = &design.data;
    let (n, p) = x.dim();
    let resid = &y - &x.dot(&ols.beta);
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    let mut rho = vec![0.0; y.ncols()];
    for (ch, r) in resid.axis_iter(Axis(1)).enumerate() {
        let num: f64 = (1..n).map(|t| r[t] * r[t - 1]).sum();
        let den: f64 = r.dot(&r);
        let est = if den > 0.0 { (num / den).clamp(-0.99, 0.99) } else { 0.0 };
        let key = (est * 100.0).round() as i64;
        rho[ch] = key as f64 / 100.0;
        groups.entry(key).or_default().push(ch);
    }
    let mut beta = Array2::<f64>::zeros((p, y.ncols()));
    let mut sigma2 = vec![0.0; y.ncols()];
    let mut cov = vec![Array2::<f64>::zeros((p, p)); y.ncols()];
    for (key, chans) in groups {
        let r = key as f64 / 100.0;
        let wx = whiten(x.view(), r);
        let wy = whiten(y.select(Axis(1), &chans).view(), r);
        let d = DesignMatrix { data: wx, names: design.names.clone() };
        let f = fit_ols(&d, wy.view())?;
        for (k, &ch) in chans.iter().enumerate() {
            beta.column_mut(ch).assign(&f.beta.column(k));
            sigma2[ch] = f.sigma2[k];
            cov[ch] = f.cov[k].clone();
        }
    }
    Ok(GlmFit { names: design.names.clone(), beta, sigma2, cov, dof: n - p, rho })
}

/// Prais-Winsten transform for AR(1) coefficient `rho`.
fn whiten(m: ArrayView2<'_, f64>, rho: f64) -> Array2<f64> {
    let mut out = m.to_owned();
    let n = m.nrows();
    let head = (1.0 - rho * rho).sqrt();
    for t in (1..n).rev() {
        for j in 0..m.ncols() {
            out[[t, j]] = m[[t, j]] - rho * m[[t - 1, j]];
        }
    }
    out.row_mut(0).mapv_inplace(|v| v * head);
    out
}

/// DCT-II drift basis up to `hp_cutoff`, without the constant term.
/// Order = floor(2 · n · hp · dt), capped at n − 1.
pub fn cosine_drift(n: usize, dt: f64, hp_cutoff: f64) -> Array2<f64> {
    let order = ((2.0 * n as f64 * hp_cutoff * dt).floor() as usize).min(n.saturating_sub(1));
    let norm = (2.0 / n as f64).sqrt();
    Array2::from_shape_fn((n, order), |(t, k)| {
        norm * (std::f64::consts::PI / n as f64 * (t as f64 + 0.5) * (k + 1) as f64).cos()
    })
}

/// Appends drift, nuisance and intercept columns to condition regressors.
pub(crate) fn assemble(
    mut cols: Vec<(String, Vec<f64>)>,
    n: usize,
    dt: f64,
    hp_cutoff: f64,
    nuisance: Option<&[f64]>,
) -> Result<DesignMatrix> {
    let drift = cosine_drift(n, dt, hp_cutoff);
    for k in 0..drift.ncols() {
        cols.push((format!("drift_{}", k + 1), drift.column(k).to_vec()));
    }
    if let Some(s) = nuisance {
        if s.len() != n {
            return Err(Error::data(format!("nuisance series has {} samples, design {n}", s.len())));
        }
        cols.push(("short".into(), s.to_vec()));
    }
    cols.push(("intercept".into(), vec![1.0; n]));
    let mut data = Array2::<f64>::zeros((n, cols.len()));
    for (j, (_, c)) in cols.iter().enumerate() {
        data.column_mut(j).assign(&Array1::from_vec(c.clone()));
    }
    let d = DesignMatrix { data, names: cols.into_iter().map(|c| c.0).collect() };
    d.validate()?;
    Ok(d)
}
