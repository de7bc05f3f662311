//! Dense symmetric positive-definite solves used by the GLM and ridge maps.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Lower-triangular L with A = L Lᵀ. Fails when a pivot is not positive
/// relative to the matrix scale.
pub fn cholesky(a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::numerical("cholesky needs a square matrix"));
    }
    let scale = (0..n).map(|i| a[[i, i]].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 1e-12 * scale) {
            return Err(Error::numerical(format!(
                "matrix is singular or not positive definite (pivot {j} = {d:.3e})"
            )));
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Ok(l)
}

/// Solves L Lᵀ X = B column by column.
pub fn cholesky_solve(l: &Array2<f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for mut col in x.columns_mut() {
        for i in 0..n {
            let mut s = col[i];
            for k in 0..i {
                s -= l[[i, k]] * col[k];
            }
            col[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in i + 1..n {
                s -= l[[k, i]] * col[k];
            }
            col[i] = s / l[[i, i]];
        }
    }
    x
}

pub fn spd_inverse(a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let l = cholesky(a)?;
    Ok(cholesky_solve(&l, Array2::eye(a.nrows()).view()))
}

/// (AᵀA + λI)⁻¹ AᵀB.
pub fn ridge_solve(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, lambda: f64) -> Result<Array2<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::data(format!("ridge: {} design rows vs {} target rows", a.nrows(), b.nrows())));
    }
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("ridge penalty must be non-negative, got {lambda}")));
    }
    let mut g = a.t().dot(&a);
    for i in 0..g.nrows() {
        g[[i, i]] += lambda;
    }
    let l = cholesky(g.view())?;
    Ok(cholesky_solve(&l, a.t().dot(&b).view()))
}

pub fn column_means(m: ArrayView2<'_, f64>) -> Array1<f64> {
    m.mean_axis(ndarray::Axis(0)).unwrap_or_else(|| Array1::zeros(m.ncols()))
}
