use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Floor applied before inverting throughput samples.
pub const HARMONIC_FLOOR_MBPS: f64 = 0.001;

pub fn harmonic_mean_predict(history: &[f64]) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::InsufficientHistory { have: 0, need: 1 });
    }
    let inv: f64 = history.iter().map(|y| 1.0 / y.max(HARMONIC_FLOOR_MBPS)).sum();
    Ok(history.len() as f64 / inv)
}

/// `s_t = α·y_t + (1 − α)·s_{t−1}`, seeded with the first value.
pub fn ewma_predict(history: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!("EWMA alpha {alpha} is outside (0, 1]")));
    }
    let (&first, rest) = history.split_first().ok_or(Error::InsufficientHistory { have: 0, need: 1 })?;
    Ok(rest.iter().fold(first, |s, &y| alpha * y + (1.0 - alpha) * s))
}

/// Autoregressive model `y_t = c + Σ a_k·y_{t−k}` fitted by least squares.
#[derive(Clone, Debug, PartialEq)]
pub struct ArModel {
    pub intercept: f64,
    /// `coefficients[k]` multiplies `y_{t−k−1}`.
    pub coefficients: Vec<f64>,
}

impl ArModel {
    pub fn fit(series: &[f64], p: usize) -> Result<ArModel> {
        if p == 0 {
            return Err(Error::InvalidConfig("AR order must be at least 1".into()));
        }
        if series.len() < p + 1 {
            return Err(Error::InsufficientHistory { have: series.len(), need: p + 1 });
        }
        let rows = series.len() - p;
        let design = DMatrix::from_fn(rows, p + 1, |r, c| if c == 0 { 1.0 } else { series[r + p - c] });
        let rhs = DVector::from_iterator(rows, series[p..].iter().copied());
        let sol = min_norm_least_squares(&design, &rhs);
        Ok(ArModel { intercept: sol[0], coefficients: sol.iter().skip(1).copied().collect() })
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    /// One-step-ahead forecast from the last `p` values of `history`.
    pub fn forecast(&self, history: &[f64]) -> Result<f64> {
        let p = self.order();
        if history.len() < p {
            return Err(Error::InsufficientHistory { have: history.len(), need: p });
        }
        let n = history.len();
        Ok(self.intercept + self.coefficients.iter().enumerate().map(|(k, a)| a * history[n - 1 - k]).sum::<f64>())
    }

    /// Mean of the next `steps` iterated forecasts.
    pub fn forecast_mean(&self, history: &[f64], steps: usize) -> Result<f64> {
        let mut h = history.to_vec();
        let mut total = 0.0;
        for _ in 0..steps.max(1) {
            let next = self.forecast(&h)?;
            total += next;
            h.push(next);
        }
        Ok(total / steps.max(1) as f64)
    }
}

/// Minimum-norm least-squares solution through the eigendecomposition of
/// the Gram matrix. Directions with eigenvalues below a relative cutoff
/// are dropped, so collinear lags (e.g. a constant series) stay finite.
fn min_norm_least_squares(design: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let gram = design.transpose() * design;
    let proj = design.transpose() * rhs;
    let eig = gram.symmetric_eigen();
    let cutoff = eig.eigenvalues.amax() * 1e-12;
    let mut sol = DVector::zeros(design.ncols());
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            let v = eig.eigenvectors.column(k);
            sol += v * (v.dot(&proj) / lambda);
        }
    }
    sol
}

/// Fits AR(p) on `history` and forecasts the next value.
pub fn ar_fit_predict(history: &[f64], p: usize) -> Result<f64> {
    ArModel::fit(history, p)?.forecast(history)
}
