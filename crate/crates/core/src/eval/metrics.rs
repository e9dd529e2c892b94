use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ModelWeights;
use crate::preprocess::SampleSet;

/// Percentage coefficient of determination. Negative values are kept.
pub fn r2_score(targets: &[f64], predictions: &[f64]) -> Result<f64> {
    if targets.len() != predictions.len() {
        return Err(Error::LengthMismatch { left: targets.len(), right: predictions.len() });
    }
    if targets.len() < 2 {
        return Err(Error::ZeroVariance);
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let ss_res: f64 = targets.iter().zip(predictions).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(100.0 * (1.0 - ss_res / ss_tot))
}

pub fn mae(targets: &[f64], predictions: &[f64]) -> Result<f64> {
    crate::nn::mae_loss(predictions, targets)
}

/// Predictions and targets in Mbps for one predictor on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub predictor: String,
    pub dataset: String,
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
}

impl PredictionResult {
    pub fn new(
        predictor: impl Into<String>,
        dataset: impl Into<String>,
        predictions: Vec<f64>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        if predictions.len() != targets.len() {
            return Err(Error::LengthMismatch { left: predictions.len(), right: targets.len() });
        }
        Ok(Self { predictor: predictor.into(), dataset: dataset.into(), predictions, targets })
    }

    pub fn r2(&self) -> Result<f64> {
        r2_score(&self.targets, &self.predictions)
    }

    pub fn mae(&self) -> Result<f64> {
        mae(&self.targets, &self.predictions)
    }
}

/// Runs the model over raw samples and returns predictions in Mbps.
pub fn predict_set(w: &ModelWeights, raw: &SampleSet) -> Result<Vec<f64>> {
    raw.inputs.iter().map(|x| w.predict_mbps(x)).collect()
}

/// `(R², MAE)` of the model on raw samples. R² is NaN when the targets
/// have no variance.
pub fn score_model(w: &ModelWeights, raw: &SampleSet) -> Result<(f64, f64)> {
    let preds = predict_set(w, raw)?;
    let r2 = match r2_score(&raw.targets, &preds) {
        Ok(v) => v,
        Err(Error::ZeroVariance) => f64::NAN,
        Err(e) => return Err(e),
    };
    Ok((r2, mae(&raw.targets, &preds)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn r2_examples() {
        assert_eq!(r2_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 100.0);
        assert_eq!(r2_score(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert!((r2_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn r2_negative_is_not_clamped() {
        assert!(r2_score(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() < -100.0);
    }

    #[test]
    fn r2_zero_variance() {
        assert!(matches!(r2_score(&[2.0, 2.0], &[1.0, 2.0]), Err(Error::ZeroVariance)));
        assert!(matches!(r2_score(&[2.0], &[1.0]), Err(Error::ZeroVariance)));
    }

    proptest! {
        #[test]
        fn r2_is_affine_invariant(
            pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..40),
            a in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0],
            b in -100.0f64..100.0,
        ) {
            let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let base = match r2_score(&y, &p) { Ok(v) => v, Err(_) => return Ok(()) };
            let y2: Vec<f64> = y.iter().map(|v| a * v + b).collect();
            let p2: Vec<f64> = p.iter().map(|v| a * v + b).collect();
            let moved = r2_score(&y2, &p2).unwrap();
            prop_assert!((base - moved).abs() <= 1e-9 * base.abs().max(1.0));
        }
    }
}
