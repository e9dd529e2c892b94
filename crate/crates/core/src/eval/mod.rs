//! Metrics, lightweight baseline predictors and the cross-dataset
//! evaluation matrix.

mod baseline;
mod matrix;
mod metrics;

pub use baseline::{ar_fit_predict, ewma_predict, harmonic_mean_predict, ArModel, HARMONIC_FLOOR_MBPS};
pub use matrix::{cross_eval, evaluate_kind, evaluate_model, EvalMatrix, ModelKind};
pub use metrics::{mae, predict_set, r2_score, score_model, PredictionResult};
