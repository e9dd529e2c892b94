use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::baseline::ArModel;
use super::metrics::{predict_set, r2_score, PredictionResult};
use crate::error::{Error, Result};
use crate::federation::RoundConfig;
use crate::nn::{train, ModelShape, ModelWeights, TrainConfig};
use crate::preprocess::{split_dataset, PreparedSplit, SampleSet};
use crate::trace::TraceDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Bootstrap weights retrained on the row dataset.
    Ctfl,
    /// Fresh model trained on the row dataset only.
    PlainLstm,
    /// Autoregressive model on raw throughput.
    Baseline,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ctfl => "ctfl",
            ModelKind::PlainLstm => "plain_lstm",
            ModelKind::Baseline => "baseline",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ctfl" => Ok(ModelKind::Ctfl),
            "plain_lstm" | "plain-lstm" | "lstm" => Ok(ModelKind::PlainLstm),
            "baseline" | "ar" => Ok(ModelKind::Baseline),
            other => Err(Error::InvalidConfig(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Percentage R² with training datasets as rows and test datasets as
/// columns. Failed cells hold NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalMatrix {
    pub tags: Vec<String>,
    pub cells: Vec<Vec<f64>>,
}

impl EvalMatrix {
    pub fn get(&self, train: &str, test: &str) -> Option<f64> {
        let r = self.tags.iter().position(|t| t == train)?;
        let c = self.tags.iter().position(|t| t == test)?;
        Some(self.cells[r][c])
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let cell = |v: f64| if v.is_finite() { format!("{v:.2}") } else { "NaN".to_string() };
        writeln!(out, "train\\test,{}", self.tags.join(","))?;
        for (tag, row) in self.tags.iter().zip(&self.cells) {
            let vals: Vec<String> = row.iter().map(|&v| cell(v)).collect();
            writeln!(out, "{tag},{}", vals.join(","))?;
        }
        Ok(())
    }
}

/// A predictor trained on one dataset, applied to raw test samples.
enum Fitted {
    Model(ModelWeights),
    Ar(ArModel),
}

fn fit(
    kind: ModelKind,
    ds: &TraceDataset,
    cfg: &RoundConfig,
    tcfg: &TrainConfig,
    bootstrap: Option<&ModelWeights>,
) -> Result<Fitted> {
    if kind == ModelKind::Baseline {
        let (train_ds, _) = split_dataset(ds, cfg.train_fraction);
        return Ok(Fitted::Ar(ArModel::fit(&train_ds.throughput(), cfg.history)?));
    }
    let data = PreparedSplit::new(ds, cfg.sigma, cfg.history, cfg.horizon, cfg.train_fraction, cfg.scaler_mode)?;
    let start = match kind {
        ModelKind::Ctfl => {
            let boot =
                bootstrap.ok_or_else(|| Error::InvalidConfig("ctfl evaluation needs bootstrap weights".into()))?;
            if boot.shape().input_dim != data.train.input_dim {
                return Err(Error::ShapeMismatch(format!(
                    "bootstrap expects {} input channels, dataset '{}' has {}",
                    boot.shape().input_dim,
                    ds.client_id(),
                    data.train.input_dim
                )));
            }
            boot.clone()
        }
        _ => ModelWeights::new(ModelShape::new(data.train.input_dim, cfg.hidden), tcfg.seed),
    };
    let (mut w, _) = train(&start, &data.scaler.apply(&data.train)?, tcfg)?;
    w.scaler = Some(data.scaler);
    Ok(Fitted::Model(w))
}

/// Raw test samples of `ds` and, aligned with them, the raw throughput
/// history preceding each target.
fn test_part(ds: &TraceDataset, cfg: &RoundConfig) -> Result<(SampleSet, Vec<Vec<f64>>)> {
    let (_, test_ds) = split_dataset(ds, cfg.train_fraction);
    let samples = crate::preprocess::preprocess_samples(&test_ds, cfg.sigma, cfg.history, cfg.horizon)?;
    let y = test_ds.throughput();
    let histories = (0..samples.len()).map(|j| y[j..j + cfg.history].to_vec()).collect();
    Ok((samples, histories))
}

fn predict(f: &Fitted, samples: &SampleSet, histories: &[Vec<f64>], horizon: usize) -> Result<Vec<f64>> {
    match f {
        Fitted::Model(w) => predict_set(w, samples),
        Fitted::Ar(m) => histories.iter().map(|h| m.forecast_mean(h, horizon)).collect(),
    }
}

/// Trains `kind` on the train split of `ds` and predicts its test split.
pub fn evaluate_kind(
    kind: ModelKind,
    ds: &TraceDataset,
    cfg: &RoundConfig,
    tcfg: &TrainConfig,
    bootstrap: Option<&ModelWeights>,
) -> Result<PredictionResult> {
    let fitted = fit(kind, ds, cfg, tcfg, bootstrap)?;
    let (samples, histories) = test_part(ds, cfg)?;
    let preds = predict(&fitted, &samples, &histories, cfg.horizon)?;
    PredictionResult::new(kind.as_str(), ds.client_id(), preds, samples.targets)
}

/// Test-split predictions of a fixed model. With `refit_scaler` the scaler
/// is refitted on the dataset's own train split first.
pub fn evaluate_model(
    w: &ModelWeights,
    ds: &TraceDataset,
    cfg: &RoundConfig,
    refit_scaler: bool,
) -> Result<PredictionResult> {
    let data = PreparedSplit::new(ds, cfg.sigma, cfg.history, cfg.horizon, cfg.train_fraction, cfg.scaler_mode)?;
    if data.test.input_dim != w.shape().input_dim {
        return Err(Error::ShapeMismatch(format!(
            "model expects {} input channels, dataset '{}' has {}",
            w.shape().input_dim,
            ds.client_id(),
            data.test.input_dim
        )));
    }
    let mut model = w.clone();
    if refit_scaler || model.scaler.is_none() {
        model.scaler = Some(data.scaler);
    }
    let preds = predict_set(&model, &data.test)?;
    PredictionResult::new("model", ds.client_id(), preds, data.test.targets)
}

/// Square matrix: each row trains on 70% of its dataset, each column tests
/// on the held-out part of its dataset.
pub fn cross_eval(
    datasets: &[TraceDataset],
    kind: ModelKind,
    cfg: &RoundConfig,
    tcfg: &TrainConfig,
    bootstrap: Option<&ModelWeights>,
) -> Result<EvalMatrix> {
    if datasets.len() < 2 {
        return Err(Error::InvalidConfig("cross evaluation needs at least two datasets".into()));
    }
    cfg.validate()?;
    tcfg.validate()?;
    if kind == ModelKind::Ctfl && bootstrap.is_none() {
        return Err(Error::InvalidConfig("ctfl evaluation needs bootstrap weights".into()));
    }
    let tags: Vec<String> = datasets.iter().map(|d| d.client_id().to_string()).collect();
    let tests: Vec<Option<(SampleSet, Vec<Vec<f64>>)>> = datasets
        .iter()
        .map(|d| test_part(d, cfg).map_err(|e| log::warn!("no test split for '{}': {e}", d.client_id())).ok())
        .collect();
    let mut cells = vec![vec![f64::NAN; datasets.len()]; datasets.len()];
    for (r, ds) in datasets.iter().enumerate() {
        let fitted = match fit(kind, ds, cfg, tcfg, bootstrap) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("training on '{}' failed: {e}", ds.client_id());
                continue;
            }
        };
        for (c, test) in tests.iter().enumerate() {
            let Some((samples, histories)) = test else { continue };
            let cell = predict(&fitted, samples, histories, cfg.horizon).and_then(|p| r2_score(&samples.targets, &p));
            match cell {
                Ok(v) => cells[r][c] = v,
                Err(e) => log::warn!("cell {}x{} failed: {e}", tags[r], tags[c]),
            }
        }
    }
    Ok(EvalMatrix { tags, cells })
}
