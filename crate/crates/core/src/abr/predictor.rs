use crate::error::{Error, Result};
use crate::eval::{ewma_predict, harmonic_mean_predict, ArModel};
use crate::nn::ModelWeights;
use crate::preprocess::history_window;
use crate::trace::{FeatureSchema, TraceDataset, TraceRecord};

/// What a predictor may look at when a chunk is about to be requested.
pub struct PredictionContext<'a> {
    pub now_s: f64,
    /// Trace seconds that have fully elapsed.
    pub observed: &'a [TraceRecord],
    pub schema: &'a FeatureSchema,
    /// Throughput achieved by the previous chunk download.
    pub last_chunk_mbps: f64,
}

impl PredictionContext<'_> {
    fn recent_throughput(&self, seconds: usize) -> Vec<f64> {
        let start = self.observed.len().saturating_sub(seconds);
        self.observed[start..].iter().map(|r| r.throughput).collect()
    }
}

/// Forecast of the mean throughput over the next prediction window.
/// `InsufficientHistory` makes the simulator fall back to the last chunk's
/// measured throughput.
pub trait ThroughputPredictor {
    fn name(&self) -> &str;
    fn predict(&mut self, ctx: &PredictionContext<'_>) -> Result<f64>;
}

pub struct HarmonicMeanPredictor {
    pub window_s: usize,
}

impl ThroughputPredictor for HarmonicMeanPredictor {
    fn name(&self) -> &str {
        "harmonic_mean"
    }

    fn predict(&mut self, ctx: &PredictionContext<'_>) -> Result<f64> {
        harmonic_mean_predict(&ctx.recent_throughput(self.window_s))
    }
}

pub struct EwmaPredictor {
    pub alpha: f64,
    pub window_s: usize,
}

impl ThroughputPredictor for EwmaPredictor {
    fn name(&self) -> &str {
        "ewma"
    }

    fn predict(&mut self, ctx: &PredictionContext<'_>) -> Result<f64> {
        ewma_predict(&ctx.recent_throughput(self.window_s), self.alpha)
    }
}

/// AR(p) refitted on a sliding window of observed throughput.
pub struct ArPredictor {
    pub order: usize,
    pub fit_window_s: usize,
    pub horizon: usize,
}

impl ThroughputPredictor for ArPredictor {
    fn name(&self) -> &str {
        "ar"
    }

    fn predict(&mut self, ctx: &PredictionContext<'_>) -> Result<f64> {
        let hist = ctx.recent_throughput(self.fit_window_s);
        if hist.len() < 2 * self.order + 2 {
            return Err(Error::InsufficientHistory { have: hist.len(), need: 2 * self.order + 2 });
        }
        ArModel::fit(&hist, self.order)?.forecast_mean(&hist, self.horizon)
    }
}

/// Trained network applied to the filtered tail of the observed trace.
pub struct LstmPredictor {
    pub name: String,
    pub model: ModelWeights,
    pub sigma: f64,
    pub history: usize,
}

impl ThroughputPredictor for LstmPredictor {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&mut self, ctx: &PredictionContext<'_>) -> Result<f64> {
        let x = history_window(ctx.observed, ctx.schema, self.sigma, self.history)?;
        Ok(self.model.predict_mbps(&x)?.max(0.0))
    }
}

/// True mean throughput over the next `window_s` seconds.
pub struct OraclePredictor {
    pub mbps: Vec<f64>,
    pub window_s: f64,
}

impl ThroughputPredictor for OraclePredictor {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&mut self, ctx: &PredictionContext<'_>) -> Result<f64> {
        let (a, b) = (ctx.now_s, ctx.now_s + self.window_s);
        let mut area = 0.0;
        let mut covered = 0.0;
        let mut t = a;
        while t < b {
            let idx = t.floor() as usize;
            let Some(&rate) = self.mbps.get(idx) else { break };
            let end = ((idx + 1) as f64).min(b);
            area += rate * (end - t);
            covered += end - t;
            t = end;
        }
        if covered <= 0.0 {
            return Err(Error::InsufficientHistory { have: 0, need: 1 });
        }
        Ok(area / covered)
    }
}

/// Recipe for a predictor; instantiated per trace.
#[derive(Clone, Debug)]
pub enum PredictorSpec {
    HarmonicMean { window_s: usize },
    Ewma { alpha: f64, window_s: usize },
    Ar { order: usize, fit_window_s: usize, horizon: usize },
    Lstm { name: String, model: ModelWeights, sigma: f64, history: usize },
    Oracle { window_s: f64 },
}

impl PredictorSpec {
    pub fn harmonic_mean() -> Self {
        PredictorSpec::HarmonicMean { window_s: 5 }
    }

    pub fn ewma() -> Self {
        PredictorSpec::Ewma { alpha: 0.5, window_s: 10 }
    }

    pub fn ar() -> Self {
        PredictorSpec::Ar { order: 5, fit_window_s: 60, horizon: 1 }
    }

    pub fn oracle(window_s: f64) -> Self {
        PredictorSpec::Oracle { window_s }
    }

    pub fn name(&self) -> &str {
        match self {
            PredictorSpec::HarmonicMean { .. } => "harmonic_mean",
            PredictorSpec::Ewma { .. } => "ewma",
            PredictorSpec::Ar { .. } => "ar",
            PredictorSpec::Lstm { name, .. } => name,
            PredictorSpec::Oracle { .. } => "oracle",
        }
    }

    pub fn build(&self, trace: &TraceDataset) -> Box<dyn ThroughputPredictor> {
        match self.clone() {
            PredictorSpec::HarmonicMean { window_s } => Box::new(HarmonicMeanPredictor { window_s }),
            PredictorSpec::Ewma { alpha, window_s } => Box::new(EwmaPredictor { alpha, window_s }),
            PredictorSpec::Ar { order, fit_window_s, horizon } => {
                Box::new(ArPredictor { order, fit_window_s, horizon })
            }
            PredictorSpec::Lstm { name, model, sigma, history } => {
                Box::new(LstmPredictor { name, model, sigma, history })
            }
            PredictorSpec::Oracle { window_s } => Box::new(OraclePredictor { mbps: trace.throughput(), window_s }),
        }
    }
}
