//! Noise filtering, supervised windowing, chronological splits and scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{FeatureSchema, TraceDataset, TraceRecord, CATEGORICAL_FEATURES};

/// Smooths `series` with a discrete Gaussian kernel truncated at
/// `ceil(4 sigma)`. Near the edges the kernel is cut off and renormalized,
/// so the weights at every position sum to one.
pub fn gaussian_filter(series: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidSigma(sigma));
    }
    let radius = (4.0 * sigma).ceil() as usize;
    let kernel: Vec<f64> = (0..=radius).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let n = series.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(n.saturating_sub(1));
        let mut acc = 0.0;
        let mut norm = 0.0;
        for (j, &x) in series.iter().enumerate().take(hi + 1).skip(lo) {
            let w = kernel[i.abs_diff(j)];
            acc += w * x;
            norm += w;
        }
        out.push(acc / norm);
    }
    Ok(out)
}

/// Filters every numeric feature and the throughput channel. Categorical
/// channels are left alone. Returns the row-major channel matrix.
pub fn filtered_channels(ds: &TraceDataset, sigma: f64) -> Result<Vec<Vec<f64>>> {
    let mut rows = ds.channel_matrix();
    filter_rows(&mut rows, ds.schema(), sigma)?;
    Ok(rows)
}

fn filter_rows(rows: &mut [Vec<f64>], schema: &FeatureSchema, sigma: f64) -> Result<()> {
    let Some(dim) = rows.first().map(Vec::len) else {
        return Ok(());
    };
    for c in 0..dim {
        let categorical = c < schema.len() && CATEGORICAL_FEATURES.contains(&schema.feature_names()[c].as_str());
        if categorical {
            continue;
        }
        let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        for (row, v) in rows.iter_mut().zip(gaussian_filter(&col, sigma)?) {
            row[c] = v;
        }
    }
    Ok(())
}

/// Windowed supervised pairs. Each input is a `history × input_dim`
/// row-major matrix whose rows are one timestep's features followed by that
/// timestep's throughput; each target is the mean of the next `horizon` raw
/// throughput values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub history: usize,
    pub horizon: usize,
    pub input_dim: usize,
}

impl SampleSet {
    pub fn empty(history: usize, horizon: usize, input_dim: usize) -> Self {
        Self { inputs: Vec::new(), targets: Vec::new(), history, horizon, input_dim }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Appends another set with the same window shape.
    pub fn extend(&mut self, other: &SampleSet) -> Result<()> {
        if (other.history, other.horizon, other.input_dim) != (self.history, self.horizon, self.input_dim) {
            return Err(Error::ShapeMismatch("sample sets with different window shapes".into()));
        }
        self.inputs.extend(other.inputs.iter().cloned());
        self.targets.extend_from_slice(&other.targets);
        Ok(())
    }

    /// Debug dump: one row per sample, inputs flattened, target last.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> =
            (0..self.history).flat_map(|t| (0..self.input_dim).map(move |c| format!("x_t{t}_c{c}"))).collect();
        header.push("target".into());
        wtr.write_record(&header)?;
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            row.push(y.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn window(channels: &[Vec<f64>], raw_tput: &[f64], history: usize, horizon: usize) -> Result<SampleSet> {
    if history == 0 || horizon == 0 {
        return Err(Error::InvalidConfig("history and horizon must be at least 1".into()));
    }
    let len = raw_tput.len();
    let needed = history + horizon;
    if len < needed {
        return Err(Error::TraceTooShort { len, needed });
    }
    let input_dim = channels.first().map_or(0, Vec::len);
    let count = len - needed + 1;
    let mut set = SampleSet::empty(history, horizon, input_dim);
    set.inputs.reserve(count);
    set.targets.reserve(count);
    for i in history..=len - horizon {
        let mut x = Vec::with_capacity(history * input_dim);
        for row in &channels[i - history..i] {
            x.extend_from_slice(row);
        }
        let y = raw_tput[i..i + horizon].iter().sum::<f64>() / horizon as f64;
        set.inputs.push(x);
        set.targets.push(y);
    }
    Ok(set)
}

/// Windows `ds` as-is (no filtering). For `T` records this yields
/// `T - history - horizon + 1` samples.
pub fn create_samples(ds: &TraceDataset, history: usize, horizon: usize) -> Result<SampleSet> {
    window(&ds.channel_matrix(), &ds.throughput(), history, horizon)
}

/// Gaussian-filters the inputs, then windows them. Targets stay on the raw
/// throughput so metrics are reported in physical Mbps.
pub fn preprocess_samples(ds: &TraceDataset, sigma: f64, history: usize, horizon: usize) -> Result<SampleSet> {
    window(&filtered_channels(ds, sigma)?, &ds.throughput(), history, horizon)
}

/// Input window for one prediction from the tail of an observed history.
/// Filtering only sees `records`, so there is no look-ahead.
pub fn history_window(records: &[TraceRecord], schema: &FeatureSchema, sigma: f64, history: usize) -> Result<Vec<f64>> {
    if records.len() < history {
        return Err(Error::InsufficientHistory { have: records.len(), need: history });
    }
    let tail_len = (history + (4.0 * sigma).ceil() as usize).min(records.len());
    let mut rows: Vec<Vec<f64>> = records[records.len() - tail_len..]
        .iter()
        .map(|r| {
            let mut row = r.features.clone();
            row.push(r.throughput);
            row
        })
        .collect();
    filter_rows(&mut rows, schema, sigma)?;
    Ok(rows[rows.len() - history..].concat())
}

/// Chronological split: the first `floor(T * f)` records train, the rest test.
pub fn split_dataset(ds: &TraceDataset, train_fraction: f64) -> (TraceDataset, TraceDataset) {
    let n = ds.len();
    let cut = ((n as f64) * train_fraction).floor() as usize;
    let cut = cut.min(n);
    (ds.slice(0, cut), ds.slice(cut, n))
}

/// Chronological split of one trace into filtered train and test samples
/// plus a scaler fitted on the train part only. Samples stay in raw units.
#[derive(Clone, Debug)]
pub struct PreparedSplit {
    pub train: SampleSet,
    pub test: SampleSet,
    pub scaler: Scaler,
}

impl PreparedSplit {
    pub fn new(
        ds: &TraceDataset,
        sigma: f64,
        history: usize,
        horizon: usize,
        train_fraction: f64,
        mode: ScalerMode,
    ) -> Result<PreparedSplit> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!("train fraction {train_fraction} is outside (0, 1)")));
        }
        let (train_ds, test_ds) = split_dataset(ds, train_fraction);
        let train = preprocess_samples(&train_ds, sigma, history, horizon)?;
        let test = preprocess_samples(&test_ds, sigma, history, horizon)?;
        let scaler = Scaler::fit(&train, mode)?;
        Ok(PreparedSplit { train, test, scaler })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ScalerMode {
    #[default]
    MinMax,
    Standard,
}

/// Per-channel affine scaling `(v - lo) / (hi - lo)`. Min-max mode fits
/// `lo = min, hi = max`; standard mode fits `lo = mean, hi = mean + std`.
/// A constant channel gets `hi = lo + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub mode: ScalerMode,
    /// Channels whose spread was zero at fit time.
    pub degenerate: Vec<usize>,
}

impl Scaler {
    pub fn fit(train: &SampleSet, mode: ScalerMode) -> Result<Scaler> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let dim = train.input_dim;
        let rows = || train.inputs.iter().flat_map(|x| x.chunks_exact(dim));
        let mut lo = vec![0.0; dim];
        let mut hi = vec![0.0; dim];
        match mode {
            ScalerMode::MinMax => {
                lo.fill(f64::INFINITY);
                hi.fill(f64::NEG_INFINITY);
                for row in rows() {
                    for c in 0..dim {
                        lo[c] = lo[c].min(row[c]);
                        hi[c] = hi[c].max(row[c]);
                    }
                }
            }
            ScalerMode::Standard => {
                let n = rows().count() as f64;
                let mut mean = vec![0.0; dim];
                for row in rows() {
                    for c in 0..dim {
                        mean[c] += row[c] / n;
                    }
                }
                let mut var = vec![0.0; dim];
                for row in rows() {
                    for c in 0..dim {
                        var[c] += (row[c] - mean[c]).powi(2) / n;
                    }
                }
                for c in 0..dim {
                    lo[c] = mean[c];
                    hi[c] = mean[c] + var[c].sqrt();
                }
            }
        }
        let mut degenerate = Vec::new();
        for c in 0..dim {
            if !(hi[c] > lo[c]) {
                hi[c] = lo[c] + 1.0;
                degenerate.push(c);
            }
        }
        Ok(Scaler { lo, hi, mode, degenerate })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn target_channel(&self) -> usize {
        self.lo.len() - 1
    }

    pub fn scale_value(&self, channel: usize, v: f64) -> f64 {
        (v - self.lo[channel]) / (self.hi[channel] - self.lo[channel])
    }

    pub fn unscale_value(&self, channel: usize, v: f64) -> f64 {
        v * (self.hi[channel] - self.lo[channel]) + self.lo[channel]
    }

    pub fn scale_target(&self, y: f64) -> f64 {
        self.scale_value(self.target_channel(), y)
    }

    pub fn unscale_target(&self, y: f64) -> f64 {
        self.unscale_value(self.target_channel(), y)
    }

    /// Scales one flattened input window in place.
    pub fn scale_input(&self, x: &mut [f64]) {
        let dim = self.dim();
        for row in x.chunks_exact_mut(dim) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.scale_value(c, *v);
            }
        }
    }

    pub fn unscale_input(&self, x: &mut [f64]) {
        let dim = self.dim();
        for row in x.chunks_exact_mut(dim) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.unscale_value(c, *v);
            }
        }
    }

    /// Scales inputs and targets; targets use the throughput channel.
    pub fn apply(&self, set: &SampleSet) -> Result<SampleSet> {
        if set.input_dim != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "scaler has {} channels, samples have {}",
                self.dim(),
                set.input_dim
            )));
        }
        let mut out = set.clone();
        for x in out.inputs.iter_mut() {
            self.scale_input(x);
        }
        for y in out.targets.iter_mut() {
            *y = self.scale_target(*y);
        }
        Ok(out)
    }

    pub fn invert(&self, set: &SampleSet) -> SampleSet {
        let mut out = set.clone();
        for x in out.inputs.iter_mut() {
            self.unscale_input(x);
        }
        for y in out.targets.iter_mut() {
            *y = self.unscale_target(*y);
        }
        out
    }
}
