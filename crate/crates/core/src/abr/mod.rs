//! Chunk-level adaptive-bitrate streaming simulator with an exhaustive MPC
//! controller and pluggable throughput predictors.

mod predictor;
mod study;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::TraceDataset;

pub use predictor::{
    ArPredictor, EwmaPredictor, HarmonicMeanPredictor, LstmPredictor, OraclePredictor, PredictionContext,
    PredictorSpec, ThroughputPredictor,
};
pub use study::{run_case_study, CaseStudy, SchemeSummary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitrateLadder {
    levels: Vec<f64>,
}

impl BitrateLadder {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::InvalidConfig("a bitrate ladder needs at least two levels".into()));
        }
        if levels.iter().any(|l| !(*l > 0.0)) || levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("bitrate levels must be positive and strictly ascending".into()));
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn rate(&self, level: usize) -> f64 {
        self.levels[level]
    }
}

impl Default for BitrateLadder {
    fn default() -> Self {
        Self { levels: vec![6.5, 10.0, 15.0, 20.0, 30.0, 50.0] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QoEParams {
    /// Penalty per Mbps of bitrate change between consecutive chunks.
    pub smoothness: f64,
    /// Penalty per second of rebuffering.
    pub rebuffer: f64,
}

impl Default for QoEParams {
    fn default() -> Self {
        Self { smoothness: 1.0, rebuffer: 4.3 }
    }
}

impl QoEParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothness >= 0.0 && self.rebuffer >= 0.0) {
            return Err(Error::InvalidConfig("QoE penalties must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub chunk_duration_s: f64,
    pub buffer_max_s: f64,
    pub video_length_s: f64,
    /// MPC lookahead in chunks.
    pub horizon: usize,
    pub ladder: BitrateLadder,
    pub qoe: QoEParams,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            chunk_duration_s: 4.0,
            buffer_max_s: 30.0,
            video_length_s: 250.0,
            horizon: 5,
            ladder: BitrateLadder::default(),
            qoe: QoEParams::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.qoe.validate()?;
        if !(self.chunk_duration_s > 0.0 && self.video_length_s > 0.0) {
            return Err(Error::InvalidConfig("chunk duration and video length must be positive".into()));
        }
        if !(self.buffer_max_s >= self.chunk_duration_s) {
            return Err(Error::InvalidConfig("buffer cap must hold at least one chunk".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("MPC horizon must be at least 1".into()));
        }
        Ok(())
    }

    /// Chunks needed to cover the video; a partial last chunk counts whole.
    pub fn chunk_count(&self) -> usize {
        (self.video_length_s / self.chunk_duration_s - 1e-9).ceil().max(1.0) as usize
    }
}

const STALL_EPS_S: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Controller {
    Mpc,
    /// Always the given ladder index after the startup chunk.
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkLog {
    pub level: usize,
    pub bitrate_mbps: f64,
    pub download_s: f64,
    pub rebuffer_s: f64,
    /// Time spent waiting for room in the buffer before this download.
    pub pause_s: f64,
    pub buffer_after_s: f64,
    pub predicted_mbps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSession {
    pub chunk_duration_s: f64,
    pub buffer_max_s: f64,
    /// Download time of the startup chunk; not counted as rebuffering.
    pub startup_delay_s: f64,
    pub chunks: Vec<ChunkLog>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QoeBreakdown {
    pub total: f64,
    pub per_chunk: f64,
    pub bitrate_sum: f64,
    pub variation_sum: f64,
    pub rebuffer_sum: f64,
}

/// `Σ b − μ·Σ|Δb| − λ·Σ rebuffer` over the session log.
pub fn qoe_score(session: &StreamSession, qoe: &QoEParams) -> Result<QoeBreakdown> {
    if session.chunks.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let bitrate_sum: f64 = session.chunks.iter().map(|c| c.bitrate_mbps).sum();
    let variation_sum: f64 = session.chunks.windows(2).map(|w| (w[1].bitrate_mbps - w[0].bitrate_mbps).abs()).sum();
    let rebuffer_sum: f64 = session.chunks.iter().map(|c| c.rebuffer_s).sum();
    let total = bitrate_sum - qoe.smoothness * variation_sum - qoe.rebuffer * rebuffer_sum;
    Ok(QoeBreakdown { total, per_chunk: total / session.chunks.len() as f64, bitrate_sum, variation_sum, rebuffer_sum })
}

/// Seconds needed to move `megabits` starting at `start_s` over a trace
/// that holds `mbps[i]` during `[i, i + 1)`.
pub fn download_time(mbps: &[f64], start_s: f64, megabits: f64) -> Result<f64> {
    let mut t = start_s;
    let mut left = megabits;
    while left > 0.0 {
        let idx = t.floor() as usize;
        let rate = *mbps.get(idx).ok_or(Error::TraceExhausted { at_s: t })?;
        let span = (idx + 1) as f64 - t;
        let capacity = rate * span;
        if capacity >= left {
            t += left / rate;
            break;
        }
        left -= capacity;
        t = (idx + 1) as f64;
    }
    Ok(t - start_s)
}

/// First level of the best plan over `predicted.len()` chunks under the
/// throughput forecast. Plans are enumerated in lexicographic order of
/// ladder indices and only a strictly better score replaces the incumbent,
/// so ties go to the lower level.
pub fn mpc_select_bitrate(buffer_s: f64, last_level: usize, predicted: &[f64], cfg: &SessionConfig) -> usize {
    let n = cfg.ladder.len();
    let h = predicted.len().max(1);
    let mut plan = vec![0usize; h];
    let mut best = (f64::NEG_INFINITY, 0usize);
    loop {
        let mut buf = buffer_s;
        let mut prev = cfg.ladder.rate(last_level);
        let mut score = 0.0;
        for (k, &lvl) in plan.iter().enumerate() {
            let rate = cfg.ladder.rate(lvl);
            let tput = predicted.get(k).copied().unwrap_or(predicted[0]).max(1e-9);
            let dt = cfg.chunk_duration_s * rate / tput;
            let rebuf = (dt - buf).max(0.0);
            buf = ((buf - dt).max(0.0) + cfg.chunk_duration_s).min(cfg.buffer_max_s);
            score += rate - cfg.qoe.smoothness * (rate - prev).abs() - cfg.qoe.rebuffer * rebuf;
            prev = rate;
        }
        if score > best.0 {
            best = (score, plan[0]);
        }
        // Odometer increment, last position fastest.
        let mut pos = h;
        loop {
            if pos == 0 {
                return best.1;
            }
            pos -= 1;
            plan[pos] += 1;
            if plan[pos] < n {
                break;
            }
            plan[pos] = 0;
        }
    }
}

/// Streams the whole video over `trace`. The first chunk is fetched at the
/// lowest level and playback starts once it arrives.
pub fn simulate_download(
    trace: &TraceDataset,
    cfg: &SessionConfig,
    predictor: &mut dyn ThroughputPredictor,
    controller: Controller,
) -> Result<StreamSession> {
    cfg.validate()?;
    if let Controller::Fixed(l) = controller {
        if l >= cfg.ladder.len() {
            return Err(Error::InvalidConfig(format!("fixed level {l} is outside the ladder")));
        }
    }
    let mbps = trace.throughput();
    let records = trace.records();
    let cd = cfg.chunk_duration_s;
    let total = cfg.chunk_count();
    let startup = download_time(&mbps, 0.0, cd * cfg.ladder.rate(0))?;
    let mut t = startup;
    let mut buffer = cd;
    let mut last_level = 0;
    let mut last_chunk_mbps = cd * cfg.ladder.rate(0) / startup.max(1e-12);
    let mut chunks = vec![ChunkLog {
        level: 0,
        bitrate_mbps: cfg.ladder.rate(0),
        download_s: startup,
        rebuffer_s: 0.0,
        pause_s: 0.0,
        buffer_after_s: buffer,
        predicted_mbps: None,
    }];
    for k in 1..total {
        let pause = (buffer + cd - cfg.buffer_max_s).max(0.0);
        t += pause;
        buffer -= pause;
        let (level, predicted) = match controller {
            Controller::Fixed(l) => (l, None),
            Controller::Mpc => {
                let seen = (t.floor() as usize).min(records.len());
                let ctx =
                    PredictionContext { now_s: t, observed: &records[..seen], schema: trace.schema(), last_chunk_mbps };
                let p = match predictor.predict(&ctx) {
                    Ok(p) => p,
                    Err(Error::InsufficientHistory { .. }) => last_chunk_mbps,
                    Err(e) => return Err(e),
                };
                let p = if p.is_finite() { p.max(0.0) } else { last_chunk_mbps };
                let h = cfg.horizon.min(total - k);
                (mpc_select_bitrate(buffer, last_level, &vec![p; h], cfg), Some(p))
            }
        };
        let rate = cfg.ladder.rate(level);
        let dt = download_time(&mbps, t, cd * rate)?;
        // Sub-nanosecond shortfalls are rounding noise, not stalls.
        let rebuf = if dt - buffer > STALL_EPS_S { dt - buffer } else { 0.0 };
        buffer = (buffer - dt).max(0.0) + cd;
        t += dt;
        last_level = level;
        last_chunk_mbps = cd * rate / dt.max(1e-12);
        chunks.push(ChunkLog {
            level,
            bitrate_mbps: rate,
            download_s: dt,
            rebuffer_s: rebuf,
            pause_s: pause,
            buffer_after_s: buffer,
            predicted_mbps: predicted,
        });
    }
    Ok(StreamSession { chunk_duration_s: cd, buffer_max_s: cfg.buffer_max_s, startup_delay_s: startup, chunks })
}

#[cfg(test)]
mod tests;
