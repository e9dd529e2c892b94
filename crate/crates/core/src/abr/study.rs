use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::predictor::PredictorSpec;
use super::{qoe_score, simulate_download, Controller, SessionConfig};
use crate::error::{Error, Result};
use crate::trace::TraceDataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: String,
    /// Per-chunk QoE averaged over traces.
    pub mean_qoe: f64,
    pub mean_bitrate_mbps: f64,
    pub mean_bitrate_variation_mbps: f64,
    pub mean_rebuffer_s_per_segment: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseStudy {
    pub summaries: Vec<SchemeSummary>,
    /// Per-chunk QoE of every trace, per scheme, in trace order.
    pub per_trace_qoe: Vec<Vec<f64>>,
}

impl CaseStudy {
    pub fn write_table_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.summaries {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One `ecdf_<scheme>.txt` per scheme, sorted values one per line.
    pub fn write_ecdf_files(&self, dir: impl AsRef<Path>) -> Result<()> {
        fs::create_dir_all(&dir)?;
        for (s, values) in self.summaries.iter().zip(&self.per_trace_qoe) {
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let body: String = sorted.iter().map(|v| format!("{v}\n")).collect();
            fs::write(dir.as_ref().join(format!("ecdf_{}.txt", s.scheme)), body)?;
        }
        Ok(())
    }
}

/// Runs every (trace, predictor) pair through the MPC controller.
pub fn run_case_study(traces: &[TraceDataset], predictors: &[PredictorSpec], cfg: &SessionConfig) -> Result<CaseStudy> {
    if traces.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if predictors.len() < 2 {
        return Err(Error::InvalidConfig("a case study compares at least two predictors".into()));
    }
    let mut summaries = Vec::with_capacity(predictors.len());
    let mut per_trace_qoe = Vec::with_capacity(predictors.len());
    for spec in predictors {
        let (mut qoe, mut bitrate, mut variation, mut rebuf) = (Vec::new(), 0.0, 0.0, 0.0);
        for trace in traces {
            let mut p = spec.build(trace);
            let session = simulate_download(trace, cfg, p.as_mut(), Controller::Mpc)?;
            let q = qoe_score(&session, &cfg.qoe)?;
            let n = session.chunks.len() as f64;
            qoe.push(q.per_chunk);
            bitrate += q.bitrate_sum / n;
            variation += q.variation_sum / (n - 1.0).max(1.0);
            rebuf += q.rebuffer_sum / n;
        }
        let t = traces.len() as f64;
        summaries.push(SchemeSummary {
            scheme: spec.name().to_string(),
            mean_qoe: qoe.iter().sum::<f64>() / t,
            mean_bitrate_mbps: bitrate / t,
            mean_bitrate_variation_mbps: variation / t,
            mean_rebuffer_s_per_segment: rebuf / t,
        });
        per_trace_qoe.push(qoe);
    }
    Ok(CaseStudy { summaries, per_trace_qoe })
}
