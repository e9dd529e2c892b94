//! Canonical trace records and dataset ingestion.
//!
//! Every source is mapped onto one canonical column set. Feature values are
//! stored densely per record, aligned with the dataset's [`FeatureSchema`];
//! a missing optional value is `NaN` until [`normalize_schema`] imputes it.

mod ingest;
mod schema;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{parse_csv_reader, parse_csv_trace, write_canonical_csv, SourceMapping};
pub use schema::{normalize_schema, normalize_schema_with, FeatureMedians};
pub use synth::{synth_trace, LinearMap, Regime};

pub const TIMESTAMP: &str = "timestamp";
pub const SPEED: &str = "speed";
pub const RSRP: &str = "rsrp";
pub const HANDOVER_COUNT: &str = "handover_count";
pub const DISTANCE_TO_CELL: &str = "distance_to_cell";
pub const DATA_STATE: &str = "data_state";
pub const THROUGHPUT: &str = "throughput";

/// Canonical feature columns, in canonical CSV order.
pub const CANONICAL_FEATURES: [&str; 5] = [SPEED, RSRP, HANDOVER_COUNT, DISTANCE_TO_CELL, DATA_STATE];

/// Features that may be absent from a source and get a fill value instead of
/// failing normalization.
pub const OPTIONAL_FEATURES: [&str; 2] = [DISTANCE_TO_CELL, DATA_STATE];

/// Categorical columns pass through smoothing untouched.
pub const CATEGORICAL_FEATURES: [&str; 1] = [DATA_STATE];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceTag {
    #[serde(rename = "4G")]
    FourG,
    #[serde(rename = "SIM5G")]
    Sim5g,
    #[serde(rename = "LUMOS")]
    Lumos,
    #[serde(rename = "IRISH")]
    Irish,
    #[serde(rename = "MNWILD")]
    MnWild,
    #[serde(rename = "SYNTH")]
    Synth,
}

impl SourceTag {
    pub const ALL: [SourceTag; 6] =
        [SourceTag::FourG, SourceTag::Sim5g, SourceTag::Lumos, SourceTag::Irish, SourceTag::MnWild, SourceTag::Synth];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::FourG => "4G",
            SourceTag::Sim5g => "SIM5G",
            SourceTag::Lumos => "LUMOS",
            SourceTag::Irish => "IRISH",
            SourceTag::MnWild => "MNWILD",
            SourceTag::Synth => "SYNTH",
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SourceTag::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown source tag '{s}'")))
    }
}

/// Ordered model input features. The model sees one extra channel per
/// timestep, the historical throughput, so `input_dim = len + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    feature_names: Vec<String>,
}

impl FeatureSchema {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut feature_names: Vec<String> = Vec::with_capacity(names.len());
        for name in names {
            let name = name.as_ref();
            if !CANONICAL_FEATURES.contains(&name) {
                return Err(Error::InvalidConfig(format!("'{name}' is not a canonical feature")));
            }
            if feature_names.iter().any(|n| n == name) {
                return Err(Error::InvalidConfig(format!("duplicate feature '{name}'")));
            }
            feature_names.push(name.to_string());
        }
        Ok(Self { feature_names })
    }

    /// Feature columns in canonical order, keeping only those in `present`.
    pub(crate) fn canonical_subset(present: &[&str]) -> Self {
        let feature_names = CANONICAL_FEATURES.iter().filter(|f| present.contains(f)).map(|f| f.to_string()).collect();
        Self { feature_names }
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn len(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_names.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.feature_names.len() + 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::canonical_subset(&CANONICAL_FEATURES)
    }
}

/// One timestep. `features` is aligned with the owning dataset's schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Seconds since trace start.
    pub timestamp: f64,
    pub features: Vec<f64>,
    /// Downlink throughput in Mbps.
    pub throughput: f64,
}

/// Time-ordered records from one client source.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceDataset {
    client_id: String,
    source_tag: SourceTag,
    schema: FeatureSchema,
    records: Vec<TraceRecord>,
    dropped_count: usize,
}

impl TraceDataset {
    /// Builds a dataset, checking record width, time order and sign
    /// constraints. An empty record list is allowed here (chronological
    /// splits can produce one); ingestion rejects empty files.
    pub fn new(
        client_id: impl Into<String>,
        source_tag: SourceTag,
        schema: FeatureSchema,
        records: Vec<TraceRecord>,
    ) -> Result<Self> {
        let speed_idx = schema.index_of(SPEED);
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != schema.len() {
                return Err(Error::ShapeMismatch(format!(
                    "record {i} has {} features, schema has {}",
                    r.features.len(),
                    schema.len()
                )));
            }
            if !(r.throughput >= 0.0) {
                return Err(Error::InvalidConfig(format!("record {i}: negative or NaN throughput")));
            }
            if let Some(s) = speed_idx {
                if r.features[s] < 0.0 {
                    return Err(Error::InvalidConfig(format!("record {i}: negative speed")));
                }
            }
            if i > 0 && r.timestamp < records[i - 1].timestamp {
                return Err(Error::InvalidConfig(format!("record {i}: timestamp goes backwards")));
            }
        }
        Ok(Self { client_id: client_id.into(), source_tag, schema, records, dropped_count: 0 })
    }

    pub(crate) fn with_dropped(mut self, dropped: usize) -> Self {
        self.dropped_count = dropped;
        self
    }

    /// A throughput-only trace on a 1 s grid, with every feature set to zero.
    /// Handy for driving the ABR simulator with predictors that ignore features.
    pub fn from_throughput(client_id: impl Into<String>, mbps: &[f64]) -> Result<Self> {
        let schema = FeatureSchema::default();
        let records = mbps
            .iter()
            .enumerate()
            .map(|(i, &t)| TraceRecord { timestamp: i as f64, features: vec![0.0; schema.len()], throughput: t })
            .collect();
        Self::new(client_id, SourceTag::Synth, schema, records)
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    pub fn source_tag(&self) -> SourceTag {
        self.source_tag
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Rows discarded during ingestion because a field failed to parse.
    pub fn dropped_count(&self) -> usize {
        self.dropped_count
    }

    pub fn throughput(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.throughput).collect()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.schema.index_of(name)?;
        Some(self.records.iter().map(|r| r.features[idx]).collect())
    }

    pub fn rename(mut self, client_id: impl Into<String>) -> Self {
        self.client_id = client_id.into();
        self
    }

    /// Records `[start, end)` as a new dataset with the same identity.
    pub fn slice(&self, start: usize, end: usize) -> TraceDataset {
        TraceDataset {
            client_id: self.client_id.clone(),
            source_tag: self.source_tag,
            schema: self.schema.clone(),
            records: self.records[start..end].to_vec(),
            dropped_count: 0,
        }
    }

    /// Row-major `len × input_dim` channel matrix: schema features followed
    /// by throughput.
    pub fn channel_matrix(&self) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .map(|r| {
                let mut row = r.features.clone();
                row.push(r.throughput);
                row
            })
            .collect()
    }
}
