use std::collections::BTreeMap;

use super::{FeatureSchema, TraceDataset, TraceRecord, HANDOVER_COUNT, OPTIONAL_FEATURES};
use crate::error::{Error, Result};

/// Fill value for an optional feature the source never reports.
const ABSENT_OPTIONAL_FILL: f64 = 0.0;

/// Per-feature medians used to impute missing values. Fit on a training
/// split and reuse for the matching test split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureMedians {
    medians: BTreeMap<String, f64>,
}

impl FeatureMedians {
    pub fn fit(ds: &TraceDataset) -> Self {
        let mut medians = BTreeMap::new();
        for (i, name) in ds.schema().feature_names().iter().enumerate() {
            let mut vals: Vec<f64> = ds.records().iter().map(|r| r.features[i]).filter(|v| !v.is_nan()).collect();
            if let Some(m) = median(&mut vals) {
                medians.insert(name.clone(), m);
            }
        }
        Self { medians }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.medians.get(name).copied()
    }
}

fn median(vals: &mut [f64]) -> Option<f64> {
    if vals.is_empty() {
        return None;
    }
    vals.sort_by(f64::total_cmp);
    let n = vals.len();
    Some(if n % 2 == 1 { vals[n / 2] } else { 0.5 * (vals[n / 2 - 1] + vals[n / 2]) })
}

/// Projects `ds` onto `schema`, imputes missing values with the dataset's own
/// medians and resamples onto a uniform 1 s grid. Idempotent.
pub fn normalize_schema(ds: &TraceDataset, schema: &FeatureSchema) -> Result<TraceDataset> {
    normalize_schema_with(ds, schema, &FeatureMedians::fit(ds))
}

/// As [`normalize_schema`], imputing with externally fitted medians.
///
/// A schema feature with no values at all is an error unless it is optional
/// (distance to cell, data state), in which case it is filled with zero.
pub fn normalize_schema_with(
    ds: &TraceDataset,
    schema: &FeatureSchema,
    medians: &FeatureMedians,
) -> Result<TraceDataset> {
    let own = FeatureMedians::fit(ds);
    // (source index, fill value) per output feature
    let mut plan: Vec<(Option<usize>, f64)> = Vec::with_capacity(schema.len());
    for name in schema.feature_names() {
        let src = ds.schema().index_of(name);
        let fill = medians.get(name).or_else(|| own.get(name));
        match (src, fill) {
            (Some(i), Some(m)) => plan.push((Some(i), m)),
            _ if OPTIONAL_FEATURES.contains(&name.as_str()) => plan.push((None, ABSENT_OPTIONAL_FILL)),
            _ => return Err(Error::MissingColumn(name.clone())),
        }
    }

    let projected: Vec<TraceRecord> = ds
        .records()
        .iter()
        .map(|r| TraceRecord {
            timestamp: r.timestamp,
            features: plan
                .iter()
                .map(|&(src, fill)| match src {
                    Some(i) if !r.features[i].is_nan() => r.features[i],
                    _ => fill,
                })
                .collect(),
            throughput: r.throughput,
        })
        .collect();

    let records = resample_1hz(&projected, schema.index_of(HANDOVER_COUNT));
    TraceDataset::new(ds.client_id(), ds.source_tag(), schema.clone(), records)
}

/// Last observation carried forward onto `t0 + k` seconds. Handover events
/// are summed over each interval `(g - 1, g]` instead of carried.
fn resample_1hz(records: &[TraceRecord], handover: Option<usize>) -> Vec<TraceRecord> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    let t0 = first.timestamp;
    let span = records.last().map_or(0.0, |r| r.timestamp) - t0;
    let steps = span.floor() as usize + 1;
    let mut out = Vec::with_capacity(steps);
    let mut j = 0usize;
    for k in 0..steps {
        let g = t0 + k as f64;
        let mut events = 0.0;
        while j + 1 < records.len() && records[j + 1].timestamp <= g {
            j += 1;
            if let Some(h) = handover {
                events += records[j].features[h];
            }
        }
        let mut rec = records[j].clone();
        rec.timestamp = g;
        if let Some(h) = handover {
            // The first grid point owns the first record's events.
            rec.features[h] = if k == 0 { records[0].features[h] + events } else { events };
        }
        out.push(rec);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{SourceTag, DISTANCE_TO_CELL, RSRP, SPEED};

    fn ds(rows: &[(f64, [f64; 5], f64)]) -> TraceDataset {
        let records =
            rows.iter().map(|(t, f, y)| TraceRecord { timestamp: *t, features: f.to_vec(), throughput: *y }).collect();
        TraceDataset::new("c", SourceTag::Synth, FeatureSchema::default(), records).unwrap()
    }

    #[test]
    fn projection_keeps_only_schema_features() {
        let d = ds(&[(0.0, [1.0, -90.0, 0.0, 5.0, 1.0], 3.0), (1.0, [2.0, -91.0, 1.0, 6.0, 1.0], 4.0)]);
        let schema = FeatureSchema::new(&[SPEED, RSRP]).unwrap();
        let n = normalize_schema(&d, &schema).unwrap();
        assert_eq!(n.schema().len(), 2);
        assert_eq!(n.records()[1].features, vec![2.0, -91.0]);
        assert_eq!(n.throughput(), vec![3.0, 4.0]);
    }

    #[test]
    fn missing_values_take_the_median() {
        let nan = f64::NAN;
        let d = ds(&[
            (0.0, [1.0, -90.0, 0.0, 10.0, 1.0], 3.0),
            (1.0, [1.0, -90.0, 0.0, nan, 1.0], 3.0),
            (2.0, [1.0, -90.0, 0.0, 30.0, 1.0], 3.0),
            (3.0, [1.0, -90.0, 0.0, 40.0, 1.0], 3.0),
        ]);
        let n = normalize_schema(&d, &FeatureSchema::default()).unwrap();
        assert_eq!(n.column(DISTANCE_TO_CELL).unwrap(), vec![10.0, 30.0, 30.0, 40.0]);
    }

    #[test]
    fn no_overlap_is_missing_column() {
        let records = vec![TraceRecord { timestamp: 0.0, features: vec![], throughput: 1.0 }];
        let d = TraceDataset::new("c", SourceTag::Synth, FeatureSchema::new::<&str>(&[]).unwrap(), records).unwrap();
        assert!(matches!(normalize_schema(&d, &FeatureSchema::default()), Err(Error::MissingColumn(_))));
    }

    #[test]
    fn absent_optional_feature_is_filled() {
        let records = vec![TraceRecord { timestamp: 0.0, features: vec![1.0, -90.0, 0.0], throughput: 1.0 }];
        let schema = FeatureSchema::new(&[SPEED, RSRP, HANDOVER_COUNT]).unwrap();
        let d = TraceDataset::new("c", SourceTag::Irish, schema, records).unwrap();
        let n = normalize_schema(&d, &FeatureSchema::default()).unwrap();
        assert_eq!(n.records()[0].features, vec![1.0, -90.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn irregular_timestamps_resample_to_one_hertz() {
        let d = ds(&[
            (0.0, [1.0, -90.0, 1.0, 5.0, 1.0], 1.0),
            (0.5, [2.0, -90.0, 1.0, 5.0, 1.0], 2.0),
            (2.5, [3.0, -90.0, 0.0, 5.0, 1.0], 3.0),
            (3.0, [4.0, -90.0, 1.0, 5.0, 1.0], 4.0),
        ]);
        let n = normalize_schema(&d, &FeatureSchema::default()).unwrap();
        let ts: Vec<f64> = n.records().iter().map(|r| r.timestamp).collect();
        assert_eq!(ts, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(n.throughput(), vec![1.0, 2.0, 2.0, 4.0]);
        assert_eq!(n.column(HANDOVER_COUNT).unwrap(), vec![1.0, 1.0, 0.0, 1.0]);
    }
}
