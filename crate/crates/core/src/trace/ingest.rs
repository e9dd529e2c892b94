use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDateTime;

use super::{
    FeatureSchema, SourceTag, TraceDataset, TraceRecord, CANONICAL_FEATURES, DATA_STATE, DISTANCE_TO_CELL,
    HANDOVER_COUNT, RSRP, SPEED, THROUGHPUT, TIMESTAMP,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TimeFormat {
    Seconds,
    Millis,
    /// `YYYY.MM.DD_hh.mm.ss`
    DottedStamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Handover {
    PerInterval,
    /// Running counter; differenced, resets clamp to zero.
    Cumulative,
    /// Serving-cell identifier; a change between rows is one handover.
    CellId,
}

#[derive(Clone, Copy, Debug)]
struct Alias {
    column: &'static str,
    scale: f64,
}

const fn a(column: &'static str) -> Alias {
    Alias { column, scale: 1.0 }
}

const fn scaled(column: &'static str, scale: f64) -> Alias {
    Alias { column, scale }
}

/// Source-specific header names for each canonical column. Canonical names
/// are accepted for every source in addition to these aliases.
#[derive(Clone, Debug)]
pub struct SourceMapping {
    time: &'static [(Alias, TimeFormat)],
    throughput: &'static [Alias],
    speed: &'static [Alias],
    rsrp: &'static [Alias],
    handover: &'static [(Alias, Handover)],
    distance: &'static [Alias],
    data_state: &'static [Alias],
}

impl SourceMapping {
    pub fn for_tag(tag: SourceTag) -> SourceMapping {
        use Handover::*;
        use TimeFormat::*;
        match tag {
            SourceTag::FourG => {
                const M: SourceMapping = SourceMapping {
                    time: &[(a("time_s"), Seconds), (a("timestamp_ms"), Millis)],
                    throughput: &[a("dl_throughput_mbps"), scaled("dl_throughput_kbps", 1e-3)],
                    speed: &[a("speed_mps"), scaled("speed_kmh", 1.0 / 3.6)],
                    rsrp: &[a("rsrp_dbm")],
                    handover: &[(a("handover_total"), Cumulative), (a("cell_id"), CellId)],
                    distance: &[a("cell_distance_m")],
                    data_state: &[a("data_activity")],
                };
                M
            }
            SourceTag::Sim5g => {
                const M: SourceMapping = SourceMapping {
                    time: &[(a("Time"), Seconds)],
                    throughput: &[a("DlThroughputMbps")],
                    speed: &[a("Speed")],
                    rsrp: &[a("Rsrp")],
                    handover: &[(a("HandoverCount"), Cumulative)],
                    distance: &[a("DistanceToGnb")],
                    data_state: &[],
                };
                M
            }
            SourceTag::Lumos => {
                const M: SourceMapping = SourceMapping {
                    time: &[(a("seq_num"), Seconds)],
                    throughput: &[a("Throughput")],
                    speed: &[a("movingSpeed")],
                    rsrp: &[a("nr_ssRsrp"), a("lte_rsrp")],
                    handover: &[(a("tower_id"), CellId)],
                    distance: &[],
                    data_state: &[a("nrStatus")],
                };
                M
            }
            SourceTag::Irish => {
                const M: SourceMapping = SourceMapping {
                    time: &[(a("Timestamp"), DottedStamp)],
                    throughput: &[scaled("DL_bitrate", 1e-3)],
                    speed: &[scaled("Speed", 1.0 / 3.6)],
                    rsrp: &[a("RSRP")],
                    handover: &[(a("CellID"), CellId)],
                    distance: &[],
                    data_state: &[a("State")],
                };
                M
            }
            SourceTag::MnWild => {
                const M: SourceMapping = SourceMapping {
                    time: &[(a("time"), Seconds)],
                    throughput: &[a("throughput_mbps")],
                    speed: &[a("speed_mps")],
                    rsrp: &[a("ss_rsrp")],
                    handover: &[(a("ho_total"), Cumulative), (a("pci"), CellId)],
                    distance: &[a("distance_m")],
                    data_state: &[a("radio_state")],
                };
                M
            }
            SourceTag::Synth => {
                const M: SourceMapping = SourceMapping {
                    time: &[(a("ts"), Seconds)],
                    throughput: &[a("tput")],
                    speed: &[],
                    rsrp: &[],
                    handover: &[(a("ho"), PerInterval)],
                    distance: &[a("dist")],
                    data_state: &[a("state")],
                };
                M
            }
        }
    }
}

fn find(header: &HashMap<&str, usize>, canonical: &str, aliases: &[Alias]) -> Option<(usize, f64)> {
    if let Some(&i) = header.get(canonical) {
        return Some((i, 1.0));
    }
    aliases.iter().find_map(|al| header.get(al.column).map(|&i| (i, al.scale)))
}

fn parse_time(s: &str, fmt: TimeFormat) -> Option<f64> {
    match fmt {
        TimeFormat::Seconds => s.parse::<f64>().ok().filter(|v| v.is_finite()),
        TimeFormat::Millis => s.parse::<f64>().ok().filter(|v| v.is_finite()).map(|v| v / 1000.0),
        TimeFormat::DottedStamp => {
            NaiveDateTime::parse_from_str(s, "%Y.%m.%d_%H.%M.%S").ok().map(|t| t.and_utc().timestamp() as f64)
        }
    }
}

/// Known radio/data state labels. Numeric cells are taken as codes directly.
fn state_code(s: &str) -> Option<f64> {
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let code = match s.to_ascii_uppercase().as_str() {
        "I" | "IDLE" | "NONE" | "DISCONNECTED" => 0.0,
        "D" | "DOWNLOADING" | "CONNECTED" | "ACTIVE" => 1.0,
        "NOT_RESTRICTED" => 2.0,
        "RESTRICTED" => 3.0,
        _ => return None,
    };
    Some(code)
}

enum Cell {
    Value(f64),
    Missing,
    Bad,
}

fn numeric(s: &str, scale: f64) -> Cell {
    if s.is_empty() {
        return Cell::Missing;
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Cell::Value(v * scale),
        _ => Cell::Bad,
    }
}

/// Reads a CSV trace of the given source kind from `path`. The client id is
/// the file stem.
pub fn parse_csv_trace(path: impl AsRef<Path>, source_tag: SourceTag) -> Result<TraceDataset> {
    let path = path.as_ref();
    let client_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "client".to_string());
    parse_csv_reader(File::open(path)?, source_tag, client_id)
}

pub fn parse_csv_reader<R: Read>(
    reader: R,
    source_tag: SourceTag,
    client_id: impl Into<String>,
) -> Result<TraceDataset> {
    let mapping = SourceMapping::for_tag(source_tag);
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let header: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();

    let (time_col, time_fmt) = if let Some(&i) = header.get(TIMESTAMP) {
        (i, TimeFormat::Seconds)
    } else {
        mapping
            .time
            .iter()
            .find_map(|(al, fmt)| header.get(al.column).map(|&i| (i, *fmt)))
            .ok_or_else(|| Error::MissingColumn(TIMESTAMP.into()))?
    };
    let (tput_col, tput_scale) =
        find(&header, THROUGHPUT, mapping.throughput).ok_or_else(|| Error::MissingColumn(THROUGHPUT.into()))?;

    let handover = if let Some(&i) = header.get(HANDOVER_COUNT) {
        Some((i, Handover::PerInterval))
    } else {
        mapping.handover.iter().find_map(|(al, enc)| header.get(al.column).map(|&i| (i, *enc)))
    };
    let speed = find(&header, SPEED, mapping.speed);
    let rsrp = find(&header, RSRP, mapping.rsrp);
    let distance = find(&header, DISTANCE_TO_CELL, mapping.distance);
    let state = find(&header, DATA_STATE, mapping.data_state).map(|(i, _)| i);

    let mut present = Vec::new();
    if speed.is_some() {
        present.push(SPEED);
    }
    if rsrp.is_some() {
        present.push(RSRP);
    }
    if handover.is_some() {
        present.push(HANDOVER_COUNT);
    }
    if distance.is_some() {
        present.push(DISTANCE_TO_CELL);
    }
    if state.is_some() {
        present.push(DATA_STATE);
    }
    let schema = FeatureSchema::canonical_subset(&present);

    // Raw handover cells are kept as strings until the surviving rows are
    // known, since cumulative and cell-id encodings depend on row order.
    let mut rows: Vec<(f64, Vec<f64>, f64, Option<String>)> = Vec::new();
    let mut dropped = 0usize;

    for result in rdr.records() {
        let rec = match result {
            Ok(r) => r,
            Err(_) => {
                dropped += 1;
                continue;
            }
        };
        let field = |i: usize| rec.get(i).unwrap_or("");
        let Some(ts) = parse_time(field(time_col), time_fmt) else {
            dropped += 1;
            continue;
        };
        let tput = match numeric(field(tput_col), tput_scale) {
            Cell::Value(v) if v >= 0.0 => v,
            _ => {
                dropped += 1;
                continue;
            }
        };
        let mut features = Vec::with_capacity(schema.len());
        let mut bad = false;
        for (col, scale) in [speed, rsrp].into_iter().flatten() {
            match numeric(field(col), scale) {
                Cell::Value(v) => features.push(v),
                Cell::Missing => features.push(f64::NAN),
                Cell::Bad => bad = true,
            }
        }
        let ho_raw = handover.map(|(i, _)| field(i).to_string());
        if handover.is_some() {
            // placeholder, resolved after filtering
            features.push(0.0);
        }
        if let Some((col, scale)) = distance {
            match numeric(field(col), scale) {
                Cell::Value(v) => features.push(v),
                Cell::Missing => features.push(f64::NAN),
                Cell::Bad => bad = true,
            }
        }
        if let Some(col) = state {
            let s = field(col);
            features.push(if s.is_empty() { f64::NAN } else { state_code(s).unwrap_or(f64::NAN) });
        }
        if let (Some(sidx), false) = (schema.index_of(SPEED), bad) {
            if features[sidx] < 0.0 {
                bad = true;
            }
        }
        if let (Some((_, enc)), Some(raw)) = (handover, ho_raw.as_deref()) {
            if enc != Handover::CellId && !raw.is_empty() && raw.parse::<f64>().map_or(true, |v| !v.is_finite()) {
                bad = true;
            }
        }
        if bad {
            dropped += 1;
            continue;
        }
        rows.push((ts, features, tput, ho_raw));
    }

    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    rows.sort_by(|x, y| x.0.total_cmp(&y.0));

    if let (Some((_, enc)), Some(ho_idx)) = (handover, schema.index_of(HANDOVER_COUNT)) {
        let mut prev: Option<String> = None;
        for row in rows.iter_mut() {
            let raw = row.3.take().unwrap_or_default();
            let value = match enc {
                Handover::PerInterval => raw.parse::<f64>().unwrap_or(f64::NAN).max(0.0),
                Handover::Cumulative => {
                    let cur = raw.parse::<f64>().unwrap_or(f64::NAN);
                    let diff = match prev.as_deref().and_then(|p| p.parse::<f64>().ok()) {
                        Some(p) if cur.is_finite() => (cur - p).max(0.0),
                        _ => 0.0,
                    };
                    diff
                }
                Handover::CellId => match prev.as_deref() {
                    Some(p) if !raw.is_empty() && !p.is_empty() && p != raw => 1.0,
                    _ => 0.0,
                },
            };
            if raw.is_empty() && enc == Handover::PerInterval {
                row.1[ho_idx] = f64::NAN;
            } else {
                row.1[ho_idx] = if value.is_nan() { f64::NAN } else { value };
            }
            if !raw.is_empty() {
                prev = Some(raw);
            }
        }
    }

    let t0 = rows[0].0;
    let records = rows
        .into_iter()
        .map(|(ts, features, throughput, _)| TraceRecord { timestamp: ts - t0, features, throughput })
        .collect();
    Ok(TraceDataset::new(client_id, source_tag, schema, records)?.with_dropped(dropped))
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Writes the canonical CSV form: `timestamp`, the dataset's features in
/// canonical order, then `throughput`. Missing values are empty cells.
pub fn write_canonical_csv<W: Write>(ds: &TraceDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let order: Vec<(usize, &str)> =
        CANONICAL_FEATURES.iter().filter_map(|f| ds.schema().index_of(f).map(|i| (i, *f))).collect();
    let mut header = vec![TIMESTAMP];
    header.extend(order.iter().map(|(_, f)| *f));
    header.push(THROUGHPUT);
    wtr.write_record(&header)?;
    for r in ds.records() {
        let mut row = vec![fmt_value(r.timestamp)];
        row.extend(order.iter().map(|(i, _)| fmt_value(r.features[*i])));
        row.push(fmt_value(r.throughput));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
