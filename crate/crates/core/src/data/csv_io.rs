use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use super::TimeSeries;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Result of [`load_csv_series`].
#[derive(Clone, Debug)]
pub struct CsvLoad {
    pub series: TimeSeries,
    /// Rows dropped because a timestamp or value failed to parse.
    pub rejected: usize,
}

/// Integer epoch / index, RFC 3339, or naive ISO-8601 (read as UTC seconds).
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let s = raw.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

fn parse_value(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Read a headed CSV into a [`TimeSeries`], sorted by timestamp.
///
/// Rows whose timestamp or any selected value fails to parse (including empty
/// and non-finite cells) are dropped and counted; missing values are never
/// imputed. Duplicate timestamps are an error.
pub fn load_csv_series(path: &Path, value_columns: &[String], timestamp_column: &str) -> Result<CsvLoad> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("column {name:?} not found in {}", path.display())))
    };
    let ts_col = find(timestamp_column)?;
    let val_cols = value_columns.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    if val_cols.is_empty() {
        return Err(Error::Schema("no value columns selected".into()));
    }

    let mut rows: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    let mut rejected = 0;
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                rejected += 1;
                continue;
            }
        };
        let ts = record.get(ts_col).and_then(parse_timestamp);
        let vals: Option<Vec<f64>> = val_cols.iter().map(|&c| record.get(c).and_then(parse_value)).collect();
        match (ts, vals) {
            (Some(ts), Some(vals)) => {
                if rows.insert(ts, vals).is_some() {
                    return Err(Error::DuplicateTimestamp(
                        record.get(ts_col).unwrap_or_default().trim().to_string(),
                    ));
                }
            }
            _ => rejected += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("no usable rows in {}", path.display())));
    }
    let t = rows.len();
    let d = val_cols.len();
    let mut timestamps = Vec::with_capacity(t);
    let mut data = Vec::with_capacity(t * d);
    for (ts, vals) in rows {
        timestamps.push(ts);
        data.extend(vals);
    }
    let series = TimeSeries::new(timestamps, Tensor::new(vec![t, d], data)?, value_columns.to_vec())?;
    Ok(CsvLoad { series, rejected })
}

/// Write a series as `timestamp,<columns..>` plus optional extra columns.
pub fn write_csv_series(path: &Path, series: &TimeSeries, extra: &[(&str, &[f64])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(series.columns().iter().cloned());
    header.extend(extra.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header)?;
    for t in 0..series.len() {
        let mut rec = vec![series.timestamps()[t].to_string()];
        rec.extend(series.row(t).iter().map(|v| format!("{v:?}")));
        rec.extend(extra.iter().map(|(_, col)| format!("{:?}", col[t])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
