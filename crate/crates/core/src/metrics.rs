//! Point, normalised, robust and scale-free forecast error metrics.
//!
//! Definitions:
//!
//! * `mse`, `mae`: mean squared and absolute error.
//! * `nmse = mse / mean(y²)`, `nmae = mae / mean(|y|)`. A zero forecast
//!   scores exactly 1.
//! * `mse_median`, `mae_median`: medians of the per-point squared and
//!   absolute errors.
//! * `mape = mean(|y − ŷ| / |y|)`, refused when any `|y| ≤ ε`.
//! * `mase = mae / mean(|x_t − x_{t−m}|)` over the in-sample series `x` with
//!   seasonal lag `m`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAPE_EPSILON: f64 = 1e-8;
pub const DEFAULT_SEASON: usize = 24;
/// Number of columns in a rendered row.
pub const TABLE1_COLUMNS: usize = 8;
pub const TABLE1_HEADER: [&str; TABLE1_COLUMNS] = ["MSE", "MAE", "NMSE", "NMAE", "mSE", "mAE", "MAPE", "MASE"];
const MISSING: &str = "-";

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::Shape(format!("targets have {} points, forecasts {}", y.len(), yhat.len())));
    }
    if y.is_empty() {
        return Err(Error::EmptyInput("no points to score".into()));
    }
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    xs.sum::<f64>() / n as f64
}

/// Median with the midpoint of the central pair for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("median of nothing".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn point_metrics(y: &[f64], yhat: &[f64]) -> Result<(f64, f64)> {
    check_pair(y, yhat)?;
    let n = y.len();
    let mse = mean(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)), n);
    let mae = mean(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()), n);
    Ok((mse, mae))
}

pub fn normalized_metrics(y: &[f64], yhat: &[f64]) -> Result<(f64, f64)> {
    let (mse, mae) = point_metrics(y, yhat)?;
    let n = y.len();
    let power = mean(y.iter().map(|v| v * v), n);
    if power <= 0.0 {
        return Err(Error::UndefinedMetric { metric: "nmse", reason: "denominator mean(y^2) is zero".into() });
    }
    let level = mean(y.iter().map(|v| v.abs()), n);
    if level <= 0.0 {
        return Err(Error::UndefinedMetric { metric: "nmae", reason: "denominator mean(|y|) is zero".into() });
    }
    Ok((mse / power, mae / level))
}

pub fn robust_metrics(y: &[f64], yhat: &[f64]) -> Result<(f64, f64)> {
    check_pair(y, yhat)?;
    let sq: Vec<f64> = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).collect();
    let ab: Vec<f64> = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).collect();
    Ok((median(&sq)?, median(&ab)?))
}

pub fn mape(y: &[f64], yhat: &[f64], eps: f64) -> Result<f64> {
    check_pair(y, yhat)?;
    let bad: Vec<usize> = y.iter().enumerate().filter(|(_, v)| v.abs() <= eps).map(|(i, _)| i).collect();
    if !bad.is_empty() {
        let shown: Vec<String> = bad.iter().take(10).map(|i| i.to_string()).collect();
        let more = if bad.len() > 10 { format!(" and {} more", bad.len() - 10) } else { String::new() };
        return Err(Error::UndefinedMetric {
            metric: "mape",
            reason: format!("|y| <= {eps:e} at indices [{}]{more}", shown.join(", ")),
        });
    }
    Ok(mean(y.iter().zip(yhat).map(|(a, b)| (a - b).abs() / a.abs()), y.len()))
}

/// Mean absolute error of the seasonal-naive forecast `x_{t−season}` on `insample`.
pub fn seasonal_naive_mae(insample: &[f64], season: usize) -> Result<f64> {
    if season == 0 {
        return Err(Error::Config("seasonal lag must be positive".into()));
    }
    if insample.len() <= season {
        return Err(Error::InsufficientData { required: season + 1, available: insample.len() });
    }
    let n = insample.len() - season;
    Ok(mean((season..insample.len()).map(|t| (insample[t] - insample[t - season]).abs()), n))
}

pub fn mase(y: &[f64], yhat: &[f64], insample: &[f64], season: usize) -> Result<f64> {
    let (_, mae) = point_metrics(y, yhat)?;
    let scale = seasonal_naive_mae(insample, season)?;
    if scale <= 0.0 {
        return Err(Error::UndefinedMetric { metric: "mase", reason: "seasonal-naive in-sample error is zero".into() });
    }
    Ok(mae / scale)
}

pub fn scale_free_metrics(y: &[f64], yhat: &[f64], insample: &[f64], season: usize) -> Result<(f64, f64)> {
    Ok((mape(y, yhat, MAPE_EPSILON)?, mase(y, yhat, insample, season)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub horizon: usize,
    pub n_points: usize,
    pub mse: f64,
    pub mae: f64,
    pub nmse: f64,
    pub nmae: f64,
    pub mse_median: f64,
    pub mae_median: f64,
    /// `None` when some target is within ε of zero.
    pub mape: Option<f64>,
    /// `None` when the seasonal-naive denominator is zero or unavailable.
    pub mase: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shock: Option<Box<MetricsReport>>,
}

/// Flattened targets and forecasts plus what the scale-free metrics need.
#[derive(Clone, Debug)]
pub struct ReportInputs<'a> {
    pub y: &'a [f64],
    pub yhat: &'a [f64],
    pub insample: &'a [f64],
    pub season: usize,
    pub horizon: usize,
    pub split: &'a str,
}

fn undefined_to_none(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric { metric, reason }) => {
            log::warn!("{metric} undefined: {reason}");
            Ok(None)
        }
        Err(Error::InsufficientData { required, available }) => {
            log::warn!("mase undefined: in-sample series has {available} points, needs {required}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

pub fn compute_report(inputs: &ReportInputs<'_>) -> Result<MetricsReport> {
    let (mse, mae) = point_metrics(inputs.y, inputs.yhat)?;
    let (nmse, nmae) = normalized_metrics(inputs.y, inputs.yhat)?;
    let (mse_median, mae_median) = robust_metrics(inputs.y, inputs.yhat)?;
    let mape = undefined_to_none(mape(inputs.y, inputs.yhat, MAPE_EPSILON))?;
    let mase = undefined_to_none(mase(inputs.y, inputs.yhat, inputs.insample, inputs.season))?;
    Ok(MetricsReport {
        split: inputs.split.to_string(),
        horizon: inputs.horizon,
        n_points: inputs.y.len(),
        mse,
        mae,
        nmse,
        nmae,
        mse_median,
        mae_median,
        mape,
        mase,
        shock: None,
    })
}

/// Recomputes every metric on the points whose label equals `shock_label`.
pub fn shock_slice(inputs: &ReportInputs<'_>, labels: &[usize], shock_label: usize) -> Result<MetricsReport> {
    if labels.len() != inputs.y.len() {
        return Err(Error::Alignment {
            index: labels.len().min(inputs.y.len()),
            reason: format!("{} labels for {} targets", labels.len(), inputs.y.len()),
        });
    }
    let (y, yhat): (Vec<f64>, Vec<f64>) = labels
        .iter()
        .zip(inputs.y.iter().zip(inputs.yhat))
        .filter(|(l, _)| **l == shock_label)
        .map(|(_, (a, b))| (*a, *b))
        .unzip();
    if y.is_empty() {
        return Err(Error::EmptyInput(format!("no points carry label {shock_label}")));
    }
    let split = format!("{}-shock", inputs.split);
    compute_report(&ReportInputs { y: &y, yhat: &yhat, split: &split, ..inputs.clone() })
}

impl MetricsReport {
    /// Values in table column order.
    pub fn columns(&self) -> [Option<f64>; TABLE1_COLUMNS] {
        [
            Some(self.mse),
            Some(self.mae),
            Some(self.nmse),
            Some(self.nmae),
            Some(self.mse_median),
            Some(self.mae_median),
            self.mape,
            self.mase,
        ]
    }
}

/// Renders the eight metrics at four decimals, comma separated.
pub fn format_table1_row(report: &MetricsReport) -> String {
    format_columns(&report.columns())
}

pub fn format_columns(cols: &[Option<f64>; TABLE1_COLUMNS]) -> String {
    cols.iter()
        .map(|c| match c {
            Some(v) => format!("{v:.4}"),
            None => MISSING.to_string(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn parse_table1_row(row: &str) -> Result<[Option<f64>; TABLE1_COLUMNS]> {
    let fields: Vec<&str> = row.split(',').map(str::trim).collect();
    if fields.len() != TABLE1_COLUMNS {
        return Err(Error::Schema(format!("expected {TABLE1_COLUMNS} fields, found {}", fields.len())));
    }
    let mut out = [None; TABLE1_COLUMNS];
    for (slot, f) in out.iter_mut().zip(&fields) {
        if *f != MISSING {
            *slot = Some(f.parse::<f64>().map_err(|e| Error::Schema(format!("field {f:?}: {e}")))?);
        }
    }
    Ok(out)
}
