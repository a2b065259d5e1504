//! Series ingestion, synthetic generators, rolling windows, chronological
//! splits and standardisation.

mod csv_io;
mod standardize;
mod synth;
mod windows;

pub use csv_io::{load_csv_series, parse_timestamp, write_csv_series, CsvLoad};
pub use standardize::Standardizer;
pub use synth::{
    synth_heteroskedastic, synth_regime_ar, HeteroSeries, HeteroSpec, MeanSpec, Regime, RegimeArSpec,
    RegimeSeries, SigmaSpec,
};
pub use windows::{chronological_split, make_windows, split_windows, WindowBatch};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Multivariate series with strictly increasing timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    timestamps: Vec<i64>,
    /// `(T, D)`
    values: Tensor,
    columns: Vec<String>,
}

impl TimeSeries {
    pub fn new(timestamps: Vec<i64>, values: Tensor, columns: Vec<String>) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::Shape(format!("series values must be (T, D), got {:?}", values.shape())));
        }
        if timestamps.len() != values.shape()[0] {
            return Err(Error::Shape(format!(
                "{} timestamps for {} rows",
                timestamps.len(),
                values.shape()[0]
            )));
        }
        if columns.len() != values.shape()[1] {
            return Err(Error::Shape(format!("{} column names for D = {}", columns.len(), values.shape()[1])));
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[1] <= w[0]) {
            return Err(if w[1] == w[0] {
                Error::DuplicateTimestamp(w[0].to_string())
            } else {
                Error::Contract(format!("timestamps not increasing at {} -> {}", w[0], w[1]))
            });
        }
        if !values.all_finite() {
            return Err(Error::Contract("series contains non-finite values".into()));
        }
        Ok(Self { timestamps, values, columns })
    }

    /// Univariate series indexed `0..T`.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let t = values.len();
        if t == 0 {
            return Err(Error::EmptyInput("series with no values".into()));
        }
        Self::new((0..t as i64).collect(), Tensor::new(vec![t, 1], values)?, vec!["value".into()])
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// Row `t` as a `D`-vector.
    pub fn row(&self, t: usize) -> &[f64] {
        let d = self.dim();
        &self.values.data()[t * d..(t + 1) * d]
    }

    /// Rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<TimeSeries> {
        if start >= end || end > self.len() {
            return Err(Error::EmptyInput(format!("slice {start}..{end} of series of length {}", self.len())));
        }
        let d = self.dim();
        let values = Tensor::new(vec![end - start, d], self.values.data()[start * d..end * d].to_vec())?;
        Ok(TimeSeries {
            timestamps: self.timestamps[start..end].to_vec(),
            values,
            columns: self.columns.clone(),
        })
    }

    /// Index of the first timestamp `>= ts`, if any.
    pub fn position_at_or_after(&self, ts: i64) -> Option<usize> {
        let i = self.timestamps.partition_point(|&x| x < ts);
        (i < self.len()).then_some(i)
    }

    pub fn with_values(&self, values: Tensor) -> Result<TimeSeries> {
        TimeSeries::new(self.timestamps.clone(), values, self.columns.clone())
    }
}
