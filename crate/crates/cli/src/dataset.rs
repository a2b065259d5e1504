use anyhow::{Context, Result};
use ugf_core::data::{
    load_csv_series, make_windows, synth_heteroskedastic, synth_regime_ar, HeteroSpec, RegimeArSpec, Standardizer,
    TimeSeries, WindowBatch,
};
use ugf_core::{Error, Tensor};

use crate::config::{DataConfig, DataSource, Split};

/// A loaded series plus whatever ground truth the source provides.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub series: TimeSeries,
    pub labels: Option<Vec<usize>>,
    pub sigma: Option<Vec<f64>>,
}

pub fn load_source(source: &DataSource, seed: u64) -> Result<Loaded> {
    Ok(match source {
        DataSource::RegimeAr { length, regimes, switch_prob, initial } => {
            let spec = RegimeArSpec { regimes: regimes.clone(), switch_prob: *switch_prob, initial: *initial };
            let s = synth_regime_ar(seed, *length, &spec)?;
            Loaded { series: s.series, labels: Some(s.labels), sigma: None }
        }
        DataSource::Heteroskedastic { length, mean, sigma } => {
            let spec = HeteroSpec { mean: mean.clone(), sigma: sigma.clone() };
            let s = synth_heteroskedastic(seed, *length, &spec)?;
            Loaded { series: s.series, labels: None, sigma: Some(s.sigma) }
        }
        DataSource::Csv { path, value_columns, timestamp_column } => {
            let load = load_csv_series(path, value_columns, timestamp_column)
                .with_context(|| format!("loading {}", path.display()))?;
            if load.rejected > 0 {
                log::warn!("{} rows of {} could not be parsed and were dropped", load.rejected, path.display());
            }
            Loaded { series: load.series, labels: None, sigma: None }
        }
    })
}

/// Standardised windows for the three chronological splits.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub raw: TimeSeries,
    pub standardizer: Standardizer,
    pub train: WindowBatch,
    pub val: WindowBatch,
    pub test: WindowBatch,
}

impl Dataset {
    pub fn split(&self, which: Split) -> &WindowBatch {
        match which {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Rows `[0, train_end)` feed training, `[train_end, val_end)` validation and
/// the rest testing. A window belongs to the split that holds all of its
/// targets; windows straddling a boundary are dropped.
pub fn build(series: &TimeSeries, cfg: &DataConfig, l: usize, h: usize, fitted: Option<&Standardizer>) -> Result<Dataset> {
    if series.len() < l + h {
        return Err(Error::InsufficientData { required: l + h, available: series.len() }.into());
    }
    let t = series.len();
    let train_end = (t as f64 * cfg.train_fraction).floor() as usize;
    let val_end = (t as f64 * (cfg.train_fraction + cfg.val_fraction)).floor() as usize;
    let standardizer = match fitted {
        Some(s) => s.clone(),
        None if cfg.standardize => Standardizer::fit(series.slice(0, train_end.max(1))?.values())?,
        None => Standardizer::identity(series.dim()),
    };
    let scaled = series.with_values(standardizer.apply(series.values())?)?;
    let all = make_windows(&scaled, l, h, cfg.stride)?;
    let mut rows = [Vec::new(), Vec::new(), Vec::new()];
    for (i, &o) in all.origin_indices.iter().enumerate() {
        let (first, last) = (o + 1, o + h);
        if last < train_end {
            rows[0].push(i);
        } else if first >= train_end && last < val_end {
            rows[1].push(i);
        } else if first >= val_end {
            rows[2].push(i);
        }
    }
    let pick = |r: &[usize], name: &str| {
        all.select(r).with_context(|| format!("the {name} split has no complete windows; lengthen the series"))
    };
    Ok(Dataset {
        raw: series.clone(),
        train: pick(&rows[0], "train")?,
        val: pick(&rows[1], "validation")?,
        test: pick(&rows[2], "test")?,
        standardizer,
    })
}

/// The `[L, D]` context ending at row `origin`, as a batch of one.
pub fn context_at(series: &TimeSeries, origin: usize, l: usize) -> Result<Tensor> {
    let d = series.dim();
    let start = origin + 1 - l;
    let data = series.values().data()[start * d..(origin + 1) * d].to_vec();
    Ok(Tensor::new(vec![1, l, d], data)?)
}
