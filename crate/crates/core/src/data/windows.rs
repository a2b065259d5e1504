use super::TimeSeries;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Paired rolling windows: `contexts[n] = x[t-L+1..=t]`, `targets[n] = x[t+1..=t+H]`
/// where `t = origin_indices[n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    /// `(N, L, D)`
    pub contexts: Tensor,
    /// `(N, H, D)`
    pub targets: Tensor,
    pub origin_indices: Vec<usize>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.origin_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin_indices.is_empty()
    }

    pub fn context_len(&self) -> usize {
        self.contexts.shape()[1]
    }

    pub fn horizon(&self) -> usize {
        self.targets.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.contexts.shape()[2]
    }

    /// Windows at the given positions, in that order.
    pub fn select(&self, rows: &[usize]) -> Result<WindowBatch> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("window selection is empty".into()));
        }
        let pick = |t: &Tensor| {
            let inner: usize = t.shape()[1..].iter().product();
            let mut data = Vec::with_capacity(rows.len() * inner);
            for &r in rows {
                data.extend_from_slice(&t.data()[r * inner..(r + 1) * inner]);
            }
            let mut shape = t.shape().to_vec();
            shape[0] = rows.len();
            Tensor::new(shape, data)
        };
        Ok(WindowBatch {
            contexts: pick(&self.contexts)?,
            targets: pick(&self.targets)?,
            origin_indices: rows.iter().map(|&r| self.origin_indices[r]).collect(),
        })
    }

    /// Consecutive mini-batches of at most `size` windows following `order`.
    pub fn batches(&self, order: &[usize], size: usize) -> Result<Vec<WindowBatch>> {
        order.chunks(size.max(1)).map(|c| self.select(c)).collect()
    }
}

fn build(series: &TimeSeries, l: usize, h: usize, origins: &[usize]) -> Result<WindowBatch> {
    if origins.is_empty() {
        return Err(Error::EmptyInput("no window origins".into()));
    }
    let d = series.dim();
    let src = series.values().data();
    let mut ctx = Vec::with_capacity(origins.len() * l * d);
    let mut tgt = Vec::with_capacity(origins.len() * h * d);
    for &t in origins {
        ctx.extend_from_slice(&src[(t + 1 - l) * d..(t + 1) * d]);
        tgt.extend_from_slice(&src[(t + 1) * d..(t + 1 + h) * d]);
    }
    Ok(WindowBatch {
        contexts: Tensor::new(vec![origins.len(), l, d], ctx)?,
        targets: Tensor::new(vec![origins.len(), h, d], tgt)?,
        origin_indices: origins.to_vec(),
    })
}

fn check_geometry(len: usize, l: usize, h: usize, stride: usize) -> Result<()> {
    if l == 0 || h == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "window geometry needs L, H, stride >= 1 (got {l}, {h}, {stride})"
        )));
    }
    if len < l + h {
        return Err(Error::InsufficientData { required: l + h, available: len });
    }
    Ok(())
}

/// All rolling windows with the given stride; origins start at `L - 1`.
pub fn make_windows(series: &TimeSeries, l: usize, h: usize, stride: usize) -> Result<WindowBatch> {
    check_geometry(series.len(), l, h, stride)?;
    let last = series.len() - h - 1;
    let origins: Vec<usize> = (l - 1..=last).step_by(stride).collect();
    build(series, l, h, &origins)
}

/// Split at a timestamp into `(train, test)`: train strictly before the
/// boundary, test at or after it.
pub fn chronological_split(series: &TimeSeries, boundary: i64) -> Result<(TimeSeries, TimeSeries)> {
    let ts = series.timestamps();
    let (first, last) = (ts[0], ts[ts.len() - 1]);
    if boundary <= first {
        return Err(Error::EmptyInput(format!("boundary {boundary} leaves an empty train split")));
    }
    if boundary > last {
        return Err(Error::EmptyInput(format!("boundary {boundary} leaves an empty test split")));
    }
    let cut = series.position_at_or_after(boundary).expect("boundary within range");
    Ok((series.slice(0, cut)?, series.slice(cut, series.len())?))
}

/// Windows for a chronological split at row `boundary`.
///
/// Train windows have every target index `< boundary`. Test windows have every
/// target index `>= boundary`; their contexts may reach back before the
/// boundary (warm context).
pub fn split_windows(
    series: &TimeSeries,
    boundary: usize,
    l: usize,
    h: usize,
    stride: usize,
) -> Result<(WindowBatch, WindowBatch)> {
    check_geometry(series.len(), l, h, stride)?;
    if boundary < l + h {
        return Err(Error::InsufficientData { required: l + h, available: boundary });
    }
    if boundary > series.len() - h || boundary < l {
        return Err(Error::EmptyInput(format!("boundary row {boundary} leaves no test window")));
    }
    let train: Vec<usize> = (l - 1..boundary - h).step_by(stride).collect();
    let first_test = (boundary - 1).max(l - 1);
    let test: Vec<usize> = (first_test..=series.len() - h - 1).step_by(stride).collect();
    Ok((build(series, l, h, &train)?, build(series, l, h, &test)?))
}
