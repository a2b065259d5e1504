use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const STD_FLOOR: f64 = 1e-8;

/// Per-dimension z-score transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fit on a `(.., D)` tensor; standard deviations are floored at 1e-8.
    pub fn fit(values: &Tensor) -> Result<Self> {
        let d = *values.shape().last().ok_or_else(|| Error::Shape("cannot fit on a scalar".into()))?;
        let rows = values.len() / d;
        let mut mean = vec![0.0; d];
        for row in values.data().chunks(d) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; d];
        for row in values.data().chunks(d) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|v| (v / rows as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn identity(d: usize) -> Self {
        Self { mean: vec![0.0; d], std: vec![1.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, t: &Tensor) -> Result<()> {
        if t.shape().last() != Some(&self.dim()) {
            return Err(Error::Shape(format!("standardizer for D = {} applied to {:?}", self.dim(), t.shape())));
        }
        Ok(())
    }

    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        self.check(t)?;
        let d = self.dim();
        let mut out = t.clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x = (*x - self.mean[i % d]) / self.std[i % d];
        }
        Ok(out)
    }

    pub fn invert(&self, t: &Tensor) -> Result<Tensor> {
        self.check(t)?;
        let d = self.dim();
        let mut out = t.clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x = *x * self.std[i % d] + self.mean[i % d];
        }
        Ok(out)
    }

    /// Map standardised scales back to the original units.
    pub fn invert_scale(&self, t: &Tensor) -> Result<Tensor> {
        self.check(t)?;
        let d = self.dim();
        let mut out = t.clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x *= self.std[i % d];
        }
        Ok(out)
    }
}
