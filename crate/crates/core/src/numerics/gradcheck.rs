//! Central-difference gradient oracle.

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{contract, Error, Result};

/// Floor on the denominator of [`relative_error`] so that gradients that are
/// zero up to rounding compare by absolute difference.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// Central differences `(f(x+h) - f(x-h)) / 2h` for every element of every
/// parameter in `params`.
///
/// `loss_fn` must be deterministic (noise frozen by reseeding inside it). The
/// oracle evaluates the unperturbed loss twice and refuses to proceed if the
/// two results differ in any bit.
pub fn finite_difference_gradient<F>(params: &ParamStore, step: f64, mut loss_fn: F) -> Result<Vec<Tensor>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(contract(format!("finite-difference step must be positive, got {step}")));
    }
    let base_a = loss_fn(params)?;
    let base_b = loss_fn(params)?;
    if base_a.to_bits() != base_b.to_bits() {
        return Err(Error::OracleInvalid(format!(
            "loss is not deterministic: {base_a:e} vs {base_b:e}"
        )));
    }
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for pid in params.ids() {
        let n = params.get(pid).value.len();
        let mut g = vec![0.0; n];
        for (i, gi) in g.iter_mut().enumerate() {
            let x0 = params.get(pid).value.data()[i];
            probe.get_mut(pid).value.data_mut()[i] = x0 + step;
            let fp = loss_fn(&probe)?;
            probe.get_mut(pid).value.data_mut()[i] = x0 - step;
            let fm = loss_fn(&probe)?;
            probe.get_mut(pid).value.data_mut()[i] = x0;
            *gi = (fp - fm) / (2.0 * step);
        }
        out.push(Tensor::new(params.get(pid).value.shape().to_vec(), g)?);
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

pub fn max_relative_error(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| relative_error(x, y)).fold(0.0, f64::max)
}
