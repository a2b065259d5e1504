use super::PredictiveOutput;
use crate::error::{contract, Error, Result};
use crate::numerics::{RngStream, Tensor, Var};

/// Sample count used for predictive estimates.
pub const DEFAULT_SAMPLES: usize = 500;

fn check_gate(g_prime: &Tensor, n: usize) -> Result<()> {
    if g_prime.shape() != [n] {
        return Err(Error::Shape(format!("output gate {:?} for {n} windows", g_prime.shape())));
    }
    if g_prime.data().iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(contract("output gate outside [0, 1]"));
    }
    Ok(())
}

/// `S` draws `mu_y + g' sigma_y eps`, shaped `[S, N, H, D]`.
pub fn sample_predictive(out: &PredictiveOutput, g_prime: &Tensor, rng: &mut RngStream, s: usize) -> Result<Tensor> {
    if s < 1 {
        return Err(contract("sample count must be at least 1"));
    }
    let shape = out.mu_y.shape().to_vec();
    if out.sigma_y.shape() != shape.as_slice() {
        return Err(Error::Shape(format!("mu_y {shape:?} vs sigma_y {:?}", out.sigma_y.shape())));
    }
    check_gate(g_prime, shape[0])?;
    let per = out.mu_y.len() / shape[0];
    let (mu, sd) = (out.mu_y.data(), out.sigma_y.data());
    let mut data = Vec::with_capacity(s * mu.len());
    for _ in 0..s {
        for (i, (&m, &sg)) in mu.iter().zip(sd).enumerate() {
            data.push(m + g_prime.data()[i / per] * sg * rng.normal());
        }
    }
    let mut full = vec![s];
    full.extend(shape);
    Tensor::new(full, data)
}

/// One differentiable draw `mu_y + g' sigma_y eps` with `eps` held fixed.
pub fn sample_predictive_var<'t>(mu_y: Var<'t>, sigma_y: Var<'t>, g_prime: Var<'t>, eps: Tensor) -> Result<Var<'t>> {
    let shape = mu_y.shape();
    if eps.shape() != shape.as_slice() || sigma_y.shape() != shape {
        return Err(Error::Shape(format!("predictive draw shapes {shape:?}, {:?}", eps.shape())));
    }
    let mut gshape = vec![shape[0]];
    gshape.extend(std::iter::repeat_n(1, shape.len() - 1));
    let g = g_prime.reshape(&gshape);
    Ok(mu_y + g * sigma_y * mu_y.tape().constant(eps))
}

fn median_of(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Elementwise mean and median over the leading sample axis.
pub fn point_forecast(samples: &Tensor) -> Result<(Tensor, Tensor)> {
    if samples.rank() < 1 {
        return Err(contract("samples need a leading sample axis"));
    }
    let s = samples.shape()[0];
    let rest = samples.shape()[1..].to_vec();
    let m = samples.len() / s;
    let mut mean = vec![0.0; m];
    let mut median = vec![0.0; m];
    let mut col = vec![0.0; s];
    for j in 0..m {
        for (k, c) in col.iter_mut().enumerate() {
            *c = samples.data()[k * m + j];
        }
        mean[j] = col.iter().sum::<f64>() / s as f64;
        median[j] = median_of(&mut col);
    }
    let shape = if rest.is_empty() { vec![1] } else { rest };
    Ok((Tensor::new(shape.clone(), mean)?, Tensor::new(shape, median)?))
}
