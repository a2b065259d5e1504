//! Risk-sensitive inference: a scalar risk score from the predictive scale,
//! threshold routing and the conservative actions (scale inflation, mean
//! smoothing towards the last observation, a larger sampling budget).

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::model::{sample_predictive, PredictiveOutput};
use crate::numerics::{RngStream, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoKind {
    #[default]
    L2Norm,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Standard,
    Robust,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActionSet {
    pub inflate: bool,
    pub smooth: bool,
    pub resample: bool,
}

impl Default for ActionSet {
    fn default() -> Self {
        Self { inflate: true, smooth: true, resample: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskPolicy {
    pub rho: RhoKind,
    /// Threshold; scores `<= tau` take the standard branch.
    pub tau: f64,
    /// Quantile of validation scores used by [`calibrate_tau`].
    pub tau_quantile: f64,
    pub kappa: f64,
    pub beta: f64,
    pub s_std: usize,
    pub s_rob: usize,
    pub actions: ActionSet,
}

impl Default for RiskPolicy {
    fn default() -> Self {
        Self {
            rho: RhoKind::L2Norm,
            tau: 1.0,
            tau_quantile: 0.9,
            kappa: 1.5,
            beta: 0.3,
            s_std: 500,
            s_rob: 2000,
            actions: ActionSet::default(),
        }
    }
}

impl RiskPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.kappa >= 1.0) || !self.kappa.is_finite() {
            return Err(Error::Config(format!("kappa must be >= 1, got {}", self.kappa)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if self.s_std < 1 || self.s_rob < self.s_std {
            return Err(Error::Config(format!(
                "sample budgets need s_rob >= s_std >= 1, got {} and {}",
                self.s_rob, self.s_std
            )));
        }
        if !(self.tau_quantile > 0.0 && self.tau_quantile < 1.0) {
            return Err(Error::Config(format!("tau_quantile must lie in (0, 1), got {}", self.tau_quantile)));
        }
        Ok(())
    }
}

/// `rho(sigma_y)`: Euclidean norm or maximum over all elements.
pub fn risk_score(sigma_y: &Tensor, rho: RhoKind) -> Result<f64> {
    if sigma_y.data().iter().any(|&s| !(s > 0.0)) {
        return Err(contract("predictive scale must be positive"));
    }
    Ok(match rho {
        RhoKind::L2Norm => sigma_y.data().iter().map(|s| s * s).sum::<f64>().sqrt(),
        RhoKind::Max => sigma_y.data().iter().cloned().fold(f64::MIN, f64::max),
    })
}

/// Standard at or below the threshold, robust above it.
pub fn select_action(r: f64, tau: f64) -> Action {
    if r <= tau {
        Action::Standard
    } else {
        Action::Robust
    }
}

/// Empirical `q`-quantile (linear interpolation between order statistics).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("quantile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(contract(format!("quantile level {q} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Threshold at the policy's quantile of validation risk scores.
pub fn calibrate_tau(scores: &[f64], policy: &RiskPolicy) -> Result<f64> {
    let tau = quantile(scores, policy.tau_quantile)?;
    if !(tau > 0.0) {
        return Err(contract(format!("calibrated threshold {tau} is not positive")));
    }
    Ok(tau)
}

/// Exponential smoothing along the horizon anchored at `anchor`:
/// `m_h = beta m_{h-1} + (1 - beta) mu_h`, `m_0 = anchor`. `mu` is `[H, D]`.
pub fn smooth_towards(mu: &[f64], anchor: &[f64], beta: f64) -> Vec<f64> {
    let d = anchor.len();
    let mut prev = anchor.to_vec();
    let mut out = Vec::with_capacity(mu.len());
    for row in mu.chunks(d) {
        for (p, &m) in prev.iter_mut().zip(row) {
            *p += (1.0 - beta) * (m - *p);
        }
        out.extend_from_slice(&prev);
    }
    out
}

/// Apply the enabled conservative actions to every window of `out`, in the
/// order inflate, smooth, resample. `last_observed` is `[N, D]` (or `[D]`
/// for a single window).
pub fn apply_conservative_action(
    out: &PredictiveOutput,
    last_observed: &Tensor,
    policy: &RiskPolicy,
    rng: &mut RngStream,
) -> Result<PredictiveOutput> {
    policy.validate()?;
    let shape = out.mu_y.shape().to_vec();
    if shape.len() != 3 || out.sigma_y.shape() != shape.as_slice() {
        return Err(Error::Shape(format!("predictive mean {shape:?} vs scale {:?}", out.sigma_y.shape())));
    }
    let (n, h, d) = (shape[0], shape[1], shape[2]);
    if last_observed.len() != n * d {
        return Err(Error::Shape(format!("last observation {:?} for {n} windows of width {d}", last_observed.shape())));
    }
    let sigma = if policy.actions.inflate {
        out.sigma_y.map(|s| policy.kappa * s)
    } else {
        out.sigma_y.clone()
    };
    let mu = if policy.actions.smooth {
        let mut data = Vec::with_capacity(n * h * d);
        for w in 0..n {
            let mu_w = &out.mu_y.data()[w * h * d..(w + 1) * h * d];
            let anchor = &last_observed.data()[w * d..(w + 1) * d];
            data.extend(smooth_towards(mu_w, anchor, policy.beta));
        }
        Tensor::new(shape.clone(), data)?
    } else {
        out.mu_y.clone()
    };
    let budget = if policy.actions.resample { policy.s_rob } else { policy.s_std };
    let mut next = PredictiveOutput { mu_y: mu, sigma_y: sigma, gate_out: out.gate_out.clone(), samples: None };
    next.samples = Some(sample_predictive(&next, &out.gate_out, rng, budget)?);
    Ok(next)
}

/// Window `n` of a batched output, as a batch of one.
pub fn window(out: &PredictiveOutput, n: usize) -> Result<PredictiveOutput> {
    let count = out.mu_y.shape()[0];
    if n >= count {
        return Err(contract(format!("window {n} of {count}")));
    }
    let one = |t: &Tensor| -> Result<Tensor> {
        let mut s = t.shape().to_vec();
        s[0] = 1;
        Tensor::new(s, t.index_axis0(n).into_data())
    };
    let samples = match &out.samples {
        Some(s) => {
            let (k, per) = (s.shape()[0], s.len() / s.shape()[0] / count);
            let mut data = Vec::with_capacity(k * per);
            for i in 0..k {
                let base = (i * count + n) * per;
                data.extend_from_slice(&s.data()[base..base + per]);
            }
            let mut shape = s.shape().to_vec();
            shape[1] = 1;
            Some(Tensor::new(shape, data)?)
        }
        None => None,
    };
    Ok(PredictiveOutput {
        mu_y: one(&out.mu_y)?,
        sigma_y: one(&out.sigma_y)?,
        gate_out: Tensor::from_vec(vec![out.gate_out.data()[n]]),
        samples,
    })
}

/// Decision for one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutedWindow {
    pub risk: f64,
    pub action: Action,
    /// The forecast after any conservative action.
    pub output: PredictiveOutput,
}

/// Score window `out` (a batch of one), route it and apply the robust
/// actions when required; standard windows get `s_std` fresh samples.
pub fn route(out: &PredictiveOutput, last_observed: &Tensor, policy: &RiskPolicy, rng: &mut RngStream) -> Result<RoutedWindow> {
    policy.validate()?;
    if out.mu_y.shape().first() != Some(&1) {
        return Err(contract("route expects a single window"));
    }
    let risk = risk_score(&out.sigma_y, policy.rho)?;
    let action = select_action(risk, policy.tau);
    let output = match action {
        Action::Robust => apply_conservative_action(out, last_observed, policy, rng)?,
        Action::Standard => {
            let mut o = out.clone();
            o.samples = Some(sample_predictive(out, &out.gate_out, rng, policy.s_std)?);
            o
        }
    };
    Ok(RoutedWindow { risk, action, output })
}
