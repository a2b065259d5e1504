use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::TimeSeries;
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// One AR(1) regime: `x_t = mean + ar_coef (x_{t-1} - mean) + noise_std e_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regime {
    pub ar_coef: f64,
    pub noise_std: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeArSpec {
    pub regimes: Vec<Regime>,
    /// Per-step probability of jumping to a different regime.
    pub switch_prob: f64,
    /// Starting value `x_0`; defaults to the first regime's mean.
    #[serde(default)]
    pub initial: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RegimeSeries {
    pub series: TimeSeries,
    pub labels: Vec<usize>,
}

/// Markov regime-switching AR(1) series indexed `0..T`, with regime labels.
pub fn synth_regime_ar(seed: u64, t: usize, spec: &RegimeArSpec) -> Result<RegimeSeries> {
    if t == 0 {
        return Err(Error::Config("series length T must be positive".into()));
    }
    if spec.regimes.is_empty() {
        return Err(Error::Config("at least one regime is required".into()));
    }
    if !(0.0..=1.0).contains(&spec.switch_prob) {
        return Err(Error::Config(format!("switch_prob {} outside [0, 1]", spec.switch_prob)));
    }
    for (i, r) in spec.regimes.iter().enumerate() {
        if !(r.ar_coef.abs() < 1.0) {
            return Err(Error::Config(format!("regime {i}: unstable ar_coef {}", r.ar_coef)));
        }
        if !(r.noise_std >= 0.0) {
            return Err(Error::Config(format!("regime {i}: negative noise_std {}", r.noise_std)));
        }
    }
    let mut rng = RngStream::new(seed);
    let k = spec.regimes.len();
    let mut regime = 0usize;
    let mut x = spec.initial.unwrap_or(spec.regimes[0].mean);
    let mut values = Vec::with_capacity(t);
    let mut labels = Vec::with_capacity(t);
    values.push(x);
    labels.push(regime);
    for _ in 1..t {
        if k > 1 && rng.uniform() < spec.switch_prob {
            // uniformly among the other regimes
            let j = rng.below(k - 1);
            regime = if j >= regime { j + 1 } else { j };
        }
        let r = &spec.regimes[regime];
        x = r.mean + r.ar_coef * (x - r.mean) + r.noise_std * rng.normal();
        values.push(x);
        labels.push(regime);
    }
    Ok(RegimeSeries { series: TimeSeries::from_values(values)?, labels })
}

/// Deterministic conditional mean `m(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanSpec {
    Zero,
    Sinusoid { amplitude: f64, period: f64 },
}

impl MeanSpec {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            MeanSpec::Zero => 0.0,
            MeanSpec::Sinusoid { amplitude, period } => amplitude * (2.0 * PI * t as f64 / period).sin(),
        }
    }
}

/// Noise scale `sigma(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    Constant { value: f64 },
    /// `base + amplitude * sin(2 pi t / period + phase)`
    Sinusoid { base: f64, amplitude: f64, period: f64, #[serde(default)] phase: f64 },
    /// `low` for the first half of each period, `high` for the second.
    Square { low: f64, high: f64, period: usize },
}

impl SigmaSpec {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            SigmaSpec::Constant { value } => *value,
            SigmaSpec::Sinusoid { base, amplitude, period, phase } => {
                base + amplitude * (2.0 * PI * t as f64 / period + phase).sin()
            }
            SigmaSpec::Square { low, high, period } => {
                if (t % period.max(&1)) < period / 2 {
                    *low
                } else {
                    *high
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeteroSpec {
    pub mean: MeanSpec,
    pub sigma: SigmaSpec,
}

#[derive(Clone, Debug)]
pub struct HeteroSeries {
    pub series: TimeSeries,
    /// Ground-truth `sigma(t)`.
    pub sigma: Vec<f64>,
}

/// `y_t = m(t) + sigma(t) e_t` with the ground-truth scale returned.
pub fn synth_heteroskedastic(seed: u64, t: usize, spec: &HeteroSpec) -> Result<HeteroSeries> {
    if t == 0 {
        return Err(Error::Config("series length T must be positive".into()));
    }
    let sigma: Vec<f64> = (0..t).map(|i| spec.sigma.at(i)).collect();
    if let Some((i, s)) = sigma.iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
        return Err(Error::Config(format!("sigma({i}) = {s} is not positive")));
    }
    let mut rng = RngStream::new(seed);
    let values = (0..t).map(|i| spec.mean.at(i) + sigma[i] * rng.normal()).collect();
    Ok(HeteroSeries { series: TimeSeries::from_values(values)?, sigma })
}
