//! Uncertainty features, the gate, gated reparameterisation and the adaptive
//! regulariser.
//!
//! Smaller gate values mean more conservative behaviour: a gate of 0 removes
//! all latent noise, a gate of 1 recovers the ordinary reparameterisation.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::numerics::{ParamId, ParamStore, RngStream, Tape, Tensor, Var};

/// Lower bound applied by [`positive_scale`].
pub const SCALE_FLOOR: f64 = 1e-6;

/// Feature vector fed to the gate network.
///
/// `data_unc` is the aleatoric proxy (encoder scale head), `model_unc` the
/// epistemic proxy (spread over repeated stochastic passes). Both are
/// elementwise non-negative.
#[derive(Clone, Copy, Debug)]
pub struct UncertaintyFeatures<'t> {
    pub data_unc: Var<'t>,
    pub model_unc: Var<'t>,
    pub context: Option<Var<'t>>,
}

impl<'t> UncertaintyFeatures<'t> {
    pub fn new(data_unc: Var<'t>, model_unc: Var<'t>, context: Option<Var<'t>>) -> Result<Self> {
        let (ds, ms) = (data_unc.shape(), model_unc.shape());
        if ds[..ds.len() - 1] != ms[..ms.len() - 1] {
            return Err(Error::Shape(format!("uncertainty leading dims {ds:?} vs {ms:?}")));
        }
        if data_unc.value().data().iter().any(|&x| x < 0.0) {
            return Err(contract("data uncertainty must be non-negative"));
        }
        if model_unc.value().data().iter().any(|&x| x < 0.0) {
            return Err(contract("model uncertainty must be non-negative"));
        }
        if let Some(c) = context {
            let cs = c.shape();
            if cs[..cs.len() - 1] != ds[..ds.len() - 1] {
                return Err(Error::Shape(format!("context leading dims {cs:?} vs {ds:?}")));
            }
        }
        Ok(Self { data_unc, model_unc, context })
    }

    /// Concatenation `[data, model, context]` along the last axis.
    pub fn concat(&self) -> Var<'t> {
        let mut parts = vec![self.data_unc, self.model_unc];
        parts.extend(self.context);
        let axis = self.data_unc.shape().len() - 1;
        Var::concat(&parts, axis)
    }
}

/// Widths of the gate network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    /// Hidden width of the feature map; 0 makes it the identity.
    #[serde(default)]
    pub hidden: usize,
    /// Output width of the feature map when `hidden > 0`.
    #[serde(default = "default_features")]
    pub features: usize,
}

fn default_features() -> usize {
    8
}

impl Default for GateConfig {
    fn default() -> Self {
        Self { hidden: 0, features: default_features() }
    }
}

/// Parameters of the feature map and the affine gate head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateNetwork {
    psi: Option<[ParamId; 4]>,
    w_g: ParamId,
    b_g: ParamId,
}

impl GateNetwork {
    /// Register parameters for inputs of width `in_width` and a gate of width `gate_width`.
    pub fn new(store: &mut ParamStore, cfg: &GateConfig, in_width: usize, gate_width: usize, rng: &mut RngStream) -> Self {
        let (psi, feat) = if cfg.hidden == 0 {
            (None, in_width)
        } else {
            let w1 = store.add_glorot("gate.psi.w1", in_width, cfg.hidden, rng);
            let b1 = store.add_zeros("gate.psi.b1", &[cfg.hidden]);
            let w2 = store.add_glorot("gate.psi.w2", cfg.hidden, cfg.features, rng);
            let b2 = store.add_zeros("gate.psi.b2", &[cfg.features]);
            (Some([w1, b1, w2, b2]), cfg.features)
        };
        let w_g = store.add_glorot("gate.w", feat, gate_width, rng);
        let b_g = store.add_zeros("gate.b", &[gate_width]);
        Self { psi, w_g, b_g }
    }

    pub fn weight(&self) -> ParamId {
        self.w_g
    }

    pub fn bias(&self) -> ParamId {
        self.b_g
    }

    /// Feature map `u = psi([data, model, context])`.
    pub fn features<'t>(&self, tape: &'t Tape, store: &ParamStore, feats: &UncertaintyFeatures<'t>) -> Var<'t> {
        let x = feats.concat();
        match self.psi {
            None => x,
            Some([w1, b1, w2, b2]) => {
                let h = (x.matmul(tape.param(store, w1)) + tape.param(store, b1)).softplus();
                h.matmul(tape.param(store, w2)) + tape.param(store, b2)
            }
        }
    }

    /// Elementwise gate `sigmoid(u W_g + b_g)`.
    pub fn gate<'t>(&self, tape: &'t Tape, store: &ParamStore, u: Var<'t>) -> Var<'t> {
        compute_gate(u, tape.param(store, self.w_g), tape.param(store, self.b_g))
    }
}

/// `sigmoid(u W + b)`, applied over the last axis of `u`.
pub fn compute_gate<'t>(u: Var<'t>, w: Var<'t>, b: Var<'t>) -> Var<'t> {
    (u.matmul(w) + b).sigmoid()
}

/// `z = mu + gate * sigma * eps` with `eps ~ N(0, I)` drawn from `rng`.
///
/// `gate` broadcasts against `mu` (e.g. a per-sample gate of shape `[N, 1, 1]`).
/// `eps` enters as a constant, so gradients flow through `mu`, `sigma` and
/// `gate` only.
pub fn gated_reparameterize<'t>(mu: Var<'t>, sigma: Var<'t>, gate: Var<'t>, rng: &mut RngStream) -> Result<Var<'t>> {
    let eps = rng.normal_tensor(&mu.shape());
    gated_reparameterize_with(mu, sigma, gate, eps)
}

/// [`gated_reparameterize`] with caller-supplied noise.
pub fn gated_reparameterize_with<'t>(mu: Var<'t>, sigma: Var<'t>, gate: Var<'t>, eps: Tensor) -> Result<Var<'t>> {
    if mu.shape() != sigma.shape() || eps.shape() != mu.shape().as_slice() {
        return Err(Error::Shape(format!(
            "mu {:?}, sigma {:?}, eps {:?}",
            mu.shape(),
            sigma.shape(),
            eps.shape()
        )));
    }
    if sigma.value().data().iter().any(|&s| s < 0.0) {
        return Err(contract("sigma must be non-negative"));
    }
    let eps = mu.tape().constant(eps);
    Ok(mu + gate * sigma * eps)
}

/// `lambda0 * (1 - g)` per sample.
pub fn adaptive_lambda(gate_summary: &Tensor, lambda0: f64) -> Result<Tensor> {
    if !(lambda0 >= 0.0) {
        return Err(Error::Config(format!("lambda0 must be >= 0, got {lambda0}")));
    }
    if gate_summary.data().iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(contract("gate summary outside [0, 1]"));
    }
    Ok(gate_summary.map(|g| lambda0 * (1.0 - g)))
}

/// Differentiable `1 - g`, the per-sample conservatism weight `lambda_t / lambda0`.
pub fn conservatism_weight(gate_summary: Var<'_>) -> Var<'_> {
    gate_summary.neg().add_scalar(1.0)
}

/// Positive noise scale `max(softplus(u), 1e-6)` for the proxy-driven form
/// `z = mu + g * s(u) * eps`.
pub fn positive_scale(u: Var<'_>) -> Var<'_> {
    u.softplus().clamp(SCALE_FLOOR, f64::MAX)
}

/// Summary of the gate over everything but the leading (sample) axis.
pub fn gate_summary(gate: Var<'_>) -> Var<'_> {
    let shape = gate.shape();
    let n = shape[0];
    let rest: usize = shape[1..].iter().product();
    gate.reshape(&[n, rest]).mean_axis(1)
}

/// Sample variance of the gate values, logged as the decision-uncertainty
/// diagnostic.
pub fn decision_uncertainty(gate: &Tensor) -> f64 {
    let m = gate.mean();
    gate.data().iter().map(|g| (g - m) * (g - m)).sum::<f64>() / gate.len() as f64
}

/// Tensors describing one gated pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GateState {
    pub u: Option<Tensor>,
    /// Elementwise gate.
    pub gate: Tensor,
    /// Mean gate per sample, `(N,)`.
    pub summary: Tensor,
    /// `lambda0 * (1 - summary)`.
    pub lambda: Tensor,
}
