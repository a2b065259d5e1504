//! Confidence-modulated attention.
//!
//! Scores `S = Q K^T / sqrt(d)` are combined with a confidence matrix
//! `G_ij = exp(-alpha (sigma_i + sigma_j))` in one of two ways:
//!
//! * `additive_log`: `softmax(S + log G)`, i.e. weights proportional to
//!   `exp(S) * G`;
//! * `multiplicative`: `softmax(S * G)`, which rescales score magnitudes.
//!
//! The two are not equivalent (the multiplicative form can amplify negative
//! similarities), so both are available. `vanilla` ignores confidence.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::numerics::{ParamId, ParamStore, RngStream, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    AdditiveLog,
    Multiplicative,
    Vanilla,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive_log" => Ok(Variant::AdditiveLog),
            "multiplicative" => Ok(Variant::Multiplicative),
            "vanilla" => Ok(Variant::Vanilla),
            other => Err(Error::Config(format!("unknown attention variant {other:?}"))),
        }
    }
}

impl Variant {
    pub fn uses_confidence(self) -> bool {
        !matches!(self, Variant::Vanilla)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    /// Width of the positions attended over.
    pub d_model: usize,
    /// Query/key/value width per head.
    pub d_head: usize,
    #[serde(default = "one")]
    pub n_heads: usize,
    /// Confidence sharpness, `>= 0`.
    #[serde(default = "one_f")]
    pub alpha: f64,
    #[serde(default)]
    pub variant: Variant,
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_head == 0 || self.n_heads == 0 {
            return Err(Error::Config("attention widths must be positive".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("attention alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// `G_ij = exp(-alpha (sigma_q[i] + sigma_k[j]))`.
pub fn confidence_gate(sigma_q: &[f64], sigma_k: &[f64], alpha: f64) -> Result<Tensor> {
    if sigma_q.iter().chain(sigma_k).any(|&s| s < 0.0) {
        return Err(contract("confidence sigmas must be non-negative"));
    }
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    let data = sigma_q
        .iter()
        .flat_map(|&a| sigma_k.iter().map(move |&b| (-alpha * (a + b)).exp()))
        .collect();
    Tensor::new(vec![sigma_q.len(), sigma_k.len()], data)
}

/// Projection parameters `W_q, W_k, W_v, W_o`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
}

impl AttentionParams {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &AttentionConfig, rng: &mut RngStream) -> Self {
        let inner = cfg.n_heads * cfg.d_head;
        Self {
            w_q: store.add_glorot(&format!("{prefix}.w_q"), cfg.d_model, inner, rng),
            w_k: store.add_glorot(&format!("{prefix}.w_k"), cfg.d_model, inner, rng),
            w_v: store.add_glorot(&format!("{prefix}.w_v"), cfg.d_model, inner, rng),
            w_o: store.add_glorot(&format!("{prefix}.w_o"), inner, cfg.d_model, rng),
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> BoundAttention<'t> {
        BoundAttention {
            w_q: tape.param(store, self.w_q),
            w_k: tape.param(store, self.w_k),
            w_v: tape.param(store, self.w_v),
            w_o: tape.param(store, self.w_o),
        }
    }
}

/// Projection weights living on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundAttention<'t> {
    pub w_q: Var<'t>,
    pub w_k: Var<'t>,
    pub w_v: Var<'t>,
    pub w_o: Var<'t>,
}

/// Result of one attention pass.
#[derive(Clone, Debug)]
pub struct AttentionOutput<'t> {
    /// `[B, L, d_model]`
    pub output: Var<'t>,
    /// Row-stochastic weights per head, each `[B, L, L]`.
    pub weights: Vec<Var<'t>>,
    /// Values `z W_v`, `[B, L, n_heads * d_head]`.
    pub values: Var<'t>,
}

fn check_inputs(z: Var<'_>, sigmas: Option<Var<'_>>, cfg: &AttentionConfig) -> Result<()> {
    cfg.validate()?;
    let zs = z.shape();
    if zs.len() != 3 || zs[2] != cfg.d_model {
        return Err(Error::Shape(format!("attention input must be [B, L, {}], got {zs:?}", cfg.d_model)));
    }
    if cfg.variant.uses_confidence() {
        let s = sigmas.ok_or_else(|| Error::Config(format!("{:?} attention needs confidence sigmas", cfg.variant)))?;
        if s.shape() != zs[..2] {
            return Err(Error::Shape(format!("sigmas {:?} vs positions {:?}", s.shape(), &zs[..2])));
        }
        if s.value().data().iter().any(|&x| x < 0.0) {
            return Err(contract("confidence sigmas must be non-negative"));
        }
    }
    Ok(())
}

/// Confidence-modulated self-attention over the `L` positions of each of the
/// `B` sequences in `z` (`[B, L, d_model]`). `sigmas` is `[B, L]`; `alpha` is
/// a scalar var so it can be differentiated.
pub fn ug_attention_forward<'t>(
    z: Var<'t>,
    sigmas: Option<Var<'t>>,
    alpha: Var<'t>,
    w: &BoundAttention<'t>,
    cfg: &AttentionConfig,
) -> Result<AttentionOutput<'t>> {
    check_inputs(z, sigmas, cfg)?;
    let zs = z.shape();
    let (b, l) = (zs[0], zs[1]);
    let q = z.matmul(w.w_q);
    let k = z.matmul(w.w_k);
    let v = z.matmul(w.w_v);
    let scale = 1.0 / (cfg.d_head as f64).sqrt();

    // -alpha (sigma_i + sigma_j), [B, L, L]
    let neg_log_conf = match (cfg.variant, sigmas) {
        (Variant::Vanilla, _) | (_, None) => None,
        (_, Some(s)) => {
            let pair = s.reshape(&[b, l, 1]) + s.reshape(&[b, 1, l]);
            Some(pair * alpha.neg())
        }
    };

    let mut heads = Vec::with_capacity(cfg.n_heads);
    let mut weights = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let off = h * cfg.d_head;
        let qh = q.narrow(2, off, cfg.d_head);
        let kh = k.narrow(2, off, cfg.d_head);
        let vh = v.narrow(2, off, cfg.d_head);
        let scores = qh.bmm(kh.transpose_last2()).scale(scale);
        let logits = match (cfg.variant, neg_log_conf) {
            (Variant::AdditiveLog, Some(lc)) => scores + lc,
            (Variant::Multiplicative, Some(lc)) => scores * lc.exp(),
            _ => scores,
        };
        let a = logits.softmax_last();
        heads.push(a.bmm(vh));
        weights.push(a);
    }
    let mixed = if heads.len() == 1 { heads[0] } else { Var::concat(&heads, 2) };
    Ok(AttentionOutput { output: mixed.matmul(w.w_o), weights, values: v })
}

/// The weights `A` that [`ug_attention_forward`] uses, one `[B, L, L]` per head.
pub fn attention_weights<'t>(
    z: Var<'t>,
    sigmas: Option<Var<'t>>,
    alpha: Var<'t>,
    w: &BoundAttention<'t>,
    cfg: &AttentionConfig,
) -> Result<Vec<Var<'t>>> {
    Ok(ug_attention_forward(z, sigmas, alpha, w, cfg)?.weights)
}
