//! The generator: a causal convolutional probabilistic encoder, the gated
//! latent, confidence-modulated attention over window positions and a
//! Gaussian decoder.

mod checkpoint;
mod sampling;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, ParamRecord, CHECKPOINT_FORMAT_VERSION};
pub use sampling::{point_forecast, sample_predictive, sample_predictive_var, DEFAULT_SAMPLES};

use crate::attention::{ug_attention_forward, AttentionConfig, AttentionParams, BoundAttention, Variant};
use crate::error::{Error, Result};
use crate::gate::{self, GateConfig, GateNetwork, GateState, UncertaintyFeatures};
use crate::numerics::{ParamId, ParamStore, RngStream, Tape, Tensor, Var};

/// Bound applied to every log-variance head.
pub const LOG_VAR_CLAMP: f64 = 10.0;

/// Added under the square root of the model-uncertainty spread.
const SPREAD_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionSettings {
    /// Per-head width; defaults to `d_z`.
    #[serde(default)]
    pub d_head: Option<usize>,
    #[serde(default = "one")]
    pub n_heads: usize,
    #[serde(default = "one_f")]
    pub alpha: f64,
    #[serde(default)]
    pub variant: Variant,
}

impl Default for AttentionSettings {
    fn default() -> Self {
        Self { d_head: None, n_heads: 1, alpha: 1.0, variant: Variant::default() }
    }
}

/// How the encoder's scale head becomes the latent standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentScale {
    /// `sigma = exp(log_var / 2)` with a clamped log-variance head.
    #[default]
    LogVariance,
    /// `sigma = max(softplus(head), 1e-6)`, clamped to the same range.
    Softplus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Context length `L`.
    pub context_len: usize,
    /// Forecast horizon `H`.
    pub horizon: usize,
    /// Series dimension `D`.
    pub dim: usize,
    pub d_hidden: usize,
    pub d_z: usize,
    /// Causal convolution widths, one per encoder layer.
    #[serde(default = "default_kernels")]
    pub kernel_sizes: Vec<usize>,
    #[serde(default)]
    pub attention: AttentionSettings,
    #[serde(default)]
    pub gate: GateConfig,
    /// Use the mean latent gate as the output gate instead of a separate head.
    #[serde(default = "yes")]
    pub tie_output_gate: bool,
    /// Stochastic passes used for the model-uncertainty estimate.
    #[serde(default = "default_passes")]
    pub model_unc_passes: usize,
    /// Decoder hidden width; defaults to `d_hidden`.
    #[serde(default)]
    pub decoder_hidden: Option<usize>,
    #[serde(default)]
    pub latent_scale: LatentScale,
    /// Replace the learned latent gate by this constant.
    #[serde(default)]
    pub fixed_gate: Option<f64>,
    /// Replace the output gate by this constant.
    #[serde(default)]
    pub fixed_output_gate: Option<f64>,
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_kernels() -> Vec<usize> {
    vec![3, 3]
}

fn default_passes() -> usize {
    8
}

impl ModelConfig {
    /// The small configuration used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            context_len: 8,
            horizon: 2,
            dim: 1,
            d_hidden: 6,
            d_z: 4,
            kernel_sizes: vec![3],
            attention: AttentionSettings::default(),
            gate: GateConfig::default(),
            tie_output_gate: true,
            model_unc_passes: default_passes(),
            decoder_hidden: Some(6),
            latent_scale: LatentScale::LogVariance,
            fixed_gate: None,
            fixed_output_gate: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [self.context_len, self.horizon, self.dim, self.d_hidden, self.d_z, self.decoder_width()];
        if widths.contains(&0) {
            return Err(Error::Config("model widths and window geometry must be positive".into()));
        }
        if self.kernel_sizes.is_empty() {
            return Err(Error::Config("at least one encoder kernel is required".into()));
        }
        if let Some(&k) = self.kernel_sizes.iter().find(|&&k| k == 0 || k > self.context_len) {
            return Err(Error::Config(format!("kernel size {k} outside 1..={}", self.context_len)));
        }
        if self.model_unc_passes < 2 {
            return Err(Error::Config("model_unc_passes must be at least 2".into()));
        }
        for (name, g) in [("fixed_gate", self.fixed_gate), ("fixed_output_gate", self.fixed_output_gate)] {
            if let Some(g) = g {
                if !(0.0..=1.0).contains(&g) {
                    return Err(Error::Config(format!("{name} must lie in [0, 1], got {g}")));
                }
            }
        }
        self.attention_config().validate()
    }

    pub fn attention_config(&self) -> AttentionConfig {
        AttentionConfig {
            d_model: self.d_z,
            d_head: self.attention.d_head.unwrap_or(self.d_z),
            n_heads: self.attention.n_heads,
            alpha: self.attention.alpha,
            variant: self.attention.variant,
        }
    }

    pub fn decoder_width(&self) -> usize {
        self.decoder_hidden.unwrap_or(self.d_hidden)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GeneratorParams {
    conv: Vec<(ParamId, ParamId)>,
    pos: ParamId,
    mu: (ParamId, ParamId),
    scale: (ParamId, ParamId),
    gate: GateNetwork,
    attn: AttentionParams,
    dec_hidden: (ParamId, ParamId),
    dec_mu: (ParamId, ParamId),
    dec_scale: (ParamId, ParamId),
    out_gate: Option<(ParamId, ParamId)>,
}

/// Standard normal noise for one forward pass, drawn up front so that a pass
/// can be replayed exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise {
    /// `[N, L, d_z]`, used by the gated latent.
    pub latent: Tensor,
    /// One `[N, L, d_z]` tensor per model-uncertainty pass; empty when the
    /// gate is fixed.
    pub passes: Vec<Tensor>,
}

impl Noise {
    pub fn draw(cfg: &ModelConfig, n: usize, rng: &mut RngStream) -> Self {
        let shape = [n, cfg.context_len, cfg.d_z];
        let latent = rng.normal_tensor(&shape);
        let passes = if cfg.fixed_gate.is_none() {
            (0..cfg.model_unc_passes).map(|_| rng.normal_tensor(&shape)).collect()
        } else {
            Vec::new()
        };
        Self { latent, passes }
    }
}

/// Encoder outputs on a tape, per window position.
#[derive(Clone, Copy, Debug)]
pub struct EncodedVars<'t> {
    /// `[N, L, d_hidden]`
    pub h: Var<'t>,
    /// `[N, L, d_z]`
    pub mu: Var<'t>,
    pub log_var: Var<'t>,
    pub sigma: Var<'t>,
}

/// Every intermediate of one forward pass, still on the tape.
#[derive(Clone, Debug)]
pub struct ForwardPass<'t> {
    pub enc: EncodedVars<'t>,
    /// `[N, L, d_z]`; absent when the gate is fixed.
    pub model_unc: Option<Var<'t>>,
    pub u: Option<Var<'t>>,
    /// Elementwise gate `[N, L, d_z]`.
    pub gate: Var<'t>,
    /// Mean gate per sample `[N]`.
    pub gate_summary: Var<'t>,
    /// Mean gate per position `[N, L]`.
    pub gate_sequence: Var<'t>,
    pub z: Var<'t>,
    /// Attention output `[N, L, d_z]`.
    pub attended: Var<'t>,
    pub attention_weights: Vec<Var<'t>>,
    /// Decoder input `[N, 2 d_z]`.
    pub pooled: Var<'t>,
    /// `[N, H, D]`
    pub mu_y: Var<'t>,
    pub log_var_y: Var<'t>,
    pub sigma_y: Var<'t>,
    /// Output gate `[N]`.
    pub gate_out: Var<'t>,
}

impl ForwardPass<'_> {
    pub fn encoded_state(&self) -> EncodedState {
        EncodedState {
            h: (*self.enc.h.value()).clone(),
            mu: (*self.enc.mu.value()).clone(),
            log_var: (*self.enc.log_var.value()).clone(),
            sigma: (*self.enc.sigma.value()).clone(),
        }
    }

    pub fn gate_state(&self, lambda0: f64) -> Result<GateState> {
        let summary = (*self.gate_summary.value()).clone();
        Ok(GateState {
            u: self.u.map(|u| (*u.value()).clone()),
            gate: (*self.gate.value()).clone(),
            lambda: gate::adaptive_lambda(&summary, lambda0)?,
            summary,
        })
    }

    pub fn predictive(&self) -> PredictiveOutput {
        PredictiveOutput {
            mu_y: (*self.mu_y.value()).clone(),
            sigma_y: (*self.sigma_y.value()).clone(),
            gate_out: (*self.gate_out.value()).clone(),
            samples: None,
        }
    }
}

/// Encoder outputs detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedState {
    pub h: Tensor,
    pub mu: Tensor,
    pub log_var: Tensor,
    pub sigma: Tensor,
}

/// Predictive distribution `N(mu_y, sigma_y^2)` with its output gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveOutput {
    /// `[N, H, D]`
    pub mu_y: Tensor,
    /// `[N, H, D]`, positive.
    pub sigma_y: Tensor,
    /// `[N]`
    pub gate_out: Tensor,
    /// `[S, N, H, D]`
    pub samples: Option<Tensor>,
}

/// Detached results of [`Generator::forward`].
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub encoded: EncodedState,
    pub gate: GateState,
    pub attended: Tensor,
    pub output: PredictiveOutput,
}

/// Generator parameters together with the configuration that shapes them.
#[derive(Clone, Debug)]
pub struct Generator {
    config: ModelConfig,
    store: ParamStore,
    ids: GeneratorParams,
    epochs_trained: usize,
}

impl Generator {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStream::new(seed);
        let mut store = ParamStore::new();
        let c = &config;

        let mut conv = Vec::with_capacity(c.kernel_sizes.len());
        let mut width = c.dim;
        for (i, &k) in c.kernel_sizes.iter().enumerate() {
            let w = store.add_glorot(&format!("enc.conv{i}.w"), k * width, c.d_hidden, &mut rng);
            let b = store.add_zeros(&format!("enc.conv{i}.b"), &[c.d_hidden]);
            conv.push((w, b));
            width = c.d_hidden;
        }
        let pos = store.add("enc.pos", rng.normal_tensor(&[c.context_len, c.d_hidden]).map(|x| 0.1 * x));
        let mu = (
            store.add_glorot("enc.mu.w", c.d_hidden, c.d_z, &mut rng),
            store.add_zeros("enc.mu.b", &[c.d_z]),
        );
        let scale = (
            store.add_glorot("enc.scale.w", c.d_hidden, c.d_z, &mut rng),
            store.add_zeros("enc.scale.b", &[c.d_z]),
        );
        let gate = GateNetwork::new(&mut store, &c.gate, 2 * c.d_z, c.d_z, &mut rng);
        let attn = AttentionParams::new(&mut store, "attn", &c.attention_config(), &mut rng);
        let dw = c.decoder_width();
        let out = c.horizon * c.dim;
        let dec_hidden = (
            store.add_glorot("dec.hidden.w", 2 * c.d_z, dw, &mut rng),
            store.add_zeros("dec.hidden.b", &[dw]),
        );
        let dec_mu = (store.add_glorot("dec.mu.w", dw, out, &mut rng), store.add_zeros("dec.mu.b", &[out]));
        let dec_scale = (
            store.add_glorot("dec.scale.w", dw, out, &mut rng),
            store.add_zeros("dec.scale.b", &[out]),
        );
        let out_gate = (!c.tie_output_gate).then(|| {
            (
                store.add_glorot("out_gate.w", 2 * c.d_z, 1, &mut rng),
                store.add_zeros("out_gate.b", &[1]),
            )
        });
        let ids = GeneratorParams { conv, pos, mu, scale, gate, attn, dec_hidden, dec_mu, dec_scale, out_gate };
        Ok(Self { config, store, ids, epochs_trained: 0 })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn epochs_trained(&self) -> usize {
        self.epochs_trained
    }

    pub fn set_epochs_trained(&mut self, epochs: usize) {
        self.epochs_trained = epochs;
    }

    /// Force (or release) the latent and output gates.
    pub fn set_fixed_gates(&mut self, gate: Option<f64>, output_gate: Option<f64>) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.fixed_gate = gate;
        cfg.fixed_output_gate = output_gate;
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    /// Change the confidence sharpness and attention variant.
    pub fn set_attention(&mut self, alpha: f64, variant: Variant) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.attention.alpha = alpha;
        cfg.attention.variant = variant;
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let c = &self.config;
        let s = x.shape();
        if s.len() != 3 || s[1] != c.context_len || s[2] != c.dim {
            return Err(Error::Shape(format!(
                "expected input [N, {}, {}], got {s:?}",
                c.context_len, c.dim
            )));
        }
        if !x.all_finite() {
            return Err(Error::NonFinite { term: "model input".into() });
        }
        Ok(())
    }

    fn affine<'t>(tape: &'t Tape, store: &ParamStore, x: Var<'t>, (w, b): (ParamId, ParamId)) -> Var<'t> {
        x.matmul(tape.param(store, w)) + tape.param(store, b)
    }

    /// Encoder pass with parameters taken from `store`.
    pub fn encode_on<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<EncodedVars<'t>> {
        let c = &self.config;
        let mut h = x;
        for (i, (&k, &ids)) in c.kernel_sizes.iter().zip(&self.ids.conv).enumerate() {
            let mut pre = Self::affine(tape, store, h.unfold_causal(k), ids);
            if i == 0 {
                pre = pre + tape.param(store, self.ids.pos);
            }
            h = pre.softplus();
        }
        let mu = Self::affine(tape, store, h, self.ids.mu);
        let head = Self::affine(tape, store, h, self.ids.scale);
        let half = LOG_VAR_CLAMP / 2.0;
        let (log_var, sigma) = match c.latent_scale {
            LatentScale::LogVariance => {
                let lv = head.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP);
                (lv, lv.scale(0.5).exp())
            }
            LatentScale::Softplus => {
                let s = gate::positive_scale(head).clamp((-half).exp(), half.exp());
                (s.ln().scale(2.0), s)
            }
        };
        Ok(EncodedVars { h, mu, log_var, sigma })
    }

    fn bound_attention<'t>(&self, tape: &'t Tape, store: &ParamStore) -> BoundAttention<'t> {
        self.ids.attn.bind(tape, store)
    }

    /// Full forward pass with parameters from `store` and pre-drawn `noise`.
    pub fn forward_on<'t>(&self, tape: &'t Tape, store: &ParamStore, x: &Tensor, noise: &Noise) -> Result<ForwardPass<'t>> {
        self.check_input(x)?;
        let c = &self.config;
        let (n, l, dz) = (x.shape()[0], c.context_len, c.d_z);
        if noise.latent.shape() != [n, l, dz] {
            return Err(Error::Shape(format!("latent noise {:?} for batch of {n}", noise.latent.shape())));
        }
        let enc = self.encode_on(tape, store, tape.constant(x.clone()))?;
        let acfg = c.attention_config();
        let attn = self.bound_attention(tape, store);
        let alpha = tape.scalar(acfg.alpha);
        let confidence = enc.sigma.mean_axis(2);

        let (model_unc, u, gate) = match c.fixed_gate {
            Some(g) => (None, None, tape.constant(Tensor::full(&[n, l, dz], g))),
            None => {
                if noise.passes.len() != c.model_unc_passes {
                    return Err(Error::Shape(format!(
                        "{} model-uncertainty noise tensors, expected {}",
                        noise.passes.len(),
                        c.model_unc_passes
                    )));
                }
                let mut outs = Vec::with_capacity(noise.passes.len());
                for eps in &noise.passes {
                    let zk = enc.mu + enc.sigma * tape.constant(eps.clone());
                    outs.push(ug_attention_forward(zk, Some(confidence), alpha, &attn, &acfg)?.output);
                }
                let k = outs.len() as f64;
                let mean = outs.iter().skip(1).fold(outs[0], |a, &b| a + b).scale(1.0 / k);
                let var = outs.iter().map(|&o| (o - mean).square()).reduce(|a, b| a + b).expect("passes").scale(1.0 / k);
                let model_unc = var.add_scalar(SPREAD_EPS).sqrt();
                let feats = UncertaintyFeatures::new(enc.sigma, model_unc, None)?;
                let u = self.ids.gate.features(tape, store, &feats);
                let g = self.ids.gate.gate(tape, store, u);
                (Some(model_unc), Some(u), g)
            }
        };
        let gate_summary = gate::gate_summary(gate);
        let gate_sequence = gate.mean_axis(2);

        let z = gate::gated_reparameterize_with(enc.mu, enc.sigma, gate, noise.latent.clone())?;
        let att = ug_attention_forward(z, Some(confidence), alpha, &attn, &acfg)?;
        let attended = att.output;
        let last = attended.narrow(1, l - 1, 1).reshape(&[n, dz]);
        let pooled = Var::concat(&[attended.mean_axis(1), last], 1);

        let hidden = Self::affine(tape, store, pooled, self.ids.dec_hidden).softplus();
        let shape = [n, c.horizon, c.dim];
        let mu_y = Self::affine(tape, store, hidden, self.ids.dec_mu).reshape(&shape);
        let log_var_y = Self::affine(tape, store, hidden, self.ids.dec_scale)
            .clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP)
            .reshape(&shape);
        let sigma_y = log_var_y.scale(0.5).exp();

        let gate_out = match (c.fixed_output_gate, self.ids.out_gate) {
            (Some(g), _) => tape.constant(Tensor::full(&[n], g)),
            (None, Some(ids)) => Self::affine(tape, store, pooled, ids).sigmoid().reshape(&[n]),
            (None, None) => gate_summary,
        };

        Ok(ForwardPass {
            enc,
            model_unc,
            u,
            gate,
            gate_summary,
            gate_sequence,
            z,
            attended,
            attention_weights: att.weights,
            pooled,
            mu_y,
            log_var_y,
            sigma_y,
            gate_out,
        })
    }

    /// Encoder outputs for `x` (`[N, L, D]`).
    pub fn encode(&self, x: &Tensor) -> Result<EncodedState> {
        self.check_input(x)?;
        let tape = Tape::new();
        let e = self.encode_on(&tape, &self.store, tape.constant(x.clone()))?;
        Ok(EncodedState {
            h: (*e.h.value()).clone(),
            mu: (*e.mu.value()).clone(),
            log_var: (*e.log_var.value()).clone(),
            sigma: (*e.sigma.value()).clone(),
        })
    }

    /// Forward pass with fresh noise from `rng`; `lambda0` scales the
    /// reported adaptive regulariser.
    pub fn forward(&self, x: &Tensor, lambda0: f64, rng: &mut RngStream) -> Result<Prediction> {
        self.check_input(x)?;
        let noise = Noise::draw(&self.config, x.shape()[0], rng);
        let tape = Tape::new();
        let pass = self.forward_on(&tape, &self.store, x, &noise)?;
        Ok(Prediction {
            encoded: pass.encoded_state(),
            gate: pass.gate_state(lambda0)?,
            attended: (*pass.attended.value()).clone(),
            output: pass.predictive(),
        })
    }

    /// Predictive distribution plus `samples` draws per window.
    pub fn predict(&self, x: &Tensor, samples: usize, rng: &mut RngStream) -> Result<PredictiveOutput> {
        let mut out = self.forward(x, 1.0, rng)?.output;
        let gate_out = out.gate_out.clone();
        out.samples = Some(sample_predictive(&out, &gate_out, rng, samples)?);
        Ok(out)
    }
}
