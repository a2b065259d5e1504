//! Weak-innovation adversarial training: an innovation critic comparing
//! extracted innovations with a uniform reference, a reconstruction critic
//! comparing true trajectories with past-plus-generated ones, and the
//! alternating minimax step.
//!
//! Critics are Lipschitz-constrained by clipping every weight to
//! `[-clip_bound, clip_bound]` after each update.

use serde::{Deserialize, Serialize};

use crate::data::WindowBatch;
use crate::error::{contract, Error, Result};
use crate::model::{sample_predictive_var, Generator, Noise};
use crate::numerics::{ParamId, ParamStore, RngStream, Tape, Tensor, Var};
use crate::training::{self, Adam, LossTerms, TrainConfig, TrainReport};

/// Negative-side slope of the critic nonlinearity.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Likelihood,
    Adversarial,
    Combined,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "likelihood" => Ok(TrainMode::Likelihood),
            "adversarial" => Ok(TrainMode::Adversarial),
            "combined" => Ok(TrainMode::Combined),
            other => Err(Error::Config(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversarialConfig {
    /// Weight of the reconstruction gap relative to the innovation gap.
    pub lambda_balance: f64,
    pub n_critic: usize,
    pub clip_bound: f64,
    pub critic_lr: f64,
    pub critic_hidden: usize,
    /// Weight of the adversarial loss in combined mode.
    pub adversarial_weight: f64,
    pub probe_steps: usize,
    pub probe_lr: f64,
    pub probe_batch: usize,
    /// Chunks used for the diagnostic's standard errors.
    pub probe_chunks: usize,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            lambda_balance: 1.0,
            n_critic: 5,
            clip_bound: 0.01,
            critic_lr: 5e-5,
            critic_hidden: 64,
            adversarial_weight: 1.0,
            probe_steps: 500,
            probe_lr: 5e-4,
            probe_batch: 256,
            probe_chunks: 10,
        }
    }
}

impl AdversarialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_critic == 0 {
            return Err(Error::Config("n_critic must be at least 1".into()));
        }
        if !(self.lambda_balance > 0.0) {
            return Err(Error::Config(format!("lambda_balance must be > 0, got {}", self.lambda_balance)));
        }
        if !(self.clip_bound > 0.0) || !(self.critic_lr > 0.0) || !(self.probe_lr > 0.0) {
            return Err(Error::Config("clip_bound, critic_lr and probe_lr must be positive".into()));
        }
        if !(self.adversarial_weight >= 0.0) {
            return Err(Error::Config("adversarial_weight must be >= 0".into()));
        }
        if self.critic_hidden == 0 || self.probe_batch == 0 || self.probe_chunks == 0 {
            return Err(Error::Config("critic_hidden, probe_batch and probe_chunks must be positive".into()));
        }
        Ok(())
    }
}

/// Anything that maps a batch of rows `[M, d]` to one score per row.
pub trait Scorer {
    fn input_width(&self) -> usize;
    fn score<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t>;
}

/// Feed-forward critic `d -> hidden -> hidden -> 1` with leaky ramps.
#[derive(Clone, Debug)]
pub struct Critic {
    store: ParamStore,
    layers: [(ParamId, ParamId); 3],
    clip_bound: f64,
    input_width: usize,
}

impl Critic {
    pub fn new(input_width: usize, hidden: usize, clip_bound: f64, rng: &mut RngStream) -> Result<Self> {
        if input_width == 0 || hidden == 0 || !(clip_bound > 0.0) {
            return Err(Error::Config("critic widths and clip bound must be positive".into()));
        }
        let mut store = ParamStore::new();
        let mut uniform = |shape: &[usize]| rng.uniform_tensor(shape).map(|u| (2.0 * u - 1.0) * clip_bound);
        let widths = [(input_width, hidden), (hidden, hidden), (hidden, 1)];
        let mut layers = [(ParamId(0), ParamId(0)); 3];
        for (i, &(a, b)) in widths.iter().enumerate() {
            let w = store.add(format!("critic.l{i}.w"), uniform(&[a, b]));
            let bias = store.add(format!("critic.l{i}.b"), uniform(&[b]));
            layers[i] = (w, bias);
        }
        Ok(Self { store, layers, clip_bound, input_width })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn clip_bound(&self) -> f64 {
        self.clip_bound
    }

    pub fn clip(&mut self) {
        self.store.clip_values(self.clip_bound);
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.store.iter().map(|p| p.value.max_abs()).fold(0.0, f64::max)
    }

    /// Largest Lipschitz constant any clipped critic of this shape can have:
    /// the product over layers of `clip * sqrt(fan_in * fan_out)`.
    pub fn attainable_lipschitz(&self) -> f64 {
        self.layers
            .iter()
            .map(|&(w, _)| {
                let s = self.store.get(w).value.shape();
                self.clip_bound * ((s[0] * s[1]) as f64).sqrt()
            })
            .product()
    }

    /// Scores of a tensor `[M, d]` without recording gradients for later use.
    pub fn score_tensor(&self, x: &Tensor) -> Tensor {
        let tape = Tape::new();
        (*self.score(&tape, tape.constant(x.clone())).value()).clone()
    }
}

impl Scorer for Critic {
    fn input_width(&self) -> usize {
        self.input_width
    }

    fn score<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(tape.param(&self.store, w)) + tape.param(&self.store, b);
            if i < 2 {
                h = h.leaky_relu(LEAKY_SLOPE);
            }
        }
        let m = h.shape()[0];
        h.reshape(&[m])
    }
}

fn rows(x: Var<'_>) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.is_empty() || s[0] == 0 {
        return Err(Error::EmptyInput("critic input has no rows".into()));
    }
    Ok((s[0], s[1..].iter().product()))
}

/// `E[D(reference)] - E[D(sample)]` for row batches of equal width.
pub fn score_gap<'t, S: Scorer + ?Sized>(critic: &S, tape: &'t Tape, reference: Var<'t>, sample: Var<'t>) -> Result<Var<'t>> {
    let (mr, wr) = rows(reference)?;
    let (ms, ws) = rows(sample)?;
    if wr != ws || wr != critic.input_width() {
        return Err(Error::Shape(format!(
            "critic of width {} given rows of width {wr} and {ws}",
            critic.input_width()
        )));
    }
    let a = critic.score(tape, reference.reshape(&[mr, wr])).mean();
    let b = critic.score(tape, sample.reshape(&[ms, ws])).mean();
    Ok(a - b)
}

/// Mean critic score on the uniform reference minus mean score on the
/// extracted innovations; both `[M, m]`.
pub fn innovation_gap<'t, S: Scorer + ?Sized>(critic: &S, tape: &'t Tape, v_hat: Var<'t>, u_ref: Var<'t>) -> Result<Var<'t>> {
    score_gap(critic, tape, u_ref, v_hat)
}

/// Mean critic score on true trajectories minus mean score on
/// past-plus-generated ones; both `[N, L + H, D]`.
pub fn reconstruction_gap<'t, S: Scorer + ?Sized>(
    critic: &S,
    tape: &'t Tape,
    x_joint: Var<'t>,
    x_generated: Var<'t>,
) -> Result<Var<'t>> {
    if x_joint.shape() != x_generated.shape() {
        return Err(Error::Shape(format!(
            "true trajectories {:?} vs generated {:?}",
            x_joint.shape(),
            x_generated.shape()
        )));
    }
    score_gap(critic, tape, x_joint, x_generated)
}

/// Map the latent mean onto `[0, 1]^m` so it can be compared with the
/// uniform innovation reference. `mu` is `[N, L, m]`; the result is `[N L, m]`.
pub fn innovation_bridge(mu: Var<'_>) -> Var<'_> {
    let s = mu.shape();
    let m = *s.last().expect("rank >= 1");
    let rows = mu.value().len() / m;
    mu.sigmoid().reshape(&[rows, m])
}

/// Concatenate contexts `[N, L, D]` with futures `[N, H, D]` along time.
pub fn join_trajectory<'t>(context: Var<'t>, future: Var<'t>) -> Var<'t> {
    Var::concat(&[context, future], 1)
}

/// The two critics and their optimisers.
#[derive(Clone, Debug)]
pub struct Critics {
    pub innovation: Critic,
    pub reconstruction: Critic,
    opt_inn: Adam,
    opt_rec: Adam,
}

impl Critics {
    pub fn new(model: &Generator, cfg: &AdversarialConfig, rng: &mut RngStream) -> Result<Self> {
        let mc = model.config();
        let innovation = Critic::new(mc.d_z, cfg.critic_hidden, cfg.clip_bound, rng)?;
        let width = (mc.context_len + mc.horizon) * mc.dim;
        let reconstruction = Critic::new(width, cfg.critic_hidden, cfg.clip_bound, rng)?;
        let opt = |c: &Critic| Adam::new(c.store(), cfg.critic_lr, 0.9, 0.999, 1e-8);
        Ok(Self { opt_inn: opt(&innovation), opt_rec: opt(&reconstruction), innovation, reconstruction })
    }
}

/// `gap_inn + lambda gap_rec`: the generator minimises it, the critics
/// maximise it.
pub fn adversarial_objective<'t>(
    critics: &Critics,
    tape: &'t Tape,
    v_hat: Var<'t>,
    u_ref: Var<'t>,
    x_joint: Var<'t>,
    x_generated: Var<'t>,
    lambda: f64,
) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
    let gi = innovation_gap(&critics.innovation, tape, v_hat, u_ref)?;
    let gr = reconstruction_gap(&critics.reconstruction, tape, x_joint, x_generated)?;
    Ok((gi + gr.scale(lambda), gi, gr))
}

/// Per-step record of the adversarial game.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub gap_inn_before: f64,
    pub gap_rec_before: f64,
    pub gap_inn_after: f64,
    pub gap_rec_after: f64,
    /// Adversarial part of the generator loss at the generator update.
    pub generator_loss: f64,
    pub likelihood: LossTerms,
}

/// Detached generator outputs used by the critics.
struct Fakes {
    v_hat: Tensor,
    x_joint: Tensor,
    x_generated: Tensor,
}

/// Noise for one generator evaluation: the forward noise plus the
/// predictive draw.
struct StepNoise {
    forward: Noise,
    predictive: Tensor,
}

impl StepNoise {
    fn draw(model: &Generator, n: usize, rng: &mut RngStream) -> Self {
        let c = model.config();
        let forward = Noise::draw(c, n, rng);
        let predictive = rng.normal_tensor(&[n, c.horizon, c.dim]);
        Self { forward, predictive }
    }
}

struct GeneratorSide<'t> {
    v_hat: Var<'t>,
    x_joint: Var<'t>,
    x_generated: Var<'t>,
    pass: crate::model::ForwardPass<'t>,
}

fn generator_side<'t>(tape: &'t Tape, model: &Generator, batch: &WindowBatch, noise: &StepNoise) -> Result<GeneratorSide<'t>> {
    let pass = model.forward_on(tape, model.store(), &batch.contexts, &noise.forward)?;
    let ctx = tape.constant(batch.contexts.clone());
    let future = sample_predictive_var(pass.mu_y, pass.sigma_y, pass.gate_out, noise.predictive.clone())?;
    Ok(GeneratorSide {
        v_hat: innovation_bridge(pass.enc.mu),
        x_joint: join_trajectory(ctx, tape.constant(batch.targets.clone())),
        x_generated: join_trajectory(ctx, future),
        pass,
    })
}

fn fakes(model: &Generator, batch: &WindowBatch, noise: &StepNoise) -> Result<Fakes> {
    let tape = Tape::new();
    let g = generator_side(&tape, model, batch, noise)?;
    Ok(Fakes {
        v_hat: (*g.v_hat.value()).clone(),
        x_joint: (*g.x_joint.value()).clone(),
        x_generated: (*g.x_generated.value()).clone(),
    })
}

fn gaps_on(critics: &Critics, f: &Fakes, u_ref: &Tensor, lambda: f64) -> Result<(f64, f64)> {
    let tape = Tape::new();
    let c = |t: &Tensor| tape.constant(t.clone());
    let (_, gi, gr) = adversarial_objective(critics, &tape, c(&f.v_hat), c(u_ref), c(&f.x_joint), c(&f.x_generated), lambda)?;
    Ok((gi.item(), gr.item()))
}

fn finite(v: f64, term: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term: term.into() })
    }
}

/// Alternating trainer: `n_critic` ascent steps on both critics, then one
/// descent step on the generator.
#[derive(Clone, Debug)]
pub struct AdversarialTrainer {
    cfg: AdversarialConfig,
    train_cfg: TrainConfig,
    mode: TrainMode,
    critics: Critics,
    gen_opt: Adam,
}

impl AdversarialTrainer {
    pub fn new(model: &Generator, cfg: AdversarialConfig, train_cfg: TrainConfig, mode: TrainMode, seed: u64) -> Result<Self> {
        cfg.validate()?;
        train_cfg.validate()?;
        if mode == TrainMode::Likelihood {
            return Err(Error::Config("the adversarial trainer needs adversarial or combined mode".into()));
        }
        let critics = Critics::new(model, &cfg, &mut RngStream::new(seed))?;
        let gen_opt = Adam::from_config(model.store(), &train_cfg);
        Ok(Self { cfg, train_cfg, mode, critics, gen_opt })
    }

    pub fn critics(&self) -> &Critics {
        &self.critics
    }

    pub fn step(&mut self, model: &mut Generator, batch: &WindowBatch, rng: &mut RngStream) -> Result<StepReport> {
        let lambda = self.cfg.lambda_balance;
        let m = model.config().d_z;
        let noise = StepNoise::draw(model, batch.len(), rng);
        let f = fakes(model, batch, &noise)?;
        let rows = f.v_hat.shape()[0];
        let u_eval = rng.uniform_tensor(&[rows, m]);
        let (gi0, gr0) = gaps_on(&self.critics, &f, &u_eval, lambda)?;

        for _ in 0..self.cfg.n_critic {
            let u_ref = rng.uniform_tensor(&[rows, m]);
            let tape = Tape::new();
            let c = |t: &Tensor| tape.constant(t.clone());
            let (obj, _, _) =
                adversarial_objective(&self.critics, &tape, c(&f.v_hat), c(&u_ref), c(&f.x_joint), c(&f.x_generated), lambda)?;
            finite(obj.item(), "critic objective")?;
            let loss = obj.neg();
            let cr = &mut self.critics;
            cr.innovation.store_mut().zero_grad();
            cr.reconstruction.store_mut().zero_grad();
            tape.backward_into(loss, cr.innovation.store_mut())?;
            tape.backward_into(loss, cr.reconstruction.store_mut())?;
            cr.opt_inn.step(cr.innovation.store_mut())?;
            cr.opt_rec.step(cr.reconstruction.store_mut())?;
            cr.innovation.clip();
            cr.reconstruction.clip();
        }

        let u_ref = rng.uniform_tensor(&[rows, m]);
        let tape = Tape::new();
        let g = generator_side(&tape, model, batch, &noise)?;
        let (adv, _, _) = adversarial_objective(&self.critics, &tape, g.v_hat, tape.constant(u_ref), g.x_joint, g.x_generated, lambda)?;
        let generator_loss = finite(adv.item(), "generator adversarial loss")?;
        let (lik, likelihood) = training::objective_from_pass(&tape, model.store(), &g.pass, &batch.targets, &self.train_cfg)?;
        let loss = match self.mode {
            TrainMode::Combined => lik + adv.scale(self.cfg.adversarial_weight),
            _ => adv,
        };
        model.store_mut().zero_grad();
        tape.backward_into(loss, model.store_mut())?;
        self.gen_opt.step(model.store_mut())?;

        let f_after = fakes(model, batch, &noise)?;
        let (gi1, gr1) = gaps_on(&self.critics, &f_after, &u_eval, lambda)?;
        Ok(StepReport {
            gap_inn_before: gi0,
            gap_rec_before: gr0,
            gap_inn_after: gi1,
            gap_rec_after: gr1,
            generator_loss,
            likelihood,
        })
    }
}

/// Adversarial or combined training with the shared epoch loop. Returns the
/// epoch report and every step report.
pub fn fit_adversarial(
    model: &mut Generator,
    train: &WindowBatch,
    val: &WindowBatch,
    train_cfg: &TrainConfig,
    cfg: &AdversarialConfig,
    mode: TrainMode,
) -> Result<(TrainReport, Vec<StepReport>)> {
    if mode == TrainMode::Likelihood {
        return Ok((training::fit(model, train, val, train_cfg)?, Vec::new()));
    }
    let mut trainer = AdversarialTrainer::new(model, cfg.clone(), train_cfg.clone(), mode, train_cfg.seed.wrapping_add(1))?;
    let mut steps = Vec::new();
    let report = training::fit_with(model, train, val, train_cfg, |m, b, rng| {
        let s = trainer.step(m, b, rng)?;
        steps.push(s);
        Ok(s.likelihood)
    })?;
    Ok((report, steps))
}

/// 1-Wasserstein distance between two equally sized 1-D samples.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(contract("wasserstein1_1d needs two non-empty samples of equal size"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// A freshly trained probe critic and its gap on the training samples.
#[derive(Clone, Debug)]
pub struct Probe {
    pub critic: Critic,
    /// `E[D(reference)] - E[D(sample)]` after training.
    pub gap: f64,
}

/// Train a critic to separate `reference` from `sample` (both `[M, d]`).
pub fn train_probe(reference: &Tensor, sample: &Tensor, cfg: &AdversarialConfig, rng: &mut RngStream) -> Result<Probe> {
    cfg.validate()?;
    if reference.rank() != 2 || sample.rank() != 2 || reference.shape()[1] != sample.shape()[1] {
        return Err(Error::Shape(format!("probe inputs {:?} and {:?}", reference.shape(), sample.shape())));
    }
    let width = reference.shape()[1];
    let mut critic = Critic::new(width, cfg.critic_hidden, cfg.clip_bound, rng)?;
    let mut opt = Adam::new(critic.store(), cfg.probe_lr, 0.9, 0.999, 1e-8);
    let pick = |t: &Tensor, rng: &mut RngStream| -> Result<Tensor> {
        let m = t.shape()[0];
        let k = cfg.probe_batch.min(m);
        let mut data = Vec::with_capacity(k * width);
        for _ in 0..k {
            let r = rng.below(m);
            data.extend_from_slice(&t.data()[r * width..(r + 1) * width]);
        }
        Tensor::new(vec![k, width], data)
    };
    for _ in 0..cfg.probe_steps {
        let a = pick(reference, rng)?;
        let b = pick(sample, rng)?;
        let tape = Tape::new();
        let gap = score_gap(&critic, &tape, tape.constant(a), tape.constant(b))?;
        finite(gap.item(), "probe gap")?;
        critic.store_mut().zero_grad();
        tape.backward_into(gap.neg(), critic.store_mut())?;
        opt.step(critic.store_mut())?;
        critic.clip();
    }
    let gap = critic.score_tensor(reference).mean() - critic.score_tensor(sample).mean();
    Ok(Probe { critic, gap })
}

/// Something whose innovations and generated futures can be probed.
pub trait WeakInnovationSource {
    /// Extracted innovations for `contexts` (`[N, L, D]`), as rows `[M, m]`
    /// in `[0, 1]^m`.
    fn innovations(&self, contexts: &Tensor, rng: &mut RngStream) -> Result<Tensor>;
    /// One generated future `[N, H, D]` per context.
    fn generate(&self, contexts: &Tensor, rng: &mut RngStream) -> Result<Tensor>;
}

impl WeakInnovationSource for Generator {
    fn innovations(&self, contexts: &Tensor, _rng: &mut RngStream) -> Result<Tensor> {
        let tape = Tape::new();
        let enc = self.encode_on(&tape, self.store(), tape.constant(contexts.clone()))?;
        Ok((*innovation_bridge(enc.mu).value()).clone())
    }

    fn generate(&self, contexts: &Tensor, rng: &mut RngStream) -> Result<Tensor> {
        let out = self.predict(contexts, 1, rng)?;
        let s = out.samples.expect("one sample requested");
        s.reshape(out.mu_y.shape())
    }
}

/// Probe gaps with standard errors over evaluation chunks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub gap_inn: f64,
    pub gap_inn_stderr: f64,
    pub gap_rec: f64,
    pub gap_rec_stderr: f64,
}

fn flatten_rows(t: &Tensor) -> Result<Tensor> {
    let n = t.shape()[0];
    t.reshape(&[n, t.len() / n])
}

fn chunked_gap(critic: &Critic, reference: &Tensor, sample: &Tensor, chunks: usize) -> Result<(f64, f64)> {
    let n = reference.shape()[0].min(sample.shape()[0]);
    let k = chunks.min(n).max(1);
    let sr = critic.score_tensor(reference);
    let ss = critic.score_tensor(sample);
    let mut gaps = Vec::with_capacity(k);
    for c in 0..k {
        let (lo, hi) = (c * n / k, (c + 1) * n / k);
        let len = (hi - lo) as f64;
        let a: f64 = sr.data()[lo..hi].iter().sum::<f64>() / len;
        let b: f64 = ss.data()[lo..hi].iter().sum::<f64>() / len;
        gaps.push(a - b);
    }
    let mean = gaps.iter().sum::<f64>() / k as f64;
    let stderr = if k > 1 {
        let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        (var / k as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, stderr))
}

/// Train fresh probe critics on the first half of `held_out` and report
/// their gaps on the second half. Small gaps indicate that generated
/// trajectories and extracted innovations are close in distribution to the
/// real ones.
pub fn weak_innovation_diagnostic<S: WeakInnovationSource + ?Sized>(
    source: &S,
    held_out: &WindowBatch,
    cfg: &AdversarialConfig,
    rng: &mut RngStream,
) -> Result<DiagnosticReport> {
    cfg.validate()?;
    let n = held_out.len();
    if n < 4 {
        return Err(Error::InsufficientData { required: 4, available: n });
    }
    let half = n / 2;
    let fit_part = held_out.select(&(0..half).collect::<Vec<_>>())?;
    let eval_part = held_out.select(&(half..n).collect::<Vec<_>>())?;

    let prepare = |b: &WindowBatch, rng: &mut RngStream| -> Result<(Tensor, Tensor, Tensor, Tensor)> {
        let v = source.innovations(&b.contexts, rng)?;
        let u = rng.uniform_tensor(v.shape());
        let future = source.generate(&b.contexts, rng)?;
        let tape = Tape::new();
        let ctx = tape.constant(b.contexts.clone());
        let joint = join_trajectory(ctx, tape.constant(b.targets.clone()));
        let gen = join_trajectory(ctx, tape.constant(future));
        Ok((u, v, flatten_rows(&joint.value())?, flatten_rows(&gen.value())?))
    };
    let (u_fit, v_fit, j_fit, g_fit) = prepare(&fit_part, rng)?;
    let (u_ev, v_ev, j_ev, g_ev) = prepare(&eval_part, rng)?;

    let inn = train_probe(&u_fit, &v_fit, cfg, rng)?;
    let rec = train_probe(&j_fit, &g_fit, cfg, rng)?;
    let (gap_inn, gap_inn_stderr) = chunked_gap(&inn.critic, &u_ev, &v_ev, cfg.probe_chunks)?;
    let (gap_rec, gap_rec_stderr) = chunked_gap(&rec.critic, &j_ev, &g_ev, cfg.probe_chunks)?;
    Ok(DiagnosticReport { gap_inn, gap_inn_stderr, gap_rec, gap_rec_stderr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    /// `D(x) = sum_j w_j x_j`.
    struct Linear(Vec<f64>);

    impl Scorer for Linear {
        fn input_width(&self) -> usize {
            self.0.len()
        }

        fn score<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
            let w = tape.constant(Tensor::new(vec![self.0.len(), 1], self.0.clone()).unwrap());
            let m = x.shape()[0];
            x.matmul(w).reshape(&[m])
        }
    }

    fn constant_critic(width: usize, c: f64) -> Critic {
        let mut critic = Critic::new(width, 8, 10.0, &mut RngStream::new(1)).unwrap();
        for p in critic.store_mut().iter_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        let last = critic.store().find("critic.l2.b").unwrap();
        critic.store_mut().get_mut(last).value = Tensor::full(&[1], c);
        critic
    }

    #[test]
    fn constant_critic_has_zero_gaps() {
        let critic = constant_critic(3, 0.75);
        let tape = Tape::new();
        let mut rng = RngStream::new(2);
        let a = tape.constant(rng.normal_tensor(&[10, 3]));
        let b = tape.constant(rng.uniform_tensor(&[12, 3]));
        assert_eq!(innovation_gap(&critic, &tape, a, b).unwrap().item(), 0.0);
        let x = tape.constant(rng.normal_tensor(&[4, 1, 3]));
        let y = tape.constant(rng.normal_tensor(&[4, 1, 3]));
        assert_eq!(reconstruction_gap(&critic, &tape, x, y).unwrap().item(), 0.0);
    }

    #[test]
    fn linear_critic_gaps() {
        let tape = Tape::new();
        let u = tape.constant(Tensor::new(vec![2, 1], vec![0.25, 0.75]).unwrap());
        let v = tape.constant(Tensor::new(vec![2, 1], vec![-0.5, 0.5]).unwrap());
        let g = innovation_gap(&Linear(vec![1.0]), &tape, v, u).unwrap();
        assert!((g.item() - 0.5).abs() < 1e-15);

        let w = vec![0.3, -1.2, 2.0];
        let truth = Tensor::new(vec![2, 3, 1], vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap();
        let mut shifted = truth.clone();
        let delta = 0.8;
        for n in 0..2 {
            shifted.set(&[n, 2, 0], truth.get(&[n, 2, 0]) + delta);
        }
        let g = reconstruction_gap(&Linear(w.clone()), &tape, tape.constant(truth.clone()), tape.constant(shifted)).unwrap();
        assert!((g.item() + w[2] * delta).abs() < 1e-12);
        let same = reconstruction_gap(&Linear(w), &tape, tape.constant(truth.clone()), tape.constant(truth)).unwrap();
        assert_eq!(same.item(), 0.0);
    }

    #[test]
    fn gap_input_checks() {
        let critic = constant_critic(2, 0.0);
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[3, 2]));
        let b = tape.constant(Tensor::zeros(&[3, 3]));
        assert!(matches!(innovation_gap(&critic, &tape, a, b), Err(Error::Shape(_))));
        let x = tape.constant(Tensor::zeros(&[2, 1, 2]));
        let y = tape.constant(Tensor::zeros(&[1, 2, 2]));
        assert!(reconstruction_gap(&critic, &tape, x, y).is_err());
    }

    #[test]
    fn identical_distribution_gap_shrinks() {
        let critic = Critic::new(2, 16, 0.5, &mut RngStream::new(3)).unwrap();
        let mut rng = RngStream::new(4);
        let mut gap_at = |n: usize| {
            let tape = Tape::new();
            let u = tape.constant(rng.uniform_tensor(&[n, 2]));
            let v = tape.constant(rng.uniform_tensor(&[n, 2]));
            innovation_gap(&critic, &tape, v, u).unwrap().item().abs()
        };
        let small: f64 = (0..20).map(|_| gap_at(50)).sum::<f64>() / 20.0;
        let large: f64 = (0..20).map(|_| gap_at(5000)).sum::<f64>() / 20.0;
        assert!(large < small, "{large} vs {small}");
    }

    #[test]
    fn config_rejects_zero_critic_steps() {
        let cfg = AdversarialConfig { n_critic: 0, ..AdversarialConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    fn toy_batch(cfg: &ModelConfig, n: usize, seed: u64) -> WindowBatch {
        let mut rng = RngStream::new(seed);
        WindowBatch {
            contexts: rng.normal_tensor(&[n, cfg.context_len, cfg.dim]),
            targets: rng.normal_tensor(&[n, cfg.horizon, cfg.dim]),
            origin_indices: (0..n).collect(),
        }
    }

    #[test]
    fn step_clips_critics_and_is_deterministic() {
        let run = || {
            let mut model = Generator::new(ModelConfig::tiny(), 5).unwrap();
            let cfg = AdversarialConfig { critic_hidden: 8, critic_lr: 0.05, ..AdversarialConfig::default() };
            let mut tr = AdversarialTrainer::new(&model, cfg, TrainConfig::default(), TrainMode::Adversarial, 6).unwrap();
            let batch = toy_batch(model.config(), 4, 7);
            let mut rng = RngStream::new(8);
            let mut reports = Vec::new();
            for _ in 0..3 {
                reports.push(tr.step(&mut model, &batch, &mut rng).unwrap());
                let c = tr.critics();
                assert!(c.innovation.max_abs_weight() <= 0.01);
                assert!(c.reconstruction.max_abs_weight() <= 0.01);
            }
            (reports, model.to_checkpoint())
        };
        let (a, ca) = run();
        let (b, cb) = run();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein1_1d(&[0.0, 1.0], &[3.0, 4.0]).unwrap(), 3.0);
        assert_eq!(wasserstein1_1d(&[2.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert!(wasserstein1_1d(&[1.0], &[]).is_err());
    }

    #[test]
    fn attainable_lipschitz_of_default_shape() {
        let c = Critic::new(1, 64, 0.01, &mut RngStream::new(9)).unwrap();
        let expected = 0.01f64.powi(3) * 8.0 * 64.0 * 8.0;
        assert!((c.attainable_lipschitz() - expected).abs() < 1e-15);
    }
}
