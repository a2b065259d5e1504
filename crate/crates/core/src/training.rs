//! The three-term objective (Gaussian NLL, calibration alignment, gate
//! smoothness), the Adam optimiser and the epoch loop with early stopping.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::WindowBatch;
use crate::error::{contract, Error, Result};
use crate::gate;
use crate::model::{ForwardPass, Generator, Noise};
use crate::numerics::{ParamStore, RngStream, Tape, Tensor, Var};

/// Minimum validation improvement that resets the patience counter.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

/// Where the adaptive regulariser `lambda_t = lambda0 (1 - g)` enters the loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveRegularization {
    /// Plain objective.
    #[default]
    Off,
    /// Per-sample weight `1 - g` on the gate-smoothness term.
    GateSmoothness,
    /// Extra term `mean(lambda_t) * weight_decay * ||theta||^2`.
    WeightDecay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda0: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub adaptive: AdaptiveRegularization,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.01,
            lambda0: 1.0,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            adaptive: AdaptiveRegularization::Off,
            weight_decay: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda0", self.lambda0),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("lr and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(())
    }
}

fn same_shape(a: Var<'_>, b: Var<'_>, c: Var<'_>) -> Result<()> {
    if a.shape() != b.shape() || a.shape() != c.shape() {
        return Err(Error::Shape(format!("y {:?}, mu {:?}, sigma {:?}", a.shape(), b.shape(), c.shape())));
    }
    Ok(())
}

/// Gaussian NLL without the `log 2 pi` constant: the sum over horizon and
/// dimensions of `(y - mu)^2 / (2 sigma^2) + log sigma`, averaged over the
/// leading axis.
pub fn nll_loss<'t>(y: Var<'t>, mu: Var<'t>, sigma: Var<'t>) -> Result<Var<'t>> {
    same_shape(y, mu, sigma)?;
    if sigma.value().data().iter().any(|&s| !(s > 0.0)) {
        return Err(contract("sigma must be positive"));
    }
    let n = y.shape()[0] as f64;
    let quad = (y - mu).square() / sigma.square().scale(2.0);
    Ok((quad + sigma.ln()).sum().scale(1.0 / n))
}

/// `(1 - corr(|y - mu|, sigma))^2` over all elements; a degenerate
/// correlation counts as 0.
pub fn calibration_loss<'t>(y: Var<'t>, mu: Var<'t>, sigma: Var<'t>) -> Result<Var<'t>> {
    same_shape(y, mu, sigma)?;
    if y.value().len() < 2 {
        return Err(contract("calibration needs at least two elements"));
    }
    let r = (y - mu).abs().pearson(sigma);
    Ok(r.neg().add_scalar(1.0).square())
}

/// Squared first differences along axis 1 of `gates` (`[N, T]`), summed over
/// time and averaged over `N`. `weights`, if given, scales each sample.
pub fn gate_smoothness_loss<'t>(gates: Var<'t>, weights: Option<Var<'t>>) -> Result<Var<'t>> {
    let s = gates.shape();
    if s.len() != 2 {
        return Err(Error::Shape(format!("gate sequence must be [N, T], got {s:?}")));
    }
    let (n, t) = (s[0], s[1]);
    if t < 2 {
        return Ok(gates.tape().scalar(0.0));
    }
    let d = gates.narrow(1, 1, t - 1) - gates.narrow(1, 0, t - 1);
    let per_sample = d.square().sum_axis(1);
    let weighted = match weights {
        Some(w) => {
            if w.shape() != [n] {
                return Err(Error::Shape(format!("smoothness weights {:?} for {n} samples", w.shape())));
            }
            per_sample * w
        }
        None => per_sample,
    };
    Ok(weighted.sum().scale(1.0 / n as f64))
}

/// Values of the loss terms for one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub nll: f64,
    pub cal: f64,
    pub gate: f64,
    /// Weight-decay term; zero unless that regulariser is enabled.
    pub reg: f64,
    pub total: f64,
}

impl LossTerms {
    /// `nll + lambda1 cal + lambda2 gate + reg`.
    pub fn recombine(&self, cfg: &TrainConfig) -> f64 {
        self.nll + cfg.lambda1 * self.cal + cfg.lambda2 * self.gate + self.reg
    }

    pub(crate) fn first_non_finite(&self) -> Option<&'static str> {
        [("nll", self.nll), ("cal", self.cal), ("gate", self.gate), ("reg", self.reg), ("total", self.total)]
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }

    fn mean_of(items: &[LossTerms]) -> LossTerms {
        let k = items.len().max(1) as f64;
        let mut m = LossTerms::default();
        for t in items {
            m.nll += t.nll / k;
            m.cal += t.cal / k;
            m.gate += t.gate / k;
            m.reg += t.reg / k;
            m.total += t.total / k;
        }
        m
    }
}

/// Loss on the tape together with its parts and the forward pass.
pub struct Objective<'t> {
    pub total: Var<'t>,
    pub terms: LossTerms,
    pub pass: ForwardPass<'t>,
}

/// Forward `batch` through `model` (parameters from `store`) and build the
/// objective.
pub fn total_loss<'t>(
    tape: &'t Tape,
    model: &Generator,
    store: &ParamStore,
    batch: &WindowBatch,
    cfg: &TrainConfig,
    noise: &Noise,
) -> Result<Objective<'t>> {
    let pass = model.forward_on(tape, store, &batch.contexts, noise)?;
    let (total, terms) = objective_from_pass(tape, store, &pass, &batch.targets, cfg)?;
    Ok(Objective { total, terms, pass })
}

/// The objective for an existing forward pass against `targets`.
pub fn objective_from_pass<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    pass: &ForwardPass<'t>,
    targets: &Tensor,
    cfg: &TrainConfig,
) -> Result<(Var<'t>, LossTerms)> {
    let y = tape.constant(targets.clone());
    let nll = nll_loss(y, pass.mu_y, pass.sigma_y)?;
    let cal = calibration_loss(y, pass.mu_y, pass.sigma_y)?;
    let weights = match cfg.adaptive {
        AdaptiveRegularization::GateSmoothness => Some(gate::conservatism_weight(pass.gate_summary)),
        _ => None,
    };
    let smooth = gate_smoothness_loss(pass.gate_sequence, weights)?;
    let mut total = nll + cal.scale(cfg.lambda1) + smooth.scale(cfg.lambda2);
    let mut reg_value = 0.0;
    if cfg.adaptive == AdaptiveRegularization::WeightDecay {
        let norm = store
            .ids()
            .map(|id| tape.param(store, id).square().sum())
            .reduce(|a, b| a + b)
            .unwrap_or_else(|| tape.scalar(0.0));
        let lambda = gate::conservatism_weight(pass.gate_summary).mean().scale(cfg.lambda0);
        let reg = (lambda * norm).scale(cfg.weight_decay);
        reg_value = reg.item();
        total = total + reg;
    }
    let terms = LossTerms { nll: nll.item(), cal: cal.item(), gate: smooth.item(), reg: reg_value, total: total.item() };
    if let Some(term) = terms.first_non_finite() {
        return Err(Error::NonFinite { term: format!("loss term {term}") });
    }
    Ok((total, terms))
}

/// Bias-corrected adaptive moment estimation over a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { lr, beta1, beta2, eps, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn from_config(store: &ParamStore, cfg: &TrainConfig) -> Self {
        Self::new(store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Apply one update using the gradients stored in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some(p) = store.iter().find(|p| !p.grad.all_finite()) {
            return Err(Error::NonFinite { term: format!("gradient of {}", p.id) });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let mi = &mut m.data_mut()[i];
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g[i];
                let vi = &mut v.data_mut()[i];
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g[i] * g[i];
                *w -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Likelihood trainer: one optimiser plus the noise stream.
#[derive(Clone, Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    opt: Adam,
}

impl Trainer {
    pub fn new(model: &Generator, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = Adam::from_config(model.store(), &cfg);
        Ok(Self { cfg, opt })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One gradient step on `batch`; returns the loss before the update.
    pub fn step(&mut self, model: &mut Generator, batch: &WindowBatch, rng: &mut RngStream) -> Result<LossTerms> {
        let noise = Noise::draw(model.config(), batch.len(), rng);
        let tape = Tape::new();
        let obj = total_loss(&tape, model, model.store(), batch, &self.cfg, &noise)?;
        model.store_mut().zero_grad();
        tape.backward_into(obj.total, model.store_mut())?;
        self.opt.step(model.store_mut())?;
        Ok(obj.terms)
    }
}

/// Loss terms of `model` on `batch` with noise drawn from `seed`.
pub fn evaluate_loss(model: &Generator, batch: &WindowBatch, cfg: &TrainConfig, seed: u64) -> Result<(LossTerms, Tensor)> {
    let noise = Noise::draw(model.config(), batch.len(), &mut RngStream::new(seed));
    let tape = Tape::new();
    let obj = total_loss(&tape, model, model.store(), batch, cfg, &noise)?;
    let gate = (*obj.pass.gate.value()).clone();
    Ok((obj.terms, gate))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// Epoch number, continuing from earlier runs of the same model.
    pub epoch: usize,
    /// Mean over the epoch's mini-batches, each measured before its update.
    pub train: LossTerms,
    pub val: LossTerms,
    pub gate_mean: f64,
    /// Spread of the gate values on the validation set.
    pub gate_var: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Train-set loss before the first update.
    pub initial_train: LossTerms,
    pub initial_val: LossTerms,
    pub epochs: Vec<EpochReport>,
    /// Train-set loss of the returned parameters.
    pub final_train: LossTerms,
    pub best_epoch: Option<usize>,
    pub best_val_total: Option<f64>,
    pub stopped_early: bool,
    pub epochs_trained: usize,
    pub wall_time_secs: f64,
}

fn eval_seed(cfg: &TrainConfig) -> u64 {
    cfg.seed ^ 0x5eed_5eed_5eed_5eed
}

/// Epoch loop shared by the likelihood and adversarial trainers: shuffles
/// `train` each epoch, calls `step` per mini-batch, tracks validation loss,
/// stops after `patience` epochs without improvement and restores the best
/// parameters.
pub fn fit_with<F>(model: &mut Generator, train: &WindowBatch, val: &WindowBatch, cfg: &TrainConfig, mut step: F) -> Result<TrainReport>
where
    F: FnMut(&mut Generator, &WindowBatch, &mut RngStream) -> Result<LossTerms>,
{
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput("training and validation windows are required".into()));
    }
    let started = Instant::now();
    let es = eval_seed(cfg);
    let initial_train = evaluate_loss(model, train, cfg, es)?.0;
    let initial_val = evaluate_loss(model, val, cfg, es)?.0;

    let mut rng = RngStream::new(cfg.seed);
    let first_epoch = model.epochs_trained();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut waited = 0;
    let mut stopped_early = false;

    for e in 0..cfg.max_epochs {
        let epoch = first_epoch + e + 1;
        let order = rng.permutation(train.len());
        let mut batch_terms = Vec::new();
        for batch in train.batches(&order, cfg.batch_size)? {
            let terms = step(model, &batch, &mut rng)?;
            if let Some(term) = terms.first_non_finite() {
                return Err(Error::NonFinite { term: format!("loss term {term} at epoch {epoch}") });
            }
            batch_terms.push(terms);
        }
        let (val_terms, gates) = evaluate_loss(model, val, cfg, es)?;
        let improved = best.as_ref().is_none_or(|(b, _, _)| val_terms.total < b - MIN_IMPROVEMENT);
        if improved {
            best = Some((val_terms.total, epoch, model.store().clone()));
            waited = 0;
        } else {
            waited += 1;
        }
        let report = EpochReport {
            epoch,
            train: LossTerms::mean_of(&batch_terms),
            val: val_terms,
            gate_mean: gates.mean(),
            gate_var: gate::decision_uncertainty(&gates),
            improved,
        };
        log::debug!(
            "epoch {epoch}: train {:.6} val {:.6} (nll {:.6}, cal {:.6}, gate {:.6})",
            report.train.total,
            val_terms.total,
            val_terms.nll,
            val_terms.cal,
            val_terms.gate
        );
        epochs.push(report);
        if waited >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    let (best_val_total, best_epoch) = match &best {
        Some((v, e, params)) => {
            model.store_mut().load_values(params)?;
            (Some(*v), Some(*e))
        }
        None => (None, None),
    };
    model.set_epochs_trained(first_epoch + epochs.len());
    let final_train = evaluate_loss(model, train, cfg, es)?.0;
    Ok(TrainReport {
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
        initial_train,
        initial_val,
        epochs,
        final_train,
        best_epoch,
        best_val_total,
        stopped_early,
        epochs_trained: model.epochs_trained(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Likelihood training with Adam and early stopping.
pub fn fit(model: &mut Generator, train: &WindowBatch, val: &WindowBatch, cfg: &TrainConfig) -> Result<TrainReport> {
    let mut trainer = Trainer::new(model, cfg.clone())?;
    fit_with(model, train, val, cfg, |m, b, rng| trainer.step(m, b, rng))
}

/// Tolerance on the maximum relative error in [`gradient_check`].
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub id: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub params: Vec<ParamCheck>,
    pub passed: bool,
}

/// Compares the analytic gradient of the full objective on `batch` with
/// central differences, parameter by parameter, using frozen `noise`.
///
/// `corrupt` names a parameter whose analytic gradient is perturbed before the
/// comparison, which lets callers confirm that the check can fail.
pub fn gradient_check(
    model: &Generator,
    batch: &WindowBatch,
    cfg: &TrainConfig,
    noise: &Noise,
    step: f64,
    corrupt: Option<&str>,
) -> Result<GradCheckReport> {
    let mut store = model.store().clone();
    store.zero_grad();
    {
        let tape = Tape::new();
        let obj = total_loss(&tape, model, &store, batch, cfg, noise)?;
        tape.backward_into(obj.total, &mut store)?;
    }
    if let Some(name) = corrupt {
        let id = store.find(name).ok_or_else(|| contract(format!("no parameter named {name}")))?;
        let g = &mut store.get_mut(id).grad;
        let bump = 1e-2 * g.max_abs().max(1.0);
        g.data_mut()[0] += bump;
    }
    let numeric = crate::numerics::finite_difference_gradient(&store, step, |s| {
        let tape = Tape::new();
        Ok(total_loss(&tape, model, s, batch, cfg, noise)?.terms.total)
    })?;
    let params: Vec<ParamCheck> = store
        .iter()
        .zip(&numeric)
        .map(|(p, fd)| {
            let err = crate::numerics::max_relative_error(&p.grad, fd);
            ParamCheck { id: p.id.clone(), max_rel_error: err, passed: err < GRADCHECK_TOLERANCE }
        })
        .collect();
    let passed = params.iter().all(|p| p.passed);
    Ok(GradCheckReport { tolerance: GRADCHECK_TOLERANCE, step, params, passed })
}
