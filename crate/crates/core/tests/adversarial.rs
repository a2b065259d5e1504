mod common;

use ugf_core::data::WindowBatch;
use ugf_core::model::{Generator, ModelConfig};
use ugf_core::training::TrainConfig;
use ugf_core::wiae::{
    adversarial_objective, fit_adversarial, score_gap, train_probe, weak_innovation_diagnostic, AdversarialConfig,
    AdversarialTrainer, Critic, Critics, TrainMode, WeakInnovationSource,
};
use ugf_core::{Result, RngStream, Tape, Tensor};

/// Returns the real targets and genuinely uniform innovations.
struct Oracle;

impl WeakInnovationSource for Oracle {
    fn innovations(&self, contexts: &Tensor, rng: &mut RngStream) -> Result<Tensor> {
        Ok(rng.uniform_tensor(&[contexts.shape()[0], 4]))
    }

    fn generate(&self, _contexts: &Tensor, _rng: &mut RngStream) -> Result<Tensor> {
        unreachable!("replaced per batch")
    }
}

struct Replay {
    targets: Tensor,
    contexts: Tensor,
    innovation: Option<f64>,
    shift: f64,
}

impl WeakInnovationSource for Replay {
    fn innovations(&self, contexts: &Tensor, rng: &mut RngStream) -> Result<Tensor> {
        match self.innovation {
            Some(v) => Ok(Tensor::full(&[contexts.shape()[0], 4], v)),
            None => Oracle.innovations(contexts, rng),
        }
    }

    fn generate(&self, contexts: &Tensor, _rng: &mut RngStream) -> Result<Tensor> {
        // look up each context among the stored windows
        let n = contexts.shape()[0];
        let per = contexts.len() / n;
        let all = self.contexts.shape()[0];
        let h = self.targets.len() / all;
        let mut out = Vec::with_capacity(n * h);
        for i in 0..n {
            let row = &contexts.data()[i * per..(i + 1) * per];
            let j = (0..all).find(|&j| &self.contexts.data()[j * per..(j + 1) * per] == row).unwrap();
            out.extend(self.targets.data()[j * h..(j + 1) * h].iter().map(|v| v + self.shift));
        }
        let mut shape = self.targets.shape().to_vec();
        shape[0] = n;
        Tensor::new(shape, out)
    }
}

fn probe_cfg() -> AdversarialConfig {
    AdversarialConfig { probe_steps: 300, probe_batch: 128, ..AdversarialConfig::default() }
}

fn held_out() -> WindowBatch {
    common::regime_windows(&ModelConfig::tiny(), 1, 400)
}

#[test]
fn diagnostic_separates_faithful_from_broken_sources() {
    let b = held_out();
    let faithful = Replay { targets: b.targets.clone(), contexts: b.contexts.clone(), innovation: None, shift: 0.0 };
    let broken = Replay { targets: b.targets.clone(), contexts: b.contexts.clone(), innovation: Some(0.95), shift: 3.0 };
    let good = weak_innovation_diagnostic(&faithful, &b, &probe_cfg(), &mut RngStream::new(2)).unwrap();
    let bad = weak_innovation_diagnostic(&broken, &b, &probe_cfg(), &mut RngStream::new(2)).unwrap();
    assert!(good.gap_rec.abs() < 1e-12, "{good:?}");
    assert!(bad.gap_inn > 10.0 * good.gap_inn.abs().max(bad.gap_inn_stderr), "{good:?} vs {bad:?}");
    assert!(bad.gap_rec > 10.0 * bad.gap_rec_stderr, "{bad:?}");
}

#[test]
fn critic_and_generator_share_one_objective() {
    let cfg = ModelConfig::tiny();
    let model = Generator::new(cfg.clone(), 3).unwrap();
    let critics = Critics::new(&model, &AdversarialConfig { clip_bound: 0.5, ..Default::default() }, &mut RngStream::new(4)).unwrap();
    let mut rng = RngStream::new(5);
    let v = rng.uniform_tensor(&[24, 4]);
    let u = rng.uniform_tensor(&[24, 4]);
    let xj = rng.normal_tensor(&[6, 10, 1]);
    let xg = rng.normal_tensor(&[6, 10, 1]);
    let tape = Tape::new();
    let c = |t: &Tensor| tape.constant(t.clone());
    let (obj, gi, gr) = adversarial_objective(&critics, &tape, c(&v), c(&u), c(&xj), c(&xg), 0.7).unwrap();
    assert!((obj.item() - (gi.item() + 0.7 * gr.item())).abs() < 1e-15);
    let (swapped, _, _) = adversarial_objective(&critics, &tape, c(&u), c(&v), c(&xg), c(&xj), 0.7).unwrap();
    assert!((obj.item() + swapped.item()).abs() < 1e-12);

    let critic = Critic::new(3, 8, 0.3, &mut RngStream::new(6)).unwrap();
    let (a, b) = (rng.normal_tensor(&[10, 3]), rng.normal_tensor(&[10, 3]));
    let t2 = Tape::new();
    let g1 = score_gap(&critic, &t2, t2.constant(a.clone()), t2.constant(b.clone())).unwrap().item();
    let g2 = score_gap(&critic, &t2, t2.constant(b), t2.constant(a)).unwrap().item();
    assert!((g1 + g2).abs() < 1e-15);
}

#[test]
fn critic_steps_raise_the_gap_they_maximise() {
    let cfg = ModelConfig::tiny();
    let mut model = Generator::new(cfg.clone(), 7).unwrap();
    let batch = common::regime_windows(&cfg, 8, 32);
    let adv = AdversarialConfig { n_critic: 20, critic_lr: 1e-3, clip_bound: 0.05, ..Default::default() };
    let mut trainer = AdversarialTrainer::new(&model, adv, TrainConfig { lr: 1e-9, ..Default::default() }, TrainMode::Adversarial, 9).unwrap();
    let mut rng = RngStream::new(10);
    let first = trainer.step(&mut model, &batch, &mut rng).unwrap();
    let second = trainer.step(&mut model, &batch, &mut rng).unwrap();
    let obj = |s: &ugf_core::wiae::StepReport| s.gap_inn_before + s.gap_rec_before;
    assert!(obj(&second) > obj(&first), "{first:?} {second:?}");
}

#[test]
fn adversarial_fit_logs_both_gaps_every_step() {
    let cfg = ModelConfig::tiny();
    let b = common::regime_windows(&cfg, 11, 48);
    let tr = b.select(&(0..36).collect::<Vec<_>>()).unwrap();
    let va = b.select(&(36..48).collect::<Vec<_>>()).unwrap();
    for mode in [TrainMode::Adversarial, TrainMode::Combined] {
        let mut m = Generator::new(cfg.clone(), 12).unwrap();
        let train = TrainConfig { max_epochs: 2, batch_size: 12, ..Default::default() };
        let adv = AdversarialConfig { n_critic: 2, ..Default::default() };
        let (report, steps) = fit_adversarial(&mut m, &tr, &va, &train, &adv, mode).unwrap();
        assert_eq!(steps.len(), 2 * 3);
        assert!(steps.iter().all(|s| s.gap_inn_before.is_finite() && s.gap_rec_before.is_finite()));
        assert_eq!(report.epochs.len(), 2);
    }
}

#[test]
fn probe_gap_on_identical_samples_is_small() {
    let mut rng = RngStream::new(13);
    let a = rng.normal_tensor(&[2000, 1]);
    let b = rng.normal_tensor(&[2000, 1]);
    let probe = train_probe(&a, &b, &AdversarialConfig::default(), &mut rng).unwrap();
    assert!(probe.gap.abs() < 0.05, "{}", probe.gap);
    assert!(probe.critic.max_abs_weight() <= 0.01);
}
