mod common;

use ugf_core::attention::Variant;
use ugf_core::model::{Generator, LatentScale, ModelConfig, Noise};
use ugf_core::training::{gradient_check, total_loss, AdaptiveRegularization, TrainConfig};
use ugf_core::{RngStream, Tape};

const STEP: f64 = 1e-5;

fn check(cfg: ModelConfig, train: TrainConfig, seed: u64) {
    let model = Generator::new(cfg.clone(), seed).unwrap();
    let batch = common::regime_windows(&cfg, seed + 100, 3);
    let noise = Noise::draw(&cfg, 3, &mut RngStream::new(seed + 200));
    let report = gradient_check(&model, &batch, &train, &noise, STEP, None).unwrap();
    for p in &report.params {
        assert!(p.passed, "seed {seed}: {} max relative error {:e}", p.id, p.max_rel_error);
    }
}

#[test]
fn tiny_model_matches_finite_differences() {
    for seed in 0..5 {
        check(ModelConfig::tiny(), TrainConfig::default(), seed);
    }
}

#[test]
fn every_attention_variant_and_regulariser_passes() {
    for (i, variant) in [Variant::AdditiveLog, Variant::Multiplicative, Variant::Vanilla].into_iter().enumerate() {
        let mut cfg = ModelConfig::tiny();
        cfg.attention.variant = variant;
        cfg.attention.n_heads = 2;
        cfg.attention.d_head = Some(2);
        check(cfg, TrainConfig::default(), 10 + i as u64);
    }
    for (i, adaptive) in [AdaptiveRegularization::GateSmoothness, AdaptiveRegularization::WeightDecay].into_iter().enumerate() {
        let train = TrainConfig { adaptive, weight_decay: 1e-2, ..TrainConfig::default() };
        check(ModelConfig::tiny(), train, 20 + i as u64);
    }
}

#[test]
fn alternative_heads_pass() {
    let mut cfg = ModelConfig::tiny();
    cfg.tie_output_gate = false;
    cfg.latent_scale = LatentScale::Softplus;
    cfg.kernel_sizes = vec![3, 2];
    cfg.gate.hidden = 5;
    check(cfg, TrainConfig::default(), 30);
}

#[test]
fn corrupted_gradient_is_reported_by_name() {
    let cfg = ModelConfig::tiny();
    let model = Generator::new(cfg.clone(), 4).unwrap();
    let batch = common::regime_windows(&cfg, 5, 3);
    let noise = Noise::draw(&cfg, 3, &mut RngStream::new(6));
    let report = gradient_check(&model, &batch, &TrainConfig::default(), &noise, STEP, Some("dec.mu.w")).unwrap();
    assert!(!report.passed);
    let failed: Vec<&str> = report.params.iter().filter(|p| !p.passed).map(|p| p.id.as_str()).collect();
    assert_eq!(failed, ["dec.mu.w"]);
    let mut ids: Vec<&str> = report.params.iter().map(|p| p.id.as_str()).collect();
    let n = ids.len();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), n);
    assert_eq!(n, model.store().len());
}

#[test]
fn every_parameter_receives_gradient() {
    let cfg = ModelConfig::tiny();
    let mut model = Generator::new(cfg.clone(), 8).unwrap();
    let batch = common::regime_windows(&cfg, 9, 6);
    let noise = Noise::draw(&cfg, 6, &mut RngStream::new(10));
    let tape = Tape::new();
    let obj = total_loss(&tape, &model, model.store(), &batch, &TrainConfig::default(), &noise).unwrap();
    let total = obj.total;
    model.store_mut().zero_grad();
    tape.backward_into(total, model.store_mut()).unwrap();
    for p in model.store().iter() {
        assert!(p.grad.all_finite(), "{}", p.id);
        assert!(p.grad.max_abs() > 0.0, "{} has an identically zero gradient", p.id);
    }
}
