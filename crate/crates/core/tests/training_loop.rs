mod common;

use ugf_core::data::WindowBatch;
use ugf_core::model::{Generator, ModelConfig, Noise};
use ugf_core::training::{evaluate_loss, fit, nll_loss, TrainConfig, Trainer};
use ugf_core::{RngStream, Tape};

fn split(batch: &WindowBatch) -> (WindowBatch, WindowBatch) {
    let n = batch.len();
    let cut = n * 3 / 4;
    (
        batch.select(&(0..cut).collect::<Vec<_>>()).unwrap(),
        batch.select(&(cut..n).collect::<Vec<_>>()).unwrap(),
    )
}

#[test]
fn first_step_matches_reference_update() {
    let cfg = ModelConfig::tiny();
    let mut model = Generator::new(cfg.clone(), 1).unwrap();
    let batch = common::regime_windows(&cfg, 2, 8);
    let train = TrainConfig { lambda1: 0.0, lambda2: 0.0, lr: 1e-2, ..TrainConfig::default() };

    // NLL gradient built directly from the forward pass
    let noise = Noise::draw(&cfg, batch.len(), &mut RngStream::new(77));
    let mut reference = model.store().clone();
    {
        let tape = Tape::new();
        let pass = model.forward_on(&tape, &reference, &batch.contexts, &noise).unwrap();
        let y = tape.constant(batch.targets.clone());
        let loss = nll_loss(y, pass.mu_y, pass.sigma_y).unwrap();
        reference.zero_grad();
        tape.backward_into(loss, &mut reference).unwrap();
    }
    for p in reference.iter_mut() {
        let g = p.grad.clone();
        for (w, gi) in p.value.data_mut().iter_mut().zip(g.data()) {
            // m_hat = g, v_hat = g^2 after one step
            *w -= train.lr * gi / (gi.abs() + train.eps);
        }
    }

    let mut trainer = Trainer::new(&model, train).unwrap();
    trainer.step(&mut model, &batch, &mut RngStream::new(77)).unwrap();
    for (a, b) in model.store().iter().zip(reference.iter()) {
        common::assert_close(a.value.data(), b.value.data(), 1e-12, &a.id);
    }
}

#[test]
fn fit_is_deterministic() {
    let cfg = ModelConfig::tiny();
    let (tr, va) = split(&common::regime_windows(&cfg, 3, 60));
    let train = TrainConfig { max_epochs: 3, batch_size: 8, seed: 5, ..TrainConfig::default() };
    let run = || {
        let mut m = Generator::new(cfg.clone(), 4).unwrap();
        let mut r = fit(&mut m, &tr, &va, &train).unwrap();
        r.wall_time_secs = 0.0;
        (m, r)
    };
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(r1, r2);
    for (a, b) in m1.store().iter().zip(m2.store().iter()) {
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let cfg = ModelConfig::tiny();
    let (tr, va) = split(&common::regime_windows(&cfg, 6, 20));
    let mut m = Generator::new(cfg.clone(), 7).unwrap();
    let before = m.store().clone();
    let r = fit(&mut m, &tr, &va, &TrainConfig { max_epochs: 0, ..TrainConfig::default() }).unwrap();
    assert!(r.epochs.is_empty());
    assert_eq!(r.best_epoch, None);
    assert_eq!(r.initial_train, r.final_train);
    for (a, b) in m.store().iter().zip(before.iter()) {
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn training_reduces_loss_on_heteroskedastic_data() {
    let cfg = ModelConfig::tiny();
    let (tr, va) = split(&common::hetero_windows(&cfg, 8, 400));
    let mut m = Generator::new(cfg.clone(), 9).unwrap();
    let train = TrainConfig { max_epochs: 15, lr: 5e-3, batch_size: 16, ..TrainConfig::default() };
    let r = fit(&mut m, &tr, &va, &train).unwrap();
    assert!(r.final_train.total < r.initial_train.total, "{} -> {}", r.initial_train.total, r.final_train.total);
    assert!(r.best_val_total.unwrap() < r.initial_val.total);
}

#[test]
fn early_stopping_restores_the_best_epoch() {
    let cfg = ModelConfig::tiny();
    let (tr, va) = split(&common::regime_windows(&cfg, 10, 80));
    let mut m = Generator::new(cfg.clone(), 11).unwrap();
    // a large step size makes validation loss bounce
    let train = TrainConfig { max_epochs: 40, patience: 2, lr: 5e-2, batch_size: 8, seed: 3, ..TrainConfig::default() };
    let r = fit(&mut m, &tr, &va, &train).unwrap();
    assert!(r.epochs.len() <= train.max_epochs);
    let best = r.best_val_total.unwrap();
    let min = r.epochs.iter().map(|e| e.val.total).fold(f64::INFINITY, f64::min);
    assert!(best <= min + ugf_core::training::MIN_IMPROVEMENT);
    let best_epoch = r.best_epoch.unwrap();
    assert_eq!(r.epochs.iter().find(|e| e.epoch == best_epoch).unwrap().val.total, best);
    if r.stopped_early {
        assert!(r.epochs.iter().rev().take(train.patience).all(|e| !e.improved));
    }
    let restored = evaluate_loss(&m, &va, &train, train.seed ^ 0x5eed_5eed_5eed_5eed).unwrap().0.total;
    assert_eq!(restored, best);
}

#[test]
fn resumed_training_continues_epoch_numbering() {
    let cfg = ModelConfig::tiny();
    let (tr, va) = split(&common::regime_windows(&cfg, 12, 40));
    let mut m = Generator::new(cfg.clone(), 13).unwrap();
    let train = TrainConfig { max_epochs: 2, patience: 5, ..TrainConfig::default() };
    fit(&mut m, &tr, &va, &train).unwrap();
    assert_eq!(m.epochs_trained(), 2);
    let r = fit(&mut m, &tr, &va, &train).unwrap();
    assert_eq!(r.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(), [3, 4]);
    assert_eq!(m.epochs_trained(), 4);
}
