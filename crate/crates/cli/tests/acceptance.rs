//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a failure status if any criterion fails. Pass a substring to run a
//! subset, e.g. `cargo test -p ugf-cli --test acceptance -- routing`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fs;
use std::panic;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use serde_json::Value;
use ugf_core::attention::Variant;
use ugf_core::data::{
    make_windows, synth_heteroskedastic, synth_regime_ar, HeteroSpec, MeanSpec, Regime, RegimeArSpec, SigmaSpec,
    Standardizer, WindowBatch,
};
use ugf_core::metrics::{
    format_table1_row, mape, mase, median, normalized_metrics, point_metrics, robust_metrics, MetricsReport,
    MAPE_EPSILON,
};
use ugf_core::model::{sample_predictive, Generator, ModelConfig, Noise, PredictiveOutput};
use ugf_core::numerics::pearson_correlation;
use ugf_core::risk::{apply_conservative_action, quantile, select_action, smooth_towards, Action, ActionSet, RiskPolicy};
use ugf_core::training::{
    calibration_loss, evaluate_loss, fit, gate_smoothness_loss, gradient_check, nll_loss, total_loss, TrainConfig,
    GRADCHECK_TOLERANCE,
};
use ugf_core::wiae::{train_probe, wasserstein1_1d, AdversarialConfig, AdversarialTrainer, TrainMode};
use ugf_core::{ParamStore, RngStream, Tape, Tensor};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn regime_spec(switch_prob: f64) -> RegimeArSpec {
    RegimeArSpec {
        regimes: vec![
            Regime { ar_coef: 0.8, noise_std: 0.3, mean: 0.0 },
            Regime { ar_coef: 0.3, noise_std: 1.5, mean: 2.0 },
        ],
        switch_prob,
        initial: None,
    }
}

fn first_windows(cfg: &ModelConfig, seed: u64, n: usize) -> Result<WindowBatch, String> {
    let t = n + cfg.context_len + cfg.horizon + 5;
    let s = ok(synth_regime_ar(seed, t, &regime_spec(0.05)))?;
    let w = ok(make_windows(&s.series, cfg.context_len, cfg.horizon, 1))?;
    ok(w.select(&(0..n).collect::<Vec<_>>()))
}

/// Chronological 60/20/20 split of all windows.
fn three_way(w: &WindowBatch) -> Result<[WindowBatch; 3], String> {
    let n = w.len();
    let range = |a: usize, b: usize| ok(w.select(&(a..b).collect::<Vec<_>>()));
    Ok([range(0, n * 6 / 10)?, range(n * 6 / 10, n * 8 / 10)?, range(n * 8 / 10, n)?])
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn same_bits(a: &ParamStore, b: &ParamStore) -> bool {
    a.iter().zip(b.iter()).all(|(p, q)| {
        p.id == q.id && p.value.data().iter().zip(q.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    })
}

fn gradient_oracle() -> Outcome {
    let started = Instant::now();
    let cfg = ModelConfig::tiny();
    let train = TrainConfig::default();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let model = ok(Generator::new(cfg.clone(), seed))?;
        let batch = first_windows(&cfg, seed + 100, 3)?;
        let noise = Noise::draw(&cfg, 3, &mut RngStream::new(seed + 200));
        let report = ok(gradient_check(&model, &batch, &train, &noise, 1e-5, None))?;
        for p in &report.params {
            worst = worst.max(p.max_rel_error);
            ensure!(p.max_rel_error < GRADCHECK_TOLERANCE, "seed {seed}: {} has relative error {:e}", p.id, p.max_rel_error);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1} s");
    Ok(format!("20 seeds, worst relative error {worst:.2e}, {secs:.1} s"))
}

fn reduction_identities() -> Outcome {
    let cfg = ModelConfig::tiny();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let batch = first_windows(&cfg, seed + 10, 6)?;
        let noise = Noise::draw(&cfg, batch.len(), &mut RngStream::new(seed + 20));

        let mut a = ok(Generator::new(cfg.clone(), seed))?;
        ok(a.set_attention(0.0, Variant::AdditiveLog))?;
        let mut b = a.clone();
        ok(b.set_attention(0.0, Variant::Vanilla))?;
        let (ta, tb) = (Tape::new(), Tape::new());
        let pa = ok(a.forward_on(&ta, a.store(), &batch.contexts, &noise))?;
        let pb = ok(b.forward_on(&tb, b.store(), &batch.contexts, &noise))?;
        for (x, y) in [(pa.attended, pb.attended), (pa.mu_y, pb.mu_y), (pa.sigma_y, pb.sigma_y)] {
            worst = worst.max(max_abs_diff(x.value().data(), y.value().data()));
        }
        for (x, y) in pa.attention_weights.iter().zip(&pb.attention_weights) {
            worst = worst.max(max_abs_diff(x.value().data(), y.value().data()));
        }
        ensure!(worst <= 1e-12, "seed {seed}: zero-alpha attention differs from vanilla by {worst:e}");

        let mut closed = a.clone();
        ok(closed.set_fixed_gates(Some(0.0), Some(0.0)))?;
        let mut outs = Vec::new();
        for k in 0..3 {
            let noise = Noise::draw(&cfg, batch.len(), &mut RngStream::new(seed * 10 + k));
            let tape = Tape::new();
            let p = ok(closed.forward_on(&tape, closed.store(), &batch.contexts, &noise))?;
            let gap = max_abs_diff(p.z.value().data(), p.enc.mu.value().data());
            ensure!(gap <= 1e-12, "closed gate: z differs from the latent mean by {gap:e}");
            outs.push(p.predictive());
        }
        ensure!(outs[0] == outs[1] && outs[1] == outs[2], "closed gates: forward depends on the noise");
        let zero = Tensor::zeros(&[batch.len()]);
        let samples = ok(sample_predictive(&outs[0], &zero, &mut RngStream::new(seed), 4))?;
        for s in 0..4 {
            let gap = max_abs_diff(samples.index_axis0(s).data(), outs[0].mu_y.data());
            ensure!(gap <= 1e-12, "closed output gate: sample differs from mu_y by {gap:e}");
        }

        let plain = TrainConfig { lambda1: 0.0, lambda2: 0.0, ..TrainConfig::default() };
        let tape = Tape::new();
        let t = ok(total_loss(&tape, &a, a.store(), &batch, &plain, &noise))?.terms;
        ensure!((t.total - t.nll).abs() <= 1e-12, "lambda1 = lambda2 = 0: total {} vs nll {}", t.total, t.nll);
    }
    Ok(format!("5 seeds, largest attention discrepancy {worst:.1e}"))
}

fn closed_form_losses() -> Outcome {
    let tape = Tape::new();
    let v = |x: &[f64]| tape.constant(Tensor::new(vec![x.len(), 1], x.to_vec()).unwrap());
    let y = [0.5, -1.25, 3.0, 2.0];
    let nll = ok(nll_loss(v(&y), v(&y), v(&[1.0; 4])))?.item();
    ensure!(nll == 0.0, "nll(y = mu, sigma = 1) = {nll:e}");

    let sigma = [0.5, 1.0, 1.5, 2.0];
    let err = [1.0, -2.0, 3.0, -4.0];
    let cal = ok(calibration_loss(v(&err), v(&[0.0; 4]), v(&sigma)))?.item();
    ensure!(cal == 0.0, "calibration with |err| proportional to sigma = {cal:e}");
    let flat = ok(calibration_loss(v(&err), v(&[0.0; 4]), v(&[0.7; 4])))?.item();
    ensure!(flat == 1.0, "calibration with constant sigma = {flat}");

    let gates = tape.constant(Tensor::full(&[2, 6], 0.37));
    let smooth = ok(gate_smoothness_loss(gates, None))?.item();
    ensure!(smooth == 0.0, "smoothness of a constant gate = {smooth:e}");
    Ok("nll 0, calibration 0 and 1, smoothness 0".into())
}

struct LoopMetrics {
    values: [f64; 8],
}

/// Straightforward loops, sorting by insertion for the medians.
fn loop_metrics(y: &[f64], yhat: &[f64], insample: &[f64], season: usize) -> LoopMetrics {
    let n = y.len() as f64;
    let (mut se, mut ae, mut yy, mut ay, mut pe) = (Vec::new(), Vec::new(), 0.0, 0.0, 0.0);
    for i in 0..y.len() {
        let e = y[i] - yhat[i];
        se.push(e * e);
        ae.push(e.abs());
        yy += y[i] * y[i];
        ay += y[i].abs();
        pe += e.abs() / y[i].abs();
    }
    let med = |mut v: Vec<f64>| {
        for i in 1..v.len() {
            let mut j = i;
            while j > 0 && v[j - 1] > v[j] {
                v.swap(j - 1, j);
                j -= 1;
            }
        }
        let m = v.len();
        if m % 2 == 1 {
            v[m / 2]
        } else {
            (v[m / 2 - 1] + v[m / 2]) / 2.0
        }
    };
    let mse = se.iter().sum::<f64>() / n;
    let mae = ae.iter().sum::<f64>() / n;
    let mut naive = 0.0;
    for t in season..insample.len() {
        naive += (insample[t] - insample[t - season]).abs();
    }
    naive /= (insample.len() - season) as f64;
    LoopMetrics { values: [mse, mae, mse / (yy / n), mae / (ay / n), med(se), med(ae), pe / n, mae / naive] }
}

fn library_metrics(y: &[f64], yhat: &[f64], insample: &[f64], season: usize) -> Result<[f64; 8], String> {
    let (mse, mae) = ok(point_metrics(y, yhat))?;
    let (nmse, nmae) = ok(normalized_metrics(y, yhat))?;
    let (mse_med, mae_med) = ok(robust_metrics(y, yhat))?;
    Ok([
        mse,
        mae,
        nmse,
        nmae,
        mse_med,
        mae_med,
        ok(mape(y, yhat, MAPE_EPSILON))?,
        ok(mase(y, yhat, insample, season))?,
    ])
}

fn metric_oracle() -> Outcome {
    let mut rng = RngStream::new(4);
    let season = 24;
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = 1 + rng.below(1000);
        // values stay away from zero so that MAPE is defined
        let away = |rng: &mut RngStream| {
            let v = rng.normal() * 3.0;
            v + 0.1 * v.signum()
        };
        let y: Vec<f64> = (0..n).map(|_| away(&mut rng)).collect();
        let yhat: Vec<f64> = y.iter().map(|v| v + rng.normal()).collect();
        let insample: Vec<f64> = (0..season + 1 + rng.below(200)).map(|_| rng.normal() * 2.0).collect();
        let lib = library_metrics(&y, &yhat, &insample, season)?;
        let reference = loop_metrics(&y, &yhat, &insample, season).values;
        for (k, (a, b)) in lib.iter().zip(&reference).enumerate() {
            let err = (a - b).abs() / b.abs().max(1.0);
            worst = worst.max(err);
            ensure!(err <= 1e-12, "case {case} (n = {n}) column {k}: {a} vs {b}");
        }

        // Power-of-two factors commute with rounding, so the scaled metrics
        // must match bit for bit.
        let c = [0.25, -2.0, 8.0, -1024.0][case % 4];
        let scale = |v: &[f64]| v.iter().map(|x| c * x).collect::<Vec<_>>();
        let scaled = library_metrics(&scale(&y), &scale(&yhat), &scale(&insample), season)?;
        ensure!(scaled[0] == lib[0] * c * c, "case {case}: mse does not scale by c^2");
        ensure!(scaled[1] == lib[1] * c.abs(), "case {case}: mae does not scale by |c|");
        for k in [2, 3, 6, 7] {
            ensure!(scaled[k] == lib[k], "case {case}: column {k} changed under scaling by {c}");
        }
    }
    Ok(format!("100 instances, worst relative discrepancy {worst:.1e}; scale laws exact"))
}

fn output(mu: Vec<f64>, sigma: Vec<f64>, g: f64) -> PredictiveOutput {
    let n = mu.len();
    PredictiveOutput {
        mu_y: Tensor::new(vec![n, 1, 1], mu).unwrap(),
        sigma_y: Tensor::new(vec![n, 1, 1], sigma).unwrap(),
        gate_out: Tensor::full(&[n], g),
        samples: None,
    }
}

fn interval_coverage(samples: &Tensor, truth: &[f64]) -> Result<f64, String> {
    let k = samples.shape()[0];
    let n = truth.len();
    let mut hits = 0;
    for (j, y) in truth.iter().enumerate() {
        let col: Vec<f64> = (0..k).map(|i| samples.data()[i * n + j]).collect();
        let (lo, hi) = (ok(quantile(&col, 0.05))?, ok(quantile(&col, 0.95))?);
        if (lo..=hi).contains(y) {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

fn sampling_law() -> Outcome {
    let out = output(vec![0.5, -2.0, 10.0, 0.0], vec![0.3, 1.0, 4.0, 0.05], 1.0);
    let s = 100_000;
    let samples = ok(sample_predictive(&out, &out.gate_out, &mut RngStream::new(5), s))?;
    let mut worst: f64 = 0.0;
    for j in 0..4 {
        let col: Vec<f64> = (0..s).map(|i| samples.data()[i * 4 + j]).collect();
        let m = col.iter().sum::<f64>() / s as f64;
        let sd = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / s as f64).sqrt();
        let rel = (sd / out.sigma_y.data()[j] - 1.0).abs();
        worst = worst.max(rel);
        ensure!(rel < 0.02, "coordinate {j}: sample std {sd} vs sigma {}", out.sigma_y.data()[j]);
    }

    let n = 10_000;
    let mut rng = RngStream::new(6);
    // every fifth point is a shock with three times the predicted spread
    let truth: Vec<f64> = (0..n).map(|i| rng.normal() * if i % 5 == 0 { 3.0 } else { 1.0 }).collect();
    let base = output(vec![0.0; n], vec![1.0; n], 1.0);
    let last = Tensor::zeros(&[n, 1]);
    let mut cov = Vec::new();
    for kappa in [1.0, 2.0] {
        let policy = RiskPolicy {
            kappa,
            s_std: 200,
            actions: ActionSet { inflate: true, smooth: false, resample: false },
            ..RiskPolicy::default()
        };
        let inflated = ok(apply_conservative_action(&base, &last, &policy, &mut RngStream::new(7)))?;
        cov.push(interval_coverage(inflated.samples.as_ref().unwrap(), &truth)?);
    }
    ensure!(cov[1] >= cov[0], "coverage fell from {} to {} under inflation", cov[0], cov[1]);
    Ok(format!("worst std deviation {:.2}%; 90% coverage {:.3} (kappa 1) <= {:.3} (kappa 2)", worst * 100.0, cov[0], cov[1]))
}

fn hetero_corr(lambda1: f64, seed: u64) -> Result<f64, String> {
    let spec = HeteroSpec { mean: MeanSpec::Zero, sigma: SigmaSpec::Square { low: 0.1, high: 2.0, period: 16 } };
    let cfg = ModelConfig { context_len: 16, horizon: 1, ..ModelConfig::tiny() };
    let s = ok(synth_heteroskedastic(100 + seed, 1000, &spec))?;
    let w = ok(make_windows(&s.series, cfg.context_len, cfg.horizon, 1))?;
    let [train, val, test] = three_way(&w)?;
    let mut model = ok(Generator::new(cfg, seed))?;
    let tc = TrainConfig { lambda1, lr: 1e-2, max_epochs: 40, patience: 20, seed, ..TrainConfig::default() };
    ok(fit(&mut model, &train, &val, &tc))?;
    let p = ok(model.forward(&test.contexts, 1.0, &mut RngStream::new(9)))?.output;
    let err: Vec<f64> = test.targets.data().iter().zip(p.mu_y.data()).map(|(y, m)| (y - m).abs()).collect();
    ok(pearson_correlation(&err, p.sigma_y.data()))
}

fn calibration_training() -> Outcome {
    let started = Instant::now();
    let mut med = Vec::new();
    let mut lines = Vec::new();
    for lambda1 in [0.1, 0.0] {
        let corrs = (0..5).map(|seed| hetero_corr(lambda1, seed)).collect::<Result<Vec<_>, _>>()?;
        lines.push(format!("lambda1 {lambda1}: {:?}", corrs.iter().map(|c| (c * 1000.0).round() / 1000.0).collect::<Vec<_>>()));
        med.push(ok(median(&corrs))?);
    }
    let secs = started.elapsed().as_secs_f64();
    let detail = format!("median corr {:.3} vs ablation {:.3} ({}), {secs:.0} s", med[0], med[1], lines.join("; "));
    ensure!(med[0] >= 0.5, "{detail}");
    ensure!(med[0] > med[1], "{detail}");
    ensure!(secs < 300.0, "{detail}");
    Ok(detail)
}

/// Held-out NLL and median squared error of one configuration.
fn regime_run(gated: bool, seed: u64) -> Result<(f64, f64), String> {
    let len = 1500;
    let cfg = ModelConfig::tiny();
    let s = ok(synth_regime_ar(200 + seed, len, &regime_spec(0.05)))?;
    let st = ok(Standardizer::fit(ok(s.series.slice(0, len * 6 / 10))?.values()))?;
    let series = ok(s.series.with_values(ok(st.apply(s.series.values()))?))?;
    let w = ok(make_windows(&series, cfg.context_len, cfg.horizon, 1))?;
    let [train, val, test] = three_way(&w)?;
    let mut model = ok(Generator::new(cfg, seed))?;
    let mut tc = TrainConfig { lr: 1e-2, max_epochs: 80, seed, ..TrainConfig::default() };
    if !gated {
        ok(model.set_fixed_gates(Some(1.0), Some(1.0)))?;
        ok(model.set_attention(0.0, Variant::AdditiveLog))?;
        tc.lambda1 = 0.0;
        tc.lambda2 = 0.0;
    }
    ok(fit(&mut model, &train, &val, &tc))?;
    let plain = TrainConfig { lambda1: 0.0, lambda2: 0.0, ..tc };
    let nll = ok(evaluate_loss(&model, &test, &plain, 77))?.0.nll;
    let p = ok(model.forward(&test.contexts, 1.0, &mut RngStream::new(9)))?.output;
    let se: Vec<f64> = test.targets.data().iter().zip(p.mu_y.data()).map(|(y, m)| (y - m).powi(2)).collect();
    Ok((nll, ok(median(&se))?))
}

fn gating_benefit() -> Outcome {
    let started = Instant::now();
    let mut med = Vec::new();
    for gated in [true, false] {
        let runs = (0..5).map(|seed| regime_run(gated, seed)).collect::<Result<Vec<_>, _>>()?;
        let nll: Vec<f64> = runs.iter().map(|r| r.0).collect();
        let mse: Vec<f64> = runs.iter().map(|r| r.1).collect();
        med.push((ok(median(&nll))?, ok(median(&mse))?));
    }
    let secs = started.elapsed().as_secs_f64();
    let detail = format!(
        "median NLL {:.4} vs {:.4}, median mSE {:.4} vs {:.4} (gated vs ungated), {secs:.0} s",
        med[0].0, med[1].0, med[0].1, med[1].1
    );
    ensure!(med[0].0 <= med[1].0 && med[0].1 <= med[1].1, "{detail}");
    ensure!(secs < 900.0, "{detail}");
    Ok(detail)
}

fn probe_calibration() -> Outcome {
    let cfg = AdversarialConfig::default();
    let mut rng = RngStream::new(8);
    let a = rng.normal_tensor(&[2000, 1]);
    let b = rng.normal_tensor(&[2000, 1]);
    let same = ok(train_probe(&a, &b, &cfg, &mut rng))?;
    ensure!(same.gap.abs() < 0.05, "identical distributions: gap {}", same.gap);
    ensure!(same.critic.max_abs_weight() <= cfg.clip_bound, "probe weights exceed the clip bound");

    let shifted = ok(Tensor::new(vec![2000, 1], b.data().iter().map(|x| x + 3.0).collect()))?;
    let apart = ok(train_probe(&shifted, &a, &cfg, &mut rng))?;
    let range = apart.critic.attainable_lipschitz() * ok(wasserstein1_1d(a.data(), shifted.data()))?;
    ensure!(apart.gap > 0.5 * range, "N(0,1) vs N(3,1): gap {} of attainable {range}", apart.gap);

    let model_cfg = ModelConfig::tiny();
    let batch = first_windows(&model_cfg, 3, 16)?;
    let run = || -> Result<_, String> {
        let mut model = ok(Generator::new(model_cfg.clone(), 5))?;
        let adv = AdversarialConfig { n_critic: 3, critic_hidden: 8, ..AdversarialConfig::default() };
        let mut trainer = ok(AdversarialTrainer::new(&model, adv, TrainConfig::default(), TrainMode::Combined, 6))?;
        let mut rng = RngStream::new(7);
        let steps = (0..3).map(|_| ok(trainer.step(&mut model, &batch, &mut rng))).collect::<Result<Vec<_>, _>>()?;
        Ok((steps, model))
    };
    let (s1, m1) = run()?;
    let (s2, m2) = run()?;
    let reports_equal = s1.iter().zip(&s2).all(|(x, y)| serde_json::to_string(x).unwrap() == serde_json::to_string(y).unwrap());
    ensure!(reports_equal && same_bits(m1.store(), m2.store()), "adversarial steps are not reproducible");
    Ok(format!(
        "identical gap {:.1e}; shifted gap {:.2e} = {:.2} of attainable {:.2e}; 3 steps bit-exact",
        same.gap,
        apart.gap,
        apart.gap / range,
        range
    ))
}

fn routing_contract() -> Outcome {
    for tau in [0.0, 0.3, 1.0, 17.5] {
        ensure!(select_action(tau, tau) == Action::Standard, "r = tau = {tau} is not standard");
        ensure!(select_action(tau + 1e-9, tau) == Action::Robust, "r just above tau = {tau} is not robust");
    }
    let sigma = vec![0.1, 0.7, 1.3, 2.9];
    let base = output(vec![0.0; 4], sigma.clone(), 1.0);
    let last = Tensor::zeros(&[4, 1]);
    let policy = RiskPolicy { kappa: 1.7, s_std: 1, actions: ActionSet { inflate: true, smooth: false, resample: false }, ..RiskPolicy::default() };
    let inflated = ok(apply_conservative_action(&base, &last, &policy, &mut RngStream::new(1)))?;
    for (s, t) in inflated.sigma_y.data().iter().zip(&sigma) {
        ensure!(*s == 1.7 * t, "inflated sigma {s} vs {}", 1.7 * t);
    }
    let smoothed = smooth_towards(&[4.0, 8.0], &[0.0], 0.5);
    ensure!(smoothed == vec![2.0, 5.0], "smoothing [4, 8] gave {smoothed:?}");
    Ok("boundary standard, sigma' = kappa sigma, smoothing [4, 8] -> [2, 5]".into())
}

fn format_fixture() -> Outcome {
    let report = MetricsReport {
        split: "test".into(),
        horizon: 24,
        n_points: 24,
        mse: 0.1281,
        mae: 0.2550,
        nmse: 0.0119,
        nmae: 0.0280,
        mse_median: 0.1748,
        mae_median: 0.2145,
        mape: Some(0.2515),
        mase: Some(0.0220),
        shock: None,
    };
    let row = format_table1_row(&report);
    let expected = "0.1281, 0.2550, 0.0119, 0.0280, 0.1748, 0.2145, 0.2515, 0.0220";
    ensure!(row == expected, "got {row:?}");
    Ok(row)
}

const REPRO_CONFIG: &str = r#"
seed = 11
mode = "combined"

[data.source]
kind = "regime_ar"
length = 300
switch_prob = 0.05
regimes = [
  { ar_coef = 0.8, noise_std = 0.3, mean = 0.0 },
  { ar_coef = 0.3, noise_std = 1.5, mean = 2.0 },
]

[model]
context_len = 8
horizon = 2
dim = 1
d_hidden = 6
d_z = 4
kernel_sizes = [3]
model_unc_passes = 4

[train]
max_epochs = 3

[adversarial]
n_critic = 2
critic_hidden = 8

[risk]
s_std = 50
s_rob = 100

[forecast]
max_windows = 10
"#;

fn strip_wall_time(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("wall_time_secs");
            map.values_mut().for_each(strip_wall_time);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_wall_time),
        _ => {}
    }
}

/// Every file in `dir` with JSON documents normalised.
fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in ok(fs::read_dir(dir))? {
        let path = ok(entry)?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let bytes = ok(fs::read(&path))?;
        let bytes = if name.ends_with(".json") {
            let mut v: Value = ok(serde_json::from_slice(&bytes))?;
            strip_wall_time(&mut v);
            ok(serde_json::to_vec(&v))?
        } else {
            bytes
        };
        files.insert(name, bytes);
    }
    Ok(files)
}

fn run_all_commands(dir: &Path) -> Result<Vec<String>, String> {
    ok(fs::write(dir.join("run.toml"), REPRO_CONFIG))?;
    let labels = dir.join("labels.csv");
    let steps: [&[&str]; 5] = [
        &["simulate"],
        &["train"],
        &["forecast"],
        &["evaluate", "--labels", labels.to_str().unwrap()],
        &["gradcheck"],
    ];
    let mut stdout = Vec::new();
    for args in steps {
        let out = ok(Command::new(env!("CARGO_BIN_EXE_ugf"))
            .arg("--config")
            .arg(dir.join("run.toml"))
            .arg("--out")
            .arg(dir)
            .args(args)
            .output())?;
        ensure!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        stdout.push(String::from_utf8_lossy(&out.stdout).replace(dir.to_str().unwrap(), "<out>"));
    }
    Ok(stdout)
}

fn reproducibility() -> Outcome {
    let (a, b) = (ok(tempfile::tempdir())?, ok(tempfile::tempdir())?);
    let out_a = run_all_commands(a.path())?;
    let out_b = run_all_commands(b.path())?;
    ensure!(out_a == out_b, "console output differs:\n{out_a:?}\n{out_b:?}");
    let (sa, sb) = (snapshot(a.path())?, snapshot(b.path())?);
    ensure!(sa.keys().eq(sb.keys()), "file sets differ: {:?} vs {:?}", sa.keys(), sb.keys());
    for (name, bytes) in &sa {
        ensure!(sb[name] == *bytes, "{name} differs between runs");
    }
    Ok(format!("5 commands, {} files identical", sa.len()))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("gradient oracle", gradient_oracle),
        ("reduction identities", reduction_identities),
        ("closed-form losses", closed_form_losses),
        ("metric oracle", metric_oracle),
        ("sampling law", sampling_law),
        ("calibration training", calibration_training),
        ("gating benefit", gating_benefit),
        ("probe calibration", probe_calibration),
        ("routing contract", routing_contract),
        ("format fixture", format_fixture),
        ("reproducibility", reproducibility),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name:<22} PASS  {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name:<22} FAIL  {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
