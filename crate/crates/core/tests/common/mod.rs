#![allow(dead_code)]

use ugf_core::data::{make_windows, synth_heteroskedastic, synth_regime_ar, HeteroSpec, MeanSpec, Regime, RegimeArSpec, SigmaSpec, WindowBatch};
use ugf_core::model::ModelConfig;

pub fn regime_spec() -> RegimeArSpec {
    RegimeArSpec {
        regimes: vec![
            Regime { ar_coef: 0.8, noise_std: 0.3, mean: 0.0 },
            Regime { ar_coef: 0.3, noise_std: 1.5, mean: 2.0 },
        ],
        switch_prob: 0.05,
        initial: None,
    }
}

/// The first `n` windows of a regime-switching series shaped for `cfg`.
pub fn regime_windows(cfg: &ModelConfig, seed: u64, n: usize) -> WindowBatch {
    let t = n + cfg.context_len + cfg.horizon + 5;
    let s = synth_regime_ar(seed, t, &regime_spec()).unwrap();
    let w = make_windows(&s.series, cfg.context_len, cfg.horizon, 1).unwrap();
    w.select(&(0..n).collect::<Vec<_>>()).unwrap()
}

pub fn hetero_windows(cfg: &ModelConfig, seed: u64, t: usize) -> WindowBatch {
    let spec = HeteroSpec {
        mean: MeanSpec::Sinusoid { amplitude: 1.0, period: 8.0 },
        sigma: SigmaSpec::Square { low: 0.1, high: 0.8, period: 16 },
    };
    let s = synth_heteroskedastic(seed, t, &spec).unwrap();
    make_windows(&s.series, cfg.context_len, cfg.horizon, 1).unwrap()
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: lengths differ");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "{what}[{i}]: {x} vs {y}");
    }
}
