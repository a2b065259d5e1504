use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use ugf_core::data::{load_csv_series, write_csv_series, Standardizer, TimeSeries, WindowBatch};
use ugf_core::metrics::{compute_report, format_table1_row, shock_slice, MetricsReport, ReportInputs, TABLE1_HEADER};
use ugf_core::model::{point_forecast, Checkpoint, Generator, Noise};
use ugf_core::risk::{calibrate_tau, risk_score, route, Action, RiskPolicy};
use ugf_core::training::{self, GradCheckReport, TrainReport};
use ugf_core::wiae::{fit_adversarial, StepReport, TrainMode};
use ugf_core::{Error, RngStream, Tensor};

use crate::config::{DataSource, PointForecast, RunConfig};
use crate::dataset::{self, Dataset};
use crate::output::{ensure_dir, num, read_envelope, write_csv, write_json, Envelope};

pub const SERIES_FILE: &str = "series.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const SIMULATE_MANIFEST: &str = "simulate.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const FORECAST_FILE: &str = "forecast.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const TABLE_FILE: &str = "table.txt";
pub const ERRORS_FILE: &str = "errors.csv";
pub const CALIBRATION_FILE: &str = "calibration.csv";
pub const GATE_FILE: &str = "gate.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.json";

const EXTRA_STANDARDIZER: &str = "standardizer";
const EXTRA_TAU: &str = "tau";
const EXTRA_COLUMNS: &str = "columns";

pub fn default_checkpoint(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join(CHECKPOINT_FILE)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateOutput {
    pub length: usize,
    pub series_file: String,
    pub labels_file: String,
    pub sidecar_columns: Vec<String>,
}

/// Writes the synthetic series, its ground-truth sidecar and a manifest.
pub fn simulate(cfg: &RunConfig) -> Result<SimulateOutput> {
    if matches!(cfg.data.source, DataSource::Csv { .. }) {
        return Err(Error::Config("simulate needs a synthetic data source (regime_ar or heteroskedastic)".into()).into());
    }
    let loaded = dataset::load_source(&cfg.data.source, cfg.seed)?;
    ensure_dir(&cfg.out_dir)?;
    let series = &loaded.series;
    write_csv_series(&cfg.out_dir.join(SERIES_FILE), series, &[])?;
    let (column, values): (&str, Vec<f64>) = match (&loaded.labels, &loaded.sigma) {
        (Some(l), _) => ("regime", l.iter().map(|&v| v as f64).collect()),
        (None, Some(s)) => ("sigma", s.clone()),
        (None, None) => unreachable!("synthetic sources carry ground truth"),
    };
    let sidecar = TimeSeries::new(
        series.timestamps().to_vec(),
        Tensor::new(vec![series.len(), 1], values)?,
        vec![column.to_string()],
    )?;
    write_csv_series(&cfg.out_dir.join(LABELS_FILE), &sidecar, &[])?;
    let out = SimulateOutput {
        length: series.len(),
        series_file: SERIES_FILE.into(),
        labels_file: LABELS_FILE.into(),
        sidecar_columns: vec![column.to_string()],
    };
    write_json(&cfg.out_dir.join(SIMULATE_MANIFEST), &Envelope::new("simulate", cfg, out.clone()))?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub mode: TrainMode,
    pub tau: f64,
    pub train_windows: usize,
    pub val_windows: usize,
    pub report: TrainReport,
    /// Per-step critic gaps; empty in likelihood mode.
    pub adversarial_steps: Vec<StepReport>,
}

fn extra<T: for<'de> Deserialize<'de>>(ck: &Checkpoint, key: &str) -> Result<T> {
    let v = ck.extras.get(key).ok_or_else(|| Error::Checkpoint(format!("missing {key:?} entry")))?;
    Ok(serde_json::from_value(v.clone()).map_err(|e| Error::Checkpoint(format!("{key}: {e}")))?)
}

/// Risk scores of every window in `batch` under `model`.
fn risk_scores(model: &Generator, batch: &WindowBatch, cfg: &RunConfig, seed: u64) -> Result<Vec<f64>> {
    let out = model.forward(&batch.contexts, cfg.train.lambda0, &mut RngStream::new(seed))?.output;
    (0..batch.len())
        .map(|i| Ok(risk_score(&out.sigma_y.index_axis0(i), cfg.risk.rho)?))
        .collect()
}

/// Fits the model (fresh, or resumed from `checkpoint`), calibrates the risk
/// threshold on validation windows and writes checkpoint and report.
pub fn train(cfg: &RunConfig, checkpoint: &Path, resume: bool) -> Result<TrainOutput> {
    let loaded = dataset::load_source(&cfg.data.source, cfg.seed)?;
    let (mut model, fitted) = if resume {
        let ck = Checkpoint::load(checkpoint).with_context(|| format!("resuming from {}", checkpoint.display()))?;
        if ck.config != cfg.model {
            log::warn!("resuming with the checkpoint's model configuration; [model] in the config is ignored");
        }
        let std: Standardizer = extra(&ck, EXTRA_STANDARDIZER)?;
        (Generator::from_checkpoint(&ck)?, Some(std))
    } else {
        (Generator::new(cfg.model.clone(), cfg.model_seed())?, None)
    };
    let mc = model.config().clone();
    if loaded.series.dim() != mc.dim {
        return Err(Error::Shape(format!("series has D = {}, the model expects D = {}", loaded.series.dim(), mc.dim)).into());
    }
    let ds = dataset::build(&loaded.series, &cfg.data, mc.context_len, mc.horizon, fitted.as_ref())?;
    log::info!("training on {} windows, validating on {}", ds.train.len(), ds.val.len());
    let (report, steps) = fit_adversarial(&mut model, &ds.train, &ds.val, &cfg.train, &cfg.adversarial, cfg.mode)
        .context("training aborted")?;
    let scores = risk_scores(&model, &ds.val, cfg, cfg.sampling_seed())?;
    let tau = calibrate_tau(&scores, &cfg.risk)?;

    let mut ck = model.to_checkpoint();
    ck.extras.insert(EXTRA_STANDARDIZER.into(), serde_json::to_value(&ds.standardizer)?);
    ck.extras.insert(EXTRA_TAU.into(), serde_json::json!(tau));
    ck.extras.insert(EXTRA_COLUMNS.into(), serde_json::to_value(ds.raw.columns())?);
    ck.extras.insert("config_hash".into(), serde_json::json!(cfg.hash()));
    ck.extras.insert("seed".into(), serde_json::json!(cfg.seed));
    if let Some(dir) = checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    ck.save(checkpoint)?;

    let out = TrainOutput {
        mode: cfg.mode,
        tau,
        train_windows: ds.train.len(),
        val_windows: ds.val.len(),
        report,
        adversarial_steps: steps,
    };
    ensure_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join(TRAIN_REPORT_FILE), &Envelope::new("train", cfg, out.clone()))?;
    Ok(out)
}

/// One routed forecast, in the units of the input series. Arrays are
/// row-major `[H, D]`; `samples` is `[S, H, D]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowForecast {
    pub origin_timestamp: i64,
    pub target_timestamps: Option<Vec<i64>>,
    pub gate_out: f64,
    pub risk: f64,
    pub action: Action,
    pub mu_y: Vec<f64>,
    pub sigma_y: Vec<f64>,
    /// Mean after the conservative action, if any.
    pub mu_tilde: Vec<f64>,
    /// Scale after the conservative action, if any.
    pub sigma_prime: Vec<f64>,
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub n_samples: usize,
    pub samples: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastOutput {
    pub horizon: usize,
    pub dim: usize,
    pub columns: Vec<String>,
    pub tau: f64,
    pub policy: RiskPolicy,
    pub windows: Vec<WindowForecast>,
}

struct Origin {
    context: Tensor,
    origin_timestamp: i64,
    target_timestamps: Option<Vec<i64>>,
}

fn origins_from_input(path: &Path, columns: &[String], l: usize, d: usize, std: &Standardizer) -> Result<Vec<Origin>> {
    let load = load_csv_series(path, columns, "timestamp").with_context(|| format!("loading {}", path.display()))?;
    let s = load.series;
    if s.len() != l || s.dim() != d {
        return Err(Error::Shape(format!(
            "input window has {} rows of width {}; the model expects L = {l}, D = {d}",
            s.len(),
            s.dim()
        ))
        .into());
    }
    let context = std.apply(&s.values().reshape(&[1, l, d])?)?;
    Ok(vec![Origin { context, origin_timestamp: s.timestamps()[l - 1], target_timestamps: None }])
}

fn origins_from_split(ds: &Dataset, batch: &WindowBatch, limit: Option<usize>) -> Result<Vec<Origin>> {
    let n = limit.map_or(batch.len(), |m| m.min(batch.len()));
    let ts = ds.raw.timestamps();
    let h = batch.horizon();
    (0..n)
        .map(|i| {
            let o = batch.origin_indices[i];
            let one = batch.select(&[i])?;
            Ok(Origin {
                context: one.contexts,
                origin_timestamp: ts[o],
                target_timestamps: Some(ts[o + 1..=o + h].to_vec()),
            })
        })
        .collect()
}

/// Forecasts either the single window in `input` or the configured split.
pub fn forecast(cfg: &RunConfig, checkpoint: &Path, input: Option<&Path>) -> Result<ForecastOutput> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let mut model = Generator::from_checkpoint(&ck)?;
    let f = &cfg.forecast;
    if f.fixed_gate.is_some() || f.fixed_output_gate.is_some() {
        let c = model.config();
        let gate = f.fixed_gate.or(c.fixed_gate);
        let out_gate = f.fixed_output_gate.or(c.fixed_output_gate);
        model.set_fixed_gates(gate, out_gate)?;
    }
    let std: Standardizer = extra(&ck, EXTRA_STANDARDIZER)?;
    let columns: Vec<String> = extra(&ck, EXTRA_COLUMNS)?;
    let stored_tau: f64 = extra(&ck, EXTRA_TAU)?;
    let policy = RiskPolicy { tau: f.tau.unwrap_or(stored_tau), ..cfg.risk.clone() };
    policy.validate()?;
    let mc = model.config().clone();
    let (l, h, d) = (mc.context_len, mc.horizon, mc.dim);

    let origins = match input {
        Some(p) => origins_from_input(p, &columns, l, d, &std)?,
        None => {
            let loaded = dataset::load_source(&cfg.data.source, cfg.seed)?;
            let ds = dataset::build(&loaded.series, &cfg.data, l, h, Some(&std))?;
            origins_from_split(&ds, ds.split(f.split), f.max_windows)?
        }
    };

    let mut rng = RngStream::new(cfg.sampling_seed());
    let mut windows = Vec::with_capacity(origins.len());
    for o in origins {
        let pred = model.forward(&o.context, cfg.train.lambda0, &mut rng)?.output;
        let last = Tensor::new(vec![1, d], o.context.data()[(l - 1) * d..l * d].to_vec())?;
        let routed = route(&pred, &last, &policy, &mut rng)?;
        let samples = routed.output.samples.as_ref().expect("routing draws samples");
        let samples = std.invert(samples)?;
        let (mean, median) = point_forecast(&samples)?;
        let flat = |t: Tensor| t.into_data();
        windows.push(WindowForecast {
            origin_timestamp: o.origin_timestamp,
            target_timestamps: o.target_timestamps,
            gate_out: pred.gate_out.data()[0],
            risk: routed.risk,
            action: routed.action,
            mu_y: flat(std.invert(&pred.mu_y)?),
            sigma_y: flat(std.invert_scale(&pred.sigma_y)?),
            mu_tilde: flat(std.invert(&routed.output.mu_y)?),
            sigma_prime: flat(std.invert_scale(&routed.output.sigma_y)?),
            mean: flat(mean),
            median: flat(median),
            n_samples: samples.shape()[0],
            samples: f.include_samples.then(|| samples.data().to_vec()),
        });
    }
    let robust = windows.iter().filter(|w| w.action == Action::Robust).count();
    log::info!("{} windows forecast, {robust} routed to the robust branch (tau {:.6})", windows.len(), policy.tau);
    let out = ForecastOutput { horizon: h, dim: d, columns, tau: policy.tau, policy, windows };
    ensure_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join(FORECAST_FILE), &Envelope::new("forecast", cfg, out.clone()))?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluateOutput {
    pub forecast_config_hash: String,
    pub point: PointForecast,
    pub season: usize,
    pub header: Vec<String>,
    pub table_row: String,
    pub report: MetricsReport,
}

fn label_map(path: &Path, column: &str) -> Result<HashMap<i64, usize>> {
    let load = load_csv_series(path, &[column.to_string()], "timestamp").with_context(|| format!("loading {}", path.display()))?;
    let s = load.series;
    s.timestamps()
        .iter()
        .zip(s.values().data())
        .map(|(&t, &v)| {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Schema(format!("label {v} at {t} is not a non-negative integer")).into());
            }
            Ok((t, v as usize))
        })
        .collect()
}

/// Scores a forecast file against the truth series and writes the metrics,
/// the table row and the plot data.
pub fn evaluate(cfg: &RunConfig, forecast_path: &Path, truth: Option<&Path>, labels: Option<&Path>) -> Result<EvaluateOutput> {
    let fc: Envelope<ForecastOutput> = read_envelope(forecast_path)?;
    let f = &fc.body;
    let series = match truth {
        Some(p) => load_csv_series(p, &f.columns, "timestamp").with_context(|| format!("loading {}", p.display()))?.series,
        None => dataset::load_source(&cfg.data.source, cfg.seed)?.series,
    };
    let labels = labels.map(|p| label_map(p, &cfg.evaluate.label_column)).transpose()?;
    let (h, d) = (f.horizon, f.dim);
    if series.dim() != d {
        return Err(Error::Shape(format!("truth has D = {}, forecasts have D = {d}", series.dim())).into());
    }
    if f.windows.is_empty() {
        return Err(Error::EmptyInput("forecast file has no windows".into()).into());
    }

    let mut y = Vec::new();
    let mut yhat = Vec::new();
    let mut sigma = Vec::new();
    let mut point_labels = Vec::new();
    let mut err_rows = Vec::new();
    let mut first_target = i64::MAX;
    for (wi, w) in f.windows.iter().enumerate() {
        let targets = w.target_timestamps.as_ref().ok_or_else(|| Error::Alignment {
            index: y.len(),
            reason: format!("window {wi} has no target timestamps"),
        })?;
        let point = match cfg.evaluate.point {
            PointForecast::Mean => &w.mean,
            PointForecast::Median => &w.median,
        };
        for (step, &ts) in targets.iter().enumerate() {
            first_target = first_target.min(ts);
            let row = series
                .position_at_or_after(ts)
                .filter(|&r| series.timestamps()[r] == ts)
                .ok_or_else(|| Error::Alignment { index: y.len(), reason: format!("timestamp {ts} is not in the truth series") })?;
            let label = match &labels {
                Some(m) => Some(*m.get(&ts).ok_or_else(|| Error::Alignment {
                    index: y.len(),
                    reason: format!("timestamp {ts} has no regime label"),
                })?),
                None => None,
            };
            for dim in 0..d {
                let k = step * d + dim;
                let (yt, yp, s) = (series.row(row)[dim], point[k], w.sigma_y[k]);
                err_rows.push(vec![
                    wi.to_string(),
                    w.origin_timestamp.to_string(),
                    ts.to_string(),
                    (step + 1).to_string(),
                    dim.to_string(),
                    num(yt),
                    num(yp),
                    num((yt - yp).abs()),
                    num(s),
                ]);
                y.push(yt);
                yhat.push(yp);
                sigma.push(s);
                if let Some(l) = label {
                    point_labels.push(l);
                }
            }
        }
    }

    let cut = series.position_at_or_after(first_target).unwrap_or(series.len());
    let insample = &series.values().data()[..cut * d];
    let inputs = ReportInputs {
        y: &y,
        yhat: &yhat,
        insample,
        season: cfg.evaluate.season * d,
        horizon: h,
        split: "forecast",
    };
    let mut report = compute_report(&inputs)?;
    if labels.is_some() {
        report.shock = Some(Box::new(shock_slice(&inputs, &point_labels, cfg.evaluate.shock_label)?));
    }
    let table_row = format_table1_row(&report);

    ensure_dir(&cfg.out_dir)?;
    let dir = &cfg.out_dir;
    write_csv(
        &dir.join(ERRORS_FILE),
        &["window", "origin_timestamp", "timestamp", "step", "dim", "y", "yhat", "abs_error", "sigma_y"],
        err_rows,
    )?;
    write_csv(
        &dir.join(CALIBRATION_FILE),
        &["sigma_y", "abs_error"],
        sigma.iter().zip(y.iter().zip(&yhat)).map(|(s, (a, b))| vec![num(*s), num((a - b).abs())]),
    )?;
    write_csv(
        &dir.join(GATE_FILE),
        &["origin_timestamp", "gate_out", "risk", "action"],
        f.windows.iter().map(|w| {
            let action = match w.action {
                Action::Standard => "standard",
                Action::Robust => "robust",
            };
            vec![w.origin_timestamp.to_string(), num(w.gate_out), num(w.risk), action.to_string()]
        }),
    )?;
    let header: Vec<String> = TABLE1_HEADER.iter().map(|s| s.to_string()).collect();
    std::fs::write(dir.join(TABLE_FILE), format!("{}\n{table_row}\n", header.join(", ")))?;
    let out = EvaluateOutput {
        forecast_config_hash: fc.config_hash.clone(),
        point: cfg.evaluate.point,
        season: cfg.evaluate.season,
        header,
        table_row,
        report,
    };
    write_json(&dir.join(METRICS_FILE), &Envelope::new("evaluate", cfg, out.clone()))?;
    Ok(out)
}

/// Central-difference check of the full objective on the configured model.
pub fn gradcheck(cfg: &RunConfig, corrupt: Option<&str>) -> Result<GradCheckReport> {
    let model = Generator::new(cfg.model.clone(), cfg.model_seed())?;
    let loaded = dataset::load_source(&cfg.data.source, cfg.seed)?;
    let mc = model.config();
    let ds = dataset::build(&loaded.series, &cfg.data, mc.context_len, mc.horizon, None)?;
    let n = cfg.gradcheck.windows.min(ds.train.len());
    let batch = ds.train.select(&(0..n).collect::<Vec<_>>())?;
    let noise = Noise::draw(mc, n, &mut RngStream::new(cfg.sampling_seed()));
    let report = training::gradient_check(&model, &batch, &cfg.train, &noise, cfg.gradcheck.step, corrupt)?;
    ensure_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join(GRADCHECK_FILE), &Envelope::new("gradcheck", cfg, report.clone()))?;
    Ok(report)
}
