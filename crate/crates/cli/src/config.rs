use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ugf_core::attention::Variant;
use ugf_core::data::{MeanSpec, Regime, SigmaSpec};
use ugf_core::metrics::DEFAULT_SEASON;
use ugf_core::model::ModelConfig;
use ugf_core::risk::RiskPolicy;
use ugf_core::training::TrainConfig;
use ugf_core::wiae::{AdversarialConfig, TrainMode};

/// Where the series comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    RegimeAr {
        length: usize,
        regimes: Vec<Regime>,
        switch_prob: f64,
        #[serde(default)]
        initial: Option<f64>,
    },
    Heteroskedastic {
        length: usize,
        mean: MeanSpec,
        sigma: SigmaSpec,
    },
    Csv {
        path: PathBuf,
        value_columns: Vec<String>,
        #[serde(default = "default_ts_column")]
        timestamp_column: String,
    },
}

fn default_ts_column() -> String {
    "timestamp".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Fraction of rows whose targets may be used for training.
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub stride: usize,
    /// Z-score the series with statistics of the training rows.
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::RegimeAr {
                length: 800,
                regimes: vec![
                    Regime { ar_coef: 0.8, noise_std: 0.3, mean: 0.0 },
                    Regime { ar_coef: 0.3, noise_std: 1.5, mean: 2.0 },
                ],
                switch_prob: 0.03,
                initial: None,
            },
            train_fraction: 0.6,
            val_fraction: 0.2,
            stride: 1,
            standardize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastConfig {
    /// Split to forecast when no input window is given.
    pub split: Split,
    pub max_windows: Option<usize>,
    /// Store every predictive draw in the forecast file.
    pub include_samples: bool,
    /// Overrides the threshold stored at training time.
    pub tau: Option<f64>,
    pub fixed_gate: Option<f64>,
    pub fixed_output_gate: Option<f64>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            split: Split::Test,
            max_windows: None,
            include_samples: true,
            tau: None,
            fixed_gate: None,
            fixed_output_gate: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    #[default]
    Test,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointForecast {
    #[default]
    Mean,
    Median,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub season: usize,
    pub point: PointForecast,
    pub label_column: String,
    pub shock_label: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { season: DEFAULT_SEASON, point: PointForecast::Mean, label_column: "regime".into(), shock_label: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub windows: usize,
    pub step: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { windows: 3, step: 1e-5 }
    }
}

/// Everything a command needs. `train.seed` is replaced by a value derived
/// from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub mode: TrainMode,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub adversarial: AdversarialConfig,
    pub risk: RiskPolicy,
    pub forecast: ForecastConfig,
    pub evaluate: EvaluateConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("ugf-out"),
            mode: TrainMode::Likelihood,
            data: DataConfig::default(),
            model: ModelConfig::tiny(),
            train: TrainConfig { max_epochs: 20, ..TrainConfig::default() },
            adversarial: AdversarialConfig::default(),
            risk: RiskPolicy::default(),
            forecast: ForecastConfig::default(),
            evaluate: EvaluateConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mode: Option<TrainMode>,
    pub variant: Option<Variant>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ugf_core::Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(o) = &overrides.out {
            cfg.out_dir = o.clone();
        }
        if let Some(m) = overrides.mode {
            cfg.mode = m;
        }
        if let Some(v) = overrides.variant {
            cfg.model.attention.variant = v;
        }
        cfg.train.seed = cfg.seed.wrapping_add(2);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.adversarial.validate()?;
        self.risk.validate()?;
        let d = &self.data;
        let ok = d.train_fraction > 0.0 && d.val_fraction > 0.0 && d.train_fraction + d.val_fraction < 1.0;
        if !ok {
            return Err(ugf_core::Error::Config(format!(
                "train_fraction {} and val_fraction {} must be positive and sum below 1",
                d.train_fraction, d.val_fraction
            ))
            .into());
        }
        if d.stride == 0 {
            return Err(ugf_core::Error::Config("data.stride must be at least 1".into()).into());
        }
        if self.evaluate.season == 0 {
            return Err(ugf_core::Error::Config("evaluate.season must be at least 1".into()).into());
        }
        if self.gradcheck.windows == 0 || !(self.gradcheck.step > 0.0) {
            return Err(ugf_core::Error::Config("gradcheck needs windows >= 1 and a positive step".into()).into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let canonical = RunConfig { out_dir: PathBuf::new(), ..self.clone() };
        let json = serde_json::to_string(&canonical).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn model_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn sampling_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }
}
