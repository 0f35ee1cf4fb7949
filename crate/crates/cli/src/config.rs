use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sidarthe::data::{ColumnMap, FrenchColumnMap, SplitSpec, DEFAULT_QUARANTINE_DAYS};
use sidarthe::evaluation::{GridSpec, TestLoss, DEFAULT_THRESHOLD};
use sidarthe::integrator::Interpolation;
use sidarthe::model::{NamedRates, Rate};
use sidarthe::optimizer::DEFAULT_INIT_RANGE;

/// Everything a command needs. Relative paths are resolved against the
/// directory of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory; `--out` takes precedence.
    pub output: PathBuf,
    pub data: Option<DataConfig>,
    pub split: Option<SplitSpec>,
    pub integrator: IntegratorConfig,
    /// Explicit initial condition; otherwise day 0 of the data is used.
    pub initial: Option<InitialConfig>,
    pub rates: RatesConfig,
    pub fit: FitSection,
    pub simulate: SimulateSection,
    pub forecast: ForecastSection,
    pub grid: Option<GridSpec>,
    pub ablate: Option<AblateSection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("out"),
            data: None,
            split: None,
            integrator: IntegratorConfig::default(),
            initial: None,
            rates: RatesConfig::default(),
            fit: FitSection::default(),
            simulate: SimulateSection::default(),
            forecast: ForecastSection::default(),
            grid: None,
            ablate: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// One column per target, as in the Italian national report.
    #[default]
    Table,
    /// Cumulative counts from which D and H are reconstructed.
    French,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub population: f64,
    #[serde(default)]
    pub format: DataFormat,
    #[serde(default)]
    pub columns: ColumnMap,
    #[serde(default)]
    pub french_columns: FrenchColumnMap,
    #[serde(default = "default_quarantine")]
    pub quarantine_days: usize,
}

fn default_quarantine() -> usize {
    DEFAULT_QUARANTINE_DAYS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub substeps: usize,
    pub interpolation: Interpolation,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { substeps: 1, interpolation: Interpolation::Hold }
    }
}

/// Infected compartments and `H_d`; `S` is the complement to `population`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub population: f64,
    pub i: f64,
    pub d: f64,
    pub a: f64,
    pub r: f64,
    pub t: f64,
    pub h: f64,
    pub e: f64,
    pub h_d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatesSource {
    /// The published constant estimates for Italy.
    #[default]
    Giordano,
    /// Uniform in `init_range`, constant in time, drawn from the run seed.
    Random,
    /// The `constant` table.
    Constant,
    /// A parameter CSV as written by `fit`.
    File,
}

/// Rates for `simulate` and the initialization of `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub source: RatesSource,
    pub constant: Option<NamedRates>,
    pub file: Option<PathBuf>,
    pub init_range: (f64, f64),
}

impl Default for RatesConfig {
    fn default() -> Self {
        Self { source: RatesSource::Giordano, constant: None, file: None, init_range: DEFAULT_INIT_RANGE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub pi0: f64,
    pub a: f64,
    pub b: f64,
    pub momentum: bool,
    pub m: f64,
    pub e_p: f64,
    /// Fidelity weights in D, R, T, H, E order.
    pub weights: [f64; 5],
    /// Divide each weight by the squared mean of its training series.
    pub relative_weights: bool,
    pub max_epochs: usize,
    pub patience: Option<usize>,
    pub seed: u64,
    /// Rate groups sharing one value, unlisted rates free; `None` uses the default pairs.
    pub tying: Option<Vec<Vec<Rate>>>,
    /// Keep every n-th epoch in the loss history file.
    pub history_stride: usize,
    /// Loss ranked by sweeps and summarized by ablations.
    pub test_loss: TestLoss,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            pi0: 1e-5,
            a: 0.0,
            b: 0.1,
            momentum: true,
            m: 0.0,
            e_p: 0.0,
            weights: [1.0; 5],
            relative_weights: false,
            max_epochs: 1000,
            patience: None,
            seed: 0,
            tying: None,
            history_stride: 1,
            test_loss: TestLoss::Fidelity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Number of simulated days after day 0.
    pub days: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { days: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    /// Fitted parameters; defaults to `params.csv` in the output directory.
    pub params: Option<PathBuf>,
    pub threshold: f64,
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self { params: None, threshold: DEFAULT_THRESHOLD }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    Momentum,
    Regularization,
}

/// Sweeps one family of hyperparameters over the `grid` template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    pub kind: AblationKind,
    #[serde(default)]
    pub a: Vec<f64>,
    #[serde(default)]
    pub b: Vec<f64>,
    #[serde(default)]
    pub m: Vec<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("invalid configuration {}", path.display()))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&dir);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.output);
        if let Some(d) = &mut self.data {
            fix(&mut d.path);
        }
        if let Some(f) = &mut self.rates.file {
            fix(f);
        }
        if let Some(f) = &mut self.forecast.params {
            fix(f);
        }
    }

    /// Checks that every referenced input file exists.
    pub fn check_inputs(&self) -> anyhow::Result<()> {
        let mut inputs: Vec<&PathBuf> = Vec::new();
        if let Some(d) = &self.data {
            inputs.push(&d.path);
        }
        if self.rates.source == RatesSource::File {
            match &self.rates.file {
                Some(f) => inputs.push(f),
                None => bail!("rates.source = \"file\" needs rates.file"),
            }
        }
        if let Some(f) = &self.forecast.params {
            inputs.push(f);
        }
        for p in inputs {
            if !p.exists() {
                bail!("input file {} does not exist", p.display());
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Hex SHA-256 prefix of the resolved configuration.
    pub fn hash(&self) -> anyhow::Result<String> {
        Ok(hex::encode(&Sha256::digest(self.to_toml()?.as_bytes())[..8]))
    }
}
