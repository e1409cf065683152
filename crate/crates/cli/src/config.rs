//! Run configuration: a sectioned TOML document with kind-dependent defaults.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use chrono::NaiveDate;
use hydrodiff::data::{DateRange, NormMode, Splits, SyntheticConfig};
use hydrodiff::diffusion::DiffusionConfig;
use hydrodiff::model::{ModelConfig, ModelKind};
use hydrodiff::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Directory holding one CSV per basin and `statics.csv`.
    pub dir: PathBuf,
    pub norm: NormMode,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            norm: NormMode::Pooled,
        }
    }
}

/// Consecutive 365-day blocks from `start`, unless explicit ranges are given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub start: NaiveDate,
    pub train_years: u32,
    pub validation_years: u32,
    pub test_years: u32,
    pub train: Option<DateRange>,
    pub validation: Option<DateRange>,
    pub test: Option<DateRange>,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"),
            train_years: 6,
            validation_years: 1,
            test_years: 3,
            train: None,
            validation: None,
            test: None,
        }
    }
}

impl SplitSection {
    pub fn resolve(&self) -> hydrodiff::Result<Splits> {
        let blocks = Splits::by_years(self.start, self.train_years, self.validation_years, self.test_years)?;
        Ok(Splits {
            train: self.train.unwrap_or(blocks.train),
            validation: self.validation.unwrap_or(blocks.validation),
            test: self.test.unwrap_or(blocks.test),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    /// Ensemble size for diffusion kinds; deterministic kinds emit one member.
    pub members: usize,
    /// Replace negative streamflow by zero.
    pub clamp_negative: bool,
    /// Use every n-th initialization date of the test period.
    pub date_stride: usize,
    /// Explicit initialization dates instead of the test period.
    pub dates: Option<Vec<NaiveDate>>,
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self {
            members: 50,
            clamp_negative: false,
            date_stride: 1,
            dates: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub lead_min: usize,
    pub lead_max: usize,
    /// Observed-flow quantile defining the high-flow event.
    pub event_quantile: f64,
    pub reliability_bins: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            lead_min: 0,
            lead_max: 7,
            event_quantile: 0.9,
            reliability_bins: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream; overrides `train.seed`.
    pub seed: u64,
    /// Directory for checkpoints, forecasts and reports.
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub synthetic: SyntheticConfig,
    pub splits: SplitSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub diffusion: DiffusionConfig,
    pub forecast: ForecastSection,
    pub evaluate: EvaluateSection,
}

impl RunConfig {
    /// Defaults for one model kind.
    pub fn for_kind(kind: ModelKind) -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("run"),
            data: DataSection::default(),
            synthetic: SyntheticConfig::default(),
            splits: SplitSection::default(),
            model: ModelConfig::for_kind(kind),
            train: TrainConfig::for_kind(kind),
            diffusion: DiffusionConfig::default(),
            forecast: ForecastSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }

    /// Parses a document, filling absent keys with the defaults of its
    /// `model.kind` (hydrodiffusion when absent). Unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text)?;
        let kind = match user.get("model").and_then(|m| m.get("kind")) {
            Some(toml::Value::String(s)) => s.parse::<ModelKind>()?,
            Some(other) => return Err(anyhow!("model.kind must be a string, got {other}")),
            None => ModelKind::Hydrodiffusion,
        };
        let mut merged = toml::Table::try_from(Self::for_kind(kind))?;
        merge(&mut merged, user);
        let mut cfg: Self = merged.try_into()?;
        cfg.sync_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Makes every seeded component follow the top-level seed.
    pub fn sync_seed(&mut self) {
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.dims.validate()?;
        self.train.validate()?;
        self.diffusion.validate()?;
        self.splits.resolve()?;
        if self.forecast.members == 0 || self.forecast.date_stride == 0 {
            return Err(anyhow!("forecast.members and forecast.date_stride must be at least 1"));
        }
        let e = &self.evaluate;
        if e.lead_min > e.lead_max || e.lead_max > self.model.dims.future_len {
            return Err(anyhow!(
                "evaluate leads {}..{} must lie within 0..{}",
                e.lead_min,
                e.lead_max,
                self.model.dims.future_len
            ));
        }
        if !(e.event_quantile > 0.0 && e.event_quantile < 1.0) || e.reliability_bins < 2 {
            return Err(anyhow!("evaluate.event_quantile must lie in (0, 1) and reliability_bins be at least 2"));
        }
        Ok(())
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_kind(ModelKind::Hydrodiffusion)
    }
}

/// Overlays `over` onto `base`, recursing into tables.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Parses `A..B` (inclusive) into a lead range.
pub fn parse_leads(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| anyhow!("leads must look like A..B, got `{s}`"))?;
    let a: usize = a.trim().parse().with_context(|| format!("bad lead `{a}`"))?;
    let b: usize = b.trim().parse().with_context(|| format!("bad lead `{b}`"))?;
    if a > b {
        return Err(anyhow!("lead range {a}..{b} is empty"));
    }
    Ok((a, b))
}
