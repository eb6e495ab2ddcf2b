//! Run configuration shared by every CLI command.
//!
//! A run is described by one TOML file; command-line flags override
//! individual keys, and every command writes the resolved configuration next
//! to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::{FitConfig, LoraConfig};
use crate::augment::{AugmentationPolicy, Task};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::numerics::AdamWConfig;
use crate::signal::{SynthesisConfig, AOA_FIELD, MODULATION_FIELD};
use crate::ssl::SslConfig;

/// Label field a downstream task is scored on.
pub fn label_field(task: Task) -> Result<&'static str> {
    match task {
        Task::Mod => Ok(MODULATION_FIELD),
        Task::Aoa => Ok(AOA_FIELD),
        Task::Joint => Err(Error::invalid("the joint task has no single label field; use mod or aoa")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSection {
    /// Records per (modulation, angle) pair.
    pub per_class: usize,
    pub train_ratio: f64,
    /// Overrides the angle grid with this many evenly spaced bins.
    pub aoa_classes: Option<usize>,
    pub synthesis: SynthesisConfig,
}

impl Default for GenSection {
    fn default() -> Self {
        Self {
            per_class: 10,
            train_ratio: 0.7,
            aoa_classes: None,
            synthesis: SynthesisConfig::default(),
        }
    }
}

impl GenSection {
    pub fn resolved_synthesis(&self, seed: u64) -> SynthesisConfig {
        let mut s = self.synthesis.clone();
        if let Some(n) = self.aoa_classes {
            s.aoa_grid_deg = crate::signal::aoa_grid(n);
        }
        s.seed = seed;
        s
    }
}

/// A preset name or a fully spelled-out policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicySpec {
    Preset(String),
    Explicit(AugmentationPolicy),
}

impl PolicySpec {
    pub fn resolve(&self) -> Result<AugmentationPolicy> {
        match self {
            PolicySpec::Preset(name) => AugmentationPolicy::preset(name),
            PolicySpec::Explicit(p) => Ok(p.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SslSection {
    pub policy: PolicySpec,
    pub batch_size: usize,
    pub epochs: usize,
    /// Defaults to the preset's value.
    pub lr: Option<f64>,
    pub temperature: Option<f64>,
    pub lr_min: f64,
    pub early_stop: bool,
    /// Pretrain on at most this many train records.
    pub subset: Option<usize>,
    pub optimizer: AdamWConfig,
}

impl Default for SslSection {
    fn default() -> Self {
        Self {
            policy: PolicySpec::Preset("ssl-joint".into()),
            batch_size: 64,
            epochs: 20,
            lr: None,
            temperature: None,
            lr_min: 1e-7,
            early_stop: false,
            subset: None,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl SslSection {
    pub fn resolve(&self, seed: u64) -> Result<SslConfig> {
        let policy = self.policy.resolve()?;
        let (lr, temperature) = match policy.task {
            Task::Mod | Task::Aoa => (0.1, 1.5),
            Task::Joint => (0.5, 0.12),
        };
        Ok(SslConfig {
            batch_size: self.batch_size,
            temperature: self.temperature.unwrap_or(temperature),
            epochs: self.epochs,
            lr: self.lr.unwrap_or(lr),
            lr_min: self.lr_min,
            policy,
            seed,
            optimizer: self.optimizer,
            early_stop: self.early_stop,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptMethod {
    Probe,
    Lora,
    Supervised,
}

impl AdaptMethod {
    pub fn name(self) -> &'static str {
        match self {
            AdaptMethod::Probe => "probe",
            AdaptMethod::Lora => "lora",
            AdaptMethod::Supervised => "supervised",
        }
    }
}

impl std::str::FromStr for AdaptMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "probe" => Ok(Self::Probe),
            "lora" => Ok(Self::Lora),
            "supervised" => Ok(Self::Supervised),
            _ => Err(Error::invalid(format!("unknown method `{s}` (probe|lora|supervised)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptSection {
    pub method: AdaptMethod,
    pub k: usize,
    /// Defaults: 100 epochs for every method.
    pub epochs: Option<usize>,
    /// Defaults: 1e-3 for probes, 1e-2 for adapters and supervised runs.
    pub lr: Option<f64>,
    pub batch_size: usize,
    pub lora: LoraConfig,
    pub optimizer: AdamWConfig,
}

impl Default for AdaptSection {
    fn default() -> Self {
        Self {
            method: AdaptMethod::Probe,
            k: 10,
            epochs: None,
            lr: None,
            batch_size: 32,
            lora: LoraConfig::default(),
            optimizer: AdamWConfig::default(),
        }
    }
}

impl AdaptSection {
    pub fn fit_config(&self, seed: u64) -> FitConfig {
        let base = match self.method {
            AdaptMethod::Probe => FitConfig::probe(seed),
            AdaptMethod::Lora | AdaptMethod::Supervised => FitConfig::end_to_end(seed),
        };
        FitConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            lr: self.lr.unwrap_or(base.lr),
            batch_size: self.batch_size,
            seed,
            lr_min: base.lr_min,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub k_min: usize,
    pub k_max: usize,
    pub pca_dims: usize,
    pub max_iter: usize,
    /// Cluster count for pseudo-labeling; defaults to the task's class count.
    pub pseudo_k: Option<usize>,
    /// Analyze at most this many records (test partition first).
    pub max_records: Option<usize>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 12,
            pca_dims: 2,
            max_iter: 100,
            pseudo_k: None,
            max_records: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    CdProb,
    CmProb,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::CdProb => "cd_prob",
            SweepAxis::CmProb => "cm_prob",
        }
    }

    /// The task the swept augmentation serves.
    pub fn task(self) -> Task {
        match self {
            SweepAxis::CdProb => Task::Mod,
            SweepAxis::CmProb => Task::Aoa,
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cd_prob" | "cd" => Ok(Self::CdProb),
            "cm_prob" | "cm" => Ok(Self::CmProb),
            _ => Err(Error::invalid(format!("unknown sweep axis `{s}` (cd_prob|cm_prob)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub probs: Vec<f64>,
    pub tr_lens: Vec<usize>,
    pub epochs: usize,
    /// Labeled records per class for the probe.
    pub k: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            axis: SweepAxis::CdProb,
            probs: vec![0.01, 0.5, 0.9],
            tr_lens: vec![20, 40, 60],
            epochs: 20,
            k: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub epochs: usize,
    pub budgets: Vec<usize>,
    pub tr_prob: f64,
    pub tr_len: usize,
    pub cm_prob: f64,
    pub cm_len: usize,
    pub cd_prob: f64,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            epochs: 10,
            budgets: vec![10, 100, 200],
            tr_prob: 0.95,
            tr_len: 40,
            cm_prob: 0.95,
            cm_len: 200,
            cd_prob: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub dataset: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub task: Task,
    pub seed: u64,
    pub gen: GenSection,
    pub encoder: EncoderConfig,
    pub ssl: SslSection,
    pub adapt: AdaptSection,
    pub analysis: AnalysisSection,
    pub sweep: SweepSection,
    pub ablate: AblateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs"),
            dataset: PathBuf::from("dataset.iqds"),
            checkpoint: None,
            task: Task::Mod,
            seed: 0,
            gen: GenSection::default(),
            encoder: EncoderConfig::default(),
            ssl: SslSection::default(),
            adapt: AdaptSection::default(),
            analysis: AnalysisSection::default(),
            sweep: SweepSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::invalid(format!("cannot serialize config: {e}")))
    }

    /// Writes `resolved_config.toml` into `dir`.
    pub fn write_resolved(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join("resolved_config.toml");
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
