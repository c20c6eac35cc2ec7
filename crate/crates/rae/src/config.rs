//! Run configuration: a single TOML file drives every command, with a
//! top-level seed from which all randomness derives.
//!
//! The master seed fans out deterministically: the corpus split uses
//! the seed itself, model initialization uses seed + 1, the annotation
//! sampler seed + 2 (seed + 3 is reserved). A resolved configuration
//! (overrides applied, derived seeds filled in) is hashed and embedded
//! in every output artifact so results can be traced to their exact
//! settings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{RaeError, Result};
use crate::pipeline::AblationConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// File of positive sentences, one per line.
    pub positive: PathBuf,
    /// File of negative sentences, one per line.
    pub negative: PathBuf,
    /// Fraction of sentences that go to the training split.
    #[serde(default = "default_split_fraction")]
    pub split_fraction: f64,
}

fn default_split_fraction() -> f64 {
    0.9
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Annotation sample size per category.
    pub n_per_category: usize,
    /// How many trees `export-trees` writes by default.
    pub export_trees: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            n_per_category: 10,
            export_trees: 10,
        }
    }
}

/// The on-disk configuration file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; all random streams derive from it. The `seed`
    /// inside `[train]` is ignored and overwritten during resolution.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| RaeError::io(path, e))?;
        toml::from_str(&text).map_err(|e| RaeError::Config(format!("{}: {e}", path.display())))
    }

    /// Apply command-line overrides and derive the per-purpose seeds.
    pub fn resolve(&self, seed: Option<u64>, out_dir: Option<PathBuf>) -> ResolvedConfig {
        let seed = seed.unwrap_or(self.seed);
        ResolvedConfig {
            seed,
            split_seed: seed,
            model_seed: seed.wrapping_add(1),
            sampler_seed: seed.wrapping_add(2),
            out_dir: out_dir.unwrap_or_else(|| self.out_dir.clone()),
            data: self.data.clone(),
            train: TrainConfig {
                seed: seed.wrapping_add(1),
                ..self.train.clone()
            },
            ablation: self.ablation.clone(),
            analysis: self.analysis.clone(),
        }
    }
}

/// A configuration with all overrides applied and seeds derived; what
/// actually ran, and what gets embedded in artifacts.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub split_seed: u64,
    pub model_seed: u64,
    pub sampler_seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
    pub analysis: AnalysisConfig,
}

impl ResolvedConfig {
    /// Reject bad values before any compute; referenced data files
    /// must exist.
    pub fn validate(&self) -> Result<()> {
        if !(self.data.split_fraction > 0.0 && self.data.split_fraction < 1.0) {
            return Err(RaeError::Config(format!(
                "split_fraction must lie strictly between 0 and 1, got {}",
                self.data.split_fraction
            )));
        }
        self.train.validate()?;
        if self.ablation.modes.is_empty() || self.ablation.thresholds.is_empty() {
            return Err(RaeError::Config(
                "ablation.modes and ablation.thresholds must be non-empty".into(),
            ));
        }
        for path in [&self.data.positive, &self.data.negative] {
            if !path.is_file() {
                return Err(RaeError::Config(format!(
                    "data file {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}
