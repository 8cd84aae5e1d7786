//! Run configuration: a versioned TOML file merged with command-line flags,
//! fully resolved and validated before any subcommand runs.

use std::path::{Path, PathBuf};

use exifgmm_core::gmm::{CovarianceType, EmConfig};
use exifgmm_core::model::{Architecture, ModelConfig};
use exifgmm_core::synth::{SynthConfig, SynthSizes, DEFAULT_ANOMALY_SHIFT};
use exifgmm_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

/// Settings of the synthetic data generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub train: usize,
    pub test_clean: usize,
    pub test_anomalous: usize,
    pub anomaly_shift: f64,
    pub missing_tag_prob: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let sizes = SynthSizes::default();
        Self {
            train: sizes.train,
            test_clean: sizes.test_clean,
            test_anomalous: sizes.test_anomalous,
            anomaly_shift: DEFAULT_ANOMALY_SHIFT,
            missing_tag_prob: SynthConfig::default().missing_tag_prob,
        }
    }
}

impl SynthSection {
    pub fn sizes(&self) -> SynthSizes {
        SynthSizes {
            train: self.train,
            test_clean: self.test_clean,
            test_anomalous: self.test_anomalous,
        }
    }

    pub fn config(&self) -> SynthConfig {
        SynthConfig {
            missing_tag_prob: self.missing_tag_prob,
        }
    }
}

/// Default input and output locations. They are not part of the digest:
/// moving a run to another directory does not change its artifacts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub gmm: Option<PathBuf>,
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Master seed; copied into the training and mixture seeds.
    pub seed: u64,
    /// False-alarm rate for the detection threshold.
    pub rate: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gmm: EmConfig,
    pub synth: SynthSection,
    #[serde(skip_serializing_if = "is_default_paths")]
    pub paths: Paths,
}

fn is_default_paths(p: &Paths) -> bool {
    *p == Paths::default()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            rate: 0.05,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            gmm: EmConfig::default(),
            synth: SynthSection::default(),
            paths: Paths::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ArchChoice {
    Mlp,
    TinyConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CovChoice {
    Diag,
    Full,
}

/// Flag values that override the config file.
#[derive(Debug, Clone, Default, PartialEq, clap::Args)]
pub struct Overrides {
    /// Declarative TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of mixture components.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// False-alarm rate used to set the threshold.
    #[arg(long, global = true)]
    pub rate: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long = "batch-size", global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long = "weight-decay", global = true)]
    pub weight_decay: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub arch: Option<ArchChoice>,
    #[arg(long = "feature-dim", global = true)]
    pub feature_dim: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub cov: Option<CovChoice>,
    /// Standardise features before fitting the mixture.
    #[arg(long = "standardize-features", global = true)]
    pub standardize_features: bool,
}

const DEFAULT_CONV_CHANNELS: [usize; 3] = [8, 16, 32];
const DEFAULT_MLP_HIDDEN: [usize; 2] = [128, 128];

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Loads the config file (or defaults), applies flag overrides, copies
    /// the master seed into the stage seeds and validates the result.
    pub fn resolve(overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &overrides.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.train.seed = cfg.seed;
        cfg.gmm.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.k {
            self.gmm.k = v;
        }
        if let Some(v) = o.rate {
            self.rate = v;
        }
        if let Some(v) = o.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = o.batch_size {
            self.train.batch_size = v;
        }
        if let Some(v) = o.lr {
            self.train.lr = v;
        }
        if let Some(v) = o.weight_decay {
            self.train.weight_decay = v;
        }
        match (o.arch, &self.model.arch) {
            (Some(ArchChoice::Mlp), Architecture::TinyConv { .. }) => {
                self.model.arch = Architecture::Mlp {
                    hidden: DEFAULT_MLP_HIDDEN.to_vec(),
                }
            }
            (Some(ArchChoice::TinyConv), Architecture::Mlp { .. }) => {
                self.model.arch = Architecture::TinyConv {
                    channels: DEFAULT_CONV_CHANNELS.to_vec(),
                }
            }
            _ => {}
        }
        if let Some(v) = o.feature_dim {
            self.model.feature_dim = v;
        }
        match o.cov {
            Some(CovChoice::Diag) => self.gmm.covariance = CovarianceType::Diagonal,
            Some(CovChoice::Full) => self.gmm.covariance = CovarianceType::Full,
            None => {}
        }
        if o.standardize_features {
            self.gmm.standardize = true;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.version != CONFIG_VERSION {
            return usage(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            ));
        }
        let rate_ok = self.rate > 0.0 && self.rate < 1.0;
        if !rate_ok {
            return usage(format!("rate {} must lie strictly between 0 and 1", self.rate));
        }
        if self.gmm.k == 0 {
            return usage("k must be positive".into());
        }
        let em_ok = self.gmm.lambda > 0.0 && self.gmm.tol >= 0.0;
        if !em_ok {
            return usage(format!("gmm lambda {} / tol {}", self.gmm.lambda, self.gmm.tol));
        }
        self.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let synth_ok = self.synth.anomaly_shift >= 0.0 && (0.0..1.0).contains(&self.synth.missing_tag_prob);
        if !synth_ok {
            return usage(format!(
                "synth shift {} / missing-tag probability {}",
                self.synth.anomaly_shift, self.synth.missing_tag_prob
            ));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of everything except `paths`.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths = Paths::default();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
