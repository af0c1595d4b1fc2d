//! Run configuration: one TOML document describing data, preprocessing,
//! model, sampler and chain settings.

use std::fs;
use std::path::{Path, PathBuf};

use bnn_mcmc::augmentation::AugmentPolicy;
use bnn_mcmc::features::ConvStackSpec;
use bnn_mcmc::model::Activation;
use bnn_mcmc::{ChainControls, Kernel, PriorSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// `label,f0,f1,...` rows.
    Csv,
    /// `<root>/<class>/*.pgm`.
    Images,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: Source,
    pub path: PathBuf,
    /// Feature extractor for image sources. Defaults to the standard stack.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<ConvStackSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_true")]
    pub stratified: bool,
    /// Defaults to a value derived from the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: default_test_fraction(),
            stratified: true,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// When given, must equal the feature count of the prepared data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    /// When given, must equal the class count of the data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_classes: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Every chain starts from the same random point.
    Shared,
    /// Chain `i` starts from its own random point.
    #[default]
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainsConfig {
    pub n_iter: usize,
    /// Defaults to `n_iter / 5`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default = "default_one")]
    pub thin: usize,
    #[serde(default = "default_one")]
    pub n_chains: usize,
    /// Standard deviation of the Gaussian the initial weights are drawn from.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub init: InitMode,
}

impl ChainsConfig {
    pub fn controls(&self) -> ChainControls {
        ChainControls {
            n_iter: self.n_iter,
            burn_in: self.burn_in.unwrap_or(self.n_iter / 5),
            thin: self.thin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub data: DataConfig,
    /// Applied to the training split of image data only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<AugmentPolicy>,
    #[serde(default)]
    pub split: SplitConfig,
    pub network: NetworkConfig,
    #[serde(default)]
    pub prior: PriorSpec,
    pub sampler: Kernel,
    pub chains: ChainsConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_test_fraction() -> f64 {
    0.25
}

fn default_true() -> bool {
    true
}

fn default_one() -> usize {
    1
}

fn default_init_scale() -> f64 {
    1.0
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}

impl RunConfig {
    /// Parses a config document. Relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> CliResult<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::config(e.to_string().trim_end().to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::from_toml(&text, &base)
    }

    pub fn data_path(&self) -> PathBuf {
        self.base_dir.join(&self.data.path)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.base_dir.join(&self.out)
    }

    pub fn controls(&self) -> ChainControls {
        self.chains.controls()
    }

    /// SHA-256 of the canonical JSON form of the config, excluding the
    /// output directory.
    pub fn hash(&self) -> String {
        let mut copy = self.clone();
        copy.out = PathBuf::new();
        let bytes = serde_json::to_vec(&copy).expect("config serialises");
        hex::encode(Sha256::digest(bytes))
    }

    /// Checks every field and reports all problems at once, each prefixed
    /// with its field path.
    pub fn validate(&self) -> CliResult<()> {
        let mut errs = Vec::new();
        let mut push = |field: &str, msg: String| errs.push(format!("{field}: {msg}"));

        let path = self.data_path();
        match self.data.source {
            Source::Csv if !path.is_file() => {
                push("data.path", format!("{} is not a file", path.display()))
            }
            Source::Images if !path.is_dir() => {
                push("data.path", format!("{} is not a directory", path.display()))
            }
            _ => {}
        }
        if self.data.source == Source::Csv {
            if self.data.features.is_some() {
                push("data.features", "only valid for image sources".into());
            }
            if self.augmentation.is_some() {
                push("augmentation", "only valid for image sources".into());
            }
        }
        if let Some(f) = &self.data.features {
            if let Err(e) = f.validate() {
                push("data.features", e.to_string());
            }
        }
        if let Some(a) = &self.augmentation {
            if let Err(e) = a.validate() {
                push("augmentation", e.to_string());
            }
        }
        let tf = self.split.test_fraction;
        if !(tf > 0.0 && tf < 1.0) {
            push("split.test_fraction", format!("must lie in (0, 1), got {tf}"));
        }
        if self.network.hidden_dims.iter().any(|&h| h == 0) {
            push("network.hidden_dims", "widths must be at least 1".into());
        }
        if self.network.input_dim == Some(0) {
            push("network.input_dim", "must be at least 1".into());
        }
        if matches!(self.network.n_classes, Some(k) if k < 2) {
            push("network.n_classes", "must be at least 2".into());
        }
        let v = self.prior.variance;
        if !(v > 0.0 && v.is_finite()) {
            push("prior.variance", format!("must be positive and finite, got {v}"));
        }
        match &self.sampler {
            Kernel::Mh(p) => {
                if !(p.step_scale > 0.0 && p.step_scale.is_finite()) {
                    push("sampler.step_scale", format!("must be positive, got {}", p.step_scale));
                }
            }
            Kernel::Hmc(c) => {
                if !(c.step_size > 0.0 && c.step_size.is_finite()) {
                    push("sampler.step_size", format!("must be positive, got {}", c.step_size));
                }
                if c.n_leapfrog == 0 {
                    push("sampler.n_leapfrog", "must be at least 1".into());
                }
            }
        }
        let c = self.controls();
        if c.n_iter == 0 {
            push("chains.n_iter", "must be at least 1".into());
        }
        if c.burn_in >= c.n_iter {
            push(
                "chains.burn_in",
                format!("must be smaller than chains.n_iter ({} >= {})", c.burn_in, c.n_iter),
            );
        }
        if c.thin == 0 {
            push("chains.thin", "must be at least 1".into());
        } else if c.burn_in < c.n_iter && c.n_retained() == 0 {
            push("chains.thin", "retains no samples".into());
        }
        if self.chains.n_chains == 0 {
            push("chains.n_chains", "must be at least 1".into());
        }
        let s = self.chains.init_scale;
        if !(s >= 0.0 && s.is_finite()) {
            push("chains.init_scale", format!("must be non-negative, got {s}"));
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(CliError {
                kind: Failure::Config,
                messages: errs,
            })
        }
    }
}
