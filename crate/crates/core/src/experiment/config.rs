//! Strict JSON experiment description.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::admm::{AdmmConfig, SolverMode, DEFAULT_EPS_GRAD, DEFAULT_EPS_MU};
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, UpsampleMode};
use crate::imaging::NoiseSpec;
use crate::inner::AdamConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Smallest phantom side accepted in a config.
pub const MIN_PHANTOM_SIZE: usize = 64;

const PHANTOM_BETA_T: f64 = 1.0;
const FILE_BETA_T: f64 = 0.1;
const PHANTOM_LEARNING_RATE: f64 = 0.01;
const FILE_LEARNING_RATE: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Degradation {
    #[serde(default)]
    pub noise: NoiseModel,
    /// Standard deviation on the 0–255 scale.
    pub sigma: f64,
    #[serde(default)]
    pub blur_kernel_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub mode: SolverMode,
    pub outer_iters: usize,
    pub inner_iters: usize,
    #[serde(default)]
    pub beta_t: Option<f64>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub adam_beta1: Option<f64>,
    #[serde(default)]
    pub adam_beta2: Option<f64>,
    #[serde(default)]
    pub adam_eps: Option<f64>,
    #[serde(default)]
    pub eps_grad: Option<f64>,
    #[serde(default)]
    pub eps_mu: Option<f64>,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

/// Architecture knobs; the weight seed and output channels come from elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    pub levels: usize,
    pub down_channels: Vec<usize>,
    pub up_channels: Vec<usize>,
    pub skip_channels: Vec<usize>,
    pub input_channels: usize,
    pub upsample_mode: UpsampleMode,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let d = GeneratorConfig::default();
        GeneratorSection {
            levels: d.levels,
            down_channels: d.down_channels,
            up_channels: d.up_channels,
            skip_channels: d.skip_channels,
            input_channels: d.input_channels,
            upsample_mode: d.upsample_mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub noise: u64,
    pub weights: u64,
    pub input: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmitSection {
    pub restored: bool,
    pub best: bool,
    pub trace_csv: bool,
    pub profiles: Vec<usize>,
}

impl Default for EmitSection {
    fn default() -> Self {
        EmitSection {
            restored: true,
            best: true,
            trace_csv: true,
            profiles: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Ground-truth image file; exclusive with `phantom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_path: Option<PathBuf>,
    /// Synthetic piecewise-constant ground truth; exclusive with `input_path`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomSpec>,
    #[serde(default)]
    pub grayscale: bool,
    pub degradation: Degradation,
    pub method: MethodSection,
    #[serde(default)]
    pub generator: GeneratorSection,
    pub seeds: Seeds,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit: EmitSection,
    #[serde(default = "default_true")]
    pub deterministic: bool,
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// Reads, fills defaults and validates. Relative paths resolve against the file's directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::config(
                if key == "." { "<root>".to_string() } else { key },
                e.into_inner().to_string(),
            )
        })?;
        cfg.fill_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.input_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.degradation.blur_kernel_path.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    fn fill_defaults(&mut self) {
        let phantom = self.phantom.is_some();
        let m = &mut self.method;
        let adam = AdamConfig::default();
        m.beta_t
            .get_or_insert(if phantom { PHANTOM_BETA_T } else { FILE_BETA_T });
        m.learning_rate.get_or_insert(if phantom {
            PHANTOM_LEARNING_RATE
        } else {
            FILE_LEARNING_RATE
        });
        m.adam_beta1.get_or_insert(adam.beta1);
        m.adam_beta2.get_or_insert(adam.beta2);
        m.adam_eps.get_or_insert(adam.eps);
        m.eps_grad.get_or_insert(DEFAULT_EPS_GRAD);
        m.eps_mu.get_or_insert(DEFAULT_EPS_MU);
        m.checkpoint_every.get_or_insert(0);
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        match (&self.input_path, &self.phantom) {
            (Some(_), Some(_)) => return Err(Error::config("phantom", "input_path and phantom are exclusive")),
            (None, None) => return Err(Error::config("input_path", "one of input_path or phantom is required")),
            (None, Some(p)) if p.size < MIN_PHANTOM_SIZE => {
                return Err(Error::config(
                    "phantom.size",
                    format!("must be at least {MIN_PHANTOM_SIZE}"),
                ))
            }
            _ => {}
        }
        self.noise_spec()
            .validate()
            .map_err(|e| Error::config("degradation.sigma", e.to_string()))?;
        self.admm_config().validate()?;
        self.generator_config(1).validate()
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec::gaussian(self.degradation.sigma, self.seeds.noise)
    }

    /// Solver settings; call after defaults are filled.
    pub fn admm_config(&self) -> AdmmConfig {
        let m = &self.method;
        let adam = AdamConfig::default();
        AdmmConfig {
            mode: m.mode,
            beta_t: m.beta_t.unwrap_or(PHANTOM_BETA_T),
            mu: m.mu,
            outer_iters: m.outer_iters,
            inner_iters: m.inner_iters,
            eps_grad: m.eps_grad.unwrap_or(DEFAULT_EPS_GRAD),
            eps_mu: m.eps_mu.unwrap_or(DEFAULT_EPS_MU),
            checkpoint_every: m.checkpoint_every.unwrap_or(0),
            adam: AdamConfig {
                learning_rate: m.learning_rate.unwrap_or(adam.learning_rate),
                beta1: m.adam_beta1.unwrap_or(adam.beta1),
                beta2: m.adam_beta2.unwrap_or(adam.beta2),
                eps: m.adam_eps.unwrap_or(adam.eps),
            },
        }
    }

    pub fn generator_config(&self, output_channels: usize) -> GeneratorConfig {
        let g = &self.generator;
        GeneratorConfig {
            levels: g.levels,
            down_channels: g.down_channels.clone(),
            up_channels: g.up_channels.clone(),
            skip_channels: g.skip_channels.clone(),
            input_channels: g.input_channels,
            output_channels,
            upsample_mode: g.upsample_mode,
            seed: self.seeds.weights,
        }
    }
}

/// Parses and validates a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    ExperimentConfig::from_path(path)
}
