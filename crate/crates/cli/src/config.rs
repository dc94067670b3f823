//! Run configuration: a single JSON document with every default spelled out.

use std::path::{Path, PathBuf};

use dpkip_core::data::{ColumnKind, RawSpec};
use dpkip_core::dp::Optimizer;
use dpkip_core::kernels::KernelSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "yes")]
        gzipped: bool,
        /// Keep only the first `limit` rows.
        #[serde(default)]
        limit: Option<usize>,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        schema: Vec<ColumnSpec>,
        #[serde(default)]
        limit: Option<usize>,
    },
    Raw {
        paths: Vec<PathBuf>,
        spec: RawSpec,
        #[serde(default)]
        gzipped: bool,
        #[serde(default)]
        limit: Option<usize>,
    },
    Blobs {
        n: usize,
        num_classes: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum PrivacyConfig {
    /// Calibrate the noise multiplier to an `(epsilon, delta)` target.
    Epsilon { epsilon: f64, delta: f64 },
    /// Fixed noise multiplier; `delta` is only used to report epsilon.
    Sigma {
        sigma: f64,
        #[serde(default)]
        delta: Option<f64>,
    },
    /// Non-private KIP: no clipping, no noise.
    None {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Held-out data; evaluation is skipped when absent.
    pub test: Option<DatasetConfig>,
    /// Independent runs with seeds `seed, seed + 1, ...`.
    pub seeds: usize,
    /// Evaluate with a different kernel than the one used for distillation.
    pub kernel: Option<KernelSpec>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            test: None,
            seeds: 1,
            kernel: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub kernel: KernelSpec,
    pub imgs_per_class: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
    pub lambda_base: f64,
    pub privacy: PrivacyConfig,
    pub corrupt_fraction: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::Idx {
                images: "data/mnist/train-10k-images-idx3-ubyte.gz".into(),
                labels: "data/mnist/train-10k-labels-idx1-ubyte.gz".into(),
                gzipped: true,
                limit: None,
            },
            kernel: KernelSpec::Scatter {
                scales: 2,
                orientations: 8,
            },
            imgs_per_class: 10,
            epochs: 1,
            batch_size: 500,
            learning_rate: 0.1,
            optimizer: OptimizerKind::Adam,
            clip_norm: 1e-6,
            lambda_base: 1e-4,
            privacy: PrivacyConfig::Epsilon {
                epsilon: 10.0,
                delta: 1e-5,
            },
            corrupt_fraction: 0.0,
            seed: 0,
            output_dir: "runs/default".into(),
            eval: EvalConfig {
                test: Some(DatasetConfig::Idx {
                    images: "data/mnist/t10k-images-idx3-ubyte.gz".into(),
                    labels: "data/mnist/t10k-labels-idx1-ubyte.gz".into(),
                    gzipped: true,
                    limit: None,
                }),
                seeds: 1,
                kernel: None,
            },
        }
    }
}

fn invalid(field: &str, msg: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        msg: msg.into(),
    }
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

impl DatasetConfig {
    fn validate(&self, field: &str) -> Result<(), CliError> {
        match self {
            DatasetConfig::Idx { limit, .. }
            | DatasetConfig::Csv { limit, .. }
            | DatasetConfig::Raw { limit, .. } => {
                if *limit == Some(0) {
                    return Err(invalid(&format!("{field}.limit"), "must be >= 1"));
                }
            }
            DatasetConfig::Blobs {
                n,
                num_classes,
                separation,
                ..
            } => {
                if *num_classes == 0 || n % num_classes != 0 || *n == 0 {
                    return Err(invalid(
                        &format!("{field}.n"),
                        format!("must be a positive multiple of num_classes ({num_classes})"),
                    ));
                }
                if !(*separation >= 0.0) {
                    return Err(invalid(&format!("{field}.separation"), "must be >= 0"));
                }
            }
        }
        if let DatasetConfig::Raw { paths, .. } = self {
            if paths.is_empty() {
                return Err(invalid(&format!("{field}.paths"), "must not be empty"));
            }
        }
        Ok(())
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetConfig::Idx { images, labels, .. } => {
                fix(images);
                fix(labels);
            }
            DatasetConfig::Csv { path, .. } => fix(path),
            DatasetConfig::Raw { paths, .. } => paths.iter_mut().for_each(fix),
            DatasetConfig::Blobs { .. } => {}
        }
    }
}

impl RunConfig {
    /// Parses a config file. Relative paths are taken relative to the file.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
            invalid(
                &format!("{}:{}:{}", path.display(), e.line(), e.column()),
                e.to_string(),
            )
        })?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.dataset.resolve(base);
        if let Some(t) = &mut self.eval.test {
            t.resolve(base);
        }
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.dataset.validate("dataset")?;
        if let Some(t) = &self.eval.test {
            t.validate("eval.test")?;
        }
        for (field, v) in [
            ("imgs_per_class", self.imgs_per_class),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("eval.seeds", self.eval.seeds),
        ] {
            if v == 0 {
                return Err(invalid(field, "must be >= 1"));
            }
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid("learning_rate", "must be >= 0 and finite"));
        }
        positive("clip_norm", self.clip_norm)?;
        if !(self.lambda_base > 0.0) || !self.lambda_base.is_finite() {
            return Err(invalid("lambda_base", "must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.corrupt_fraction) {
            return Err(invalid("corrupt_fraction", "must lie in [0, 1)"));
        }
        match self.privacy {
            PrivacyConfig::Epsilon { epsilon, delta } => {
                positive("privacy.epsilon", epsilon)?;
                if !(delta > 0.0 && delta < 1.0) {
                    return Err(invalid("privacy.delta", "must lie in (0, 1)"));
                }
            }
            PrivacyConfig::Sigma { sigma, delta } => {
                positive("privacy.sigma", sigma)?;
                if delta.is_some_and(|d| !(d > 0.0 && d < 1.0)) {
                    return Err(invalid("privacy.delta", "must lie in (0, 1)"));
                }
            }
            PrivacyConfig::None {} => {}
        }
        match self.kernel {
            KernelSpec::FcNtk { depth: 0 } => {
                return Err(invalid("kernel.depth", "must be >= 1"))
            }
            KernelSpec::Rbf { bandwidth } => positive("kernel.bandwidth", bandwidth)?,
            KernelSpec::Scatter {
                scales,
                orientations,
            } if scales == 0 || orientations == 0 => {
                return Err(invalid("kernel", "scales and orientations must be >= 1"))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd {
                learning_rate: self.learning_rate,
            },
            OptimizerKind::Adam => Optimizer::adam(self.learning_rate),
        }
    }
}
