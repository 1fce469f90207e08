//! Experiment config files (TOML) and their resolution into a
//! [`TrainConfig`] plus data sources.

use std::path::{Path, PathBuf};

use atlab_core::attacks::PerturbationSpec;
use atlab_core::data::{corrupt_labels, make_synthetic_images, make_synthetic_with, AugmentationSpec, BlobSpec, CorruptionSpec, Dataset, ImageSpec, Split};
use atlab_core::model::ArchSpec;
use atlab_core::objectives::{ObjectiveConfig, ObjectiveKind};
use atlab_core::schedule::Schedule;
use atlab_core::trainer::{EvalConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::dataset::load_dataset;
use crate::error::{read, AppError, Result};
use crate::suite::DEFAULT_SUITE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// Packed dataset directory; relative paths resolve against the config file.
    Packed { path: PathBuf },
    Blobs(BlobSpec),
    Images(ImageSpec),
}

impl DataSource {
    pub fn load(&self, split: Split) -> Result<Dataset> {
        let mut ds = match self {
            DataSource::Packed { path } => load_dataset(path)?,
            DataSource::Blobs(spec) => make_synthetic_with(spec)?,
            DataSource::Images(spec) => make_synthetic_images(spec)?,
        };
        ds.split = split;
        Ok(ds)
    }

    fn resolve(&mut self, base: &Path) {
        if let DataSource::Packed { path } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: DataSource,
    pub test: DataSource,
    /// Label corruption applied to the training set only.
    #[serde(default)]
    pub corruption: Option<CorruptionSpec>,
    /// Keep only the first `n` samples of each split.
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
}

impl DataSection {
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        let mut train = self.train.load(Split::Train)?;
        if let Some(n) = self.train_limit {
            train = train.head(n);
        }
        if let Some(spec) = &self.corruption {
            spec.validate()?;
            train = corrupt_labels(&train, spec)?;
        }
        let mut test = self.test.load(Split::Test)?;
        if let Some(n) = self.test_limit {
            test = test.head(n);
        }
        Ok((train, test))
    }
}

/// Objective section; absent schedules take their defaults from the epoch
/// count (ramps over the first half of training).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub kind: ObjectiveKind,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub gamma: Option<Schedule>,
    #[serde(default)]
    pub te_weight: Option<f64>,
    #[serde(default)]
    pub te_ramp: Option<Schedule>,
    #[serde(default)]
    pub te_momentum: Option<f64>,
    #[serde(default)]
    pub label_smoothing: f64,
    #[serde(default)]
    pub te_in_attack: bool,
}

impl ObjectiveSection {
    fn resolve(&self, epochs: usize) -> ObjectiveConfig {
        let mut cfg = ObjectiveConfig::new(self.kind, epochs);
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
        if let Some(g) = &self.gamma {
            cfg.gamma = g.clone();
        }
        if let Some(w) = self.te_weight {
            cfg.te_weight = w;
        }
        if let Some(r) = &self.te_ramp {
            cfg.te_ramp = r.clone();
        }
        if let Some(m) = self.te_momentum {
            cfg.te_momentum = m;
        }
        cfg.label_smoothing = self.label_smoothing;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub lr: Schedule,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub epochs: usize,
    /// Run seed; shuffling, augmentation and attack seeds derive from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub augmentation: AugmentationSpec,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    5e-4
}

fn default_batch_size() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "one")]
    pub every: usize,
    /// Selection attack; PGD-10 at 8/255 when absent.
    #[serde(default)]
    pub attack: Option<PerturbationSpec>,
    #[serde(default)]
    pub test_samples: Option<usize>,
    #[serde(default)]
    pub train_samples: Option<usize>,
    /// Attack suite used by `evaluate` and `report`.
    #[serde(default = "default_suite")]
    pub suite: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            every: 1,
            attack: None,
            test_samples: None,
            train_samples: None,
            suite: default_suite(),
        }
    }
}

fn one() -> usize {
    1
}

fn default_suite() -> Vec<String> {
    DEFAULT_SUITE.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ArchSpec,
    pub objective: ObjectiveSection,
    pub attack: PerturbationSpec,
    pub optim: OptimSection,
    #[serde(default)]
    pub eval: EvalSection,
    pub out: Option<OutSection>,
}

/// Everything a run needs, with defaults filled in and paths made absolute.
/// Stored as `config.json` in the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub data: DataSection,
    pub train: TrainConfig,
    pub suite: Vec<String>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| AppError::Toml {
            path: origin.to_path_buf(),
            source,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| crate::error::format_err(path, "config is not UTF-8"))?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.train.resolve(base);
        cfg.data.test.resolve(base);
        if let Some(out) = &mut cfg.out {
            if out.dir.is_relative() {
                out.dir = base.join(&out.dir);
            }
        }
        Ok(cfg)
    }

    /// Fills defaults and validates. `seed` overrides both the run seed and
    /// the initialization seed.
    pub fn resolve(&self, seed: Option<u64>) -> Result<ResolvedConfig> {
        let mut arch = self.model.clone();
        let mut run_seed = self.optim.seed;
        if let Some(s) = seed {
            run_seed = s;
            arch.init_seed = s;
        }
        let epochs = self.optim.epochs;
        let selection = self.eval.attack.clone().unwrap_or_else(|| PerturbationSpec::pgd10(run_seed));
        let train = TrainConfig {
            arch,
            objective: self.objective.resolve(epochs),
            attack: self.attack.clone(),
            te_in_attack: self.objective.te_in_attack,
            lr: self.optim.lr.clone(),
            momentum: self.optim.momentum,
            weight_decay: self.optim.weight_decay,
            batch_size: self.optim.batch_size,
            epochs,
            seed: run_seed,
            augmentation: self.optim.augmentation,
            eval: EvalConfig {
                every: self.eval.every,
                attack: selection,
                test_samples: self.eval.test_samples,
                train_samples: self.eval.train_samples,
            },
        };
        train.validate()?;
        crate::suite::AttackSuite::from_names(&self.eval.suite, run_seed)?;
        Ok(ResolvedConfig {
            data: self.data.clone(),
            train,
            suite: self.eval.suite.clone(),
            out: self.out.as_ref().map(|o| o.dir.clone()),
        })
    }
}
