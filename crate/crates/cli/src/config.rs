use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mtaffect::losses::LossWeights;
use mtaffect::model::ModelConfig;
use mtaffect::trainer::{Precision, TrainConfig};
use serde::{Deserialize, Serialize};

/// Partial training settings; unset fields fall back to the schedule the
/// command uses (teacher or student).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub epoch_fraction: Option<f64>,
    pub precision: Option<Precision>,
}

impl TrainSection {
    pub fn resolve(&self, base: TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            epochs: self.epochs.unwrap_or(base.epochs),
            epoch_fraction: self.epoch_fraction.unwrap_or(base.epoch_fraction),
            precision: self.precision.unwrap_or(base.precision),
            seed,
            checkpoint_dir: None,
        }
    }

    fn filled(cfg: &TrainConfig) -> Self {
        Self {
            learning_rate: Some(cfg.learning_rate),
            batch_size: Some(cfg.batch_size),
            epochs: Some(cfg.epochs),
            epoch_fraction: Some(cfg.epoch_fraction),
            precision: Some(cfg.precision),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub n: usize,
    pub image_size: usize,
    pub noise: f64,
    pub mask_rate: f64,
    pub num_aus: usize,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            n: 70,
            image_size: 32,
            noise: 0.0,
            mask_rate: 0.0,
            num_aus: 12,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub au_threshold: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { au_threshold: 0.5 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompletionSection {
    /// Argmax classes and 0/1 AU decisions instead of soft outputs.
    pub hard: bool,
}

/// Input locations. Command-line flags of the same name take precedence.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub completed: Option<PathBuf>,
    pub teachers: Vec<PathBuf>,
    pub inputs: Vec<PathBuf>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Single source of randomness; overrides every per-section seed.
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub teacher: TrainSection,
    pub student: TrainSection,
    pub loss: LossWeights,
    pub data: DataSection,
    pub synthetic: SyntheticSection,
    pub eval: EvalSection,
    pub completion: CompletionSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Applies the global seed and fills both training schedules so the
    /// written config shows every value that was used.
    pub fn resolved(&self) -> Self {
        let mut r = self.clone();
        r.model.seed = self.seed;
        r.teacher = TrainSection::filled(&self.teacher_train());
        r.student = TrainSection::filled(&self.student_train());
        r
    }

    pub fn teacher_train(&self) -> TrainConfig {
        self.teacher.resolve(TrainConfig::default(), self.seed)
    }

    pub fn student_train(&self) -> TrainConfig {
        self.student.resolve(TrainConfig::student(), self.seed)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
