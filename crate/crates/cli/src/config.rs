//! Experiment configuration: one TOML file per experiment, every field
//! defaulted, individual fields overridable from CLI flags. The fully
//! resolved config is re-emitted next to the results.

use distillab_core::awa::{AwaConfig, Granularity, ScheduleKind, ScheduleSpec};
use distillab_core::data::{
    corrupt, gen_speckled_shapes, read_idx, CorruptionSpec, Dataset, SplitTag,
};
use distillab_core::distill::{TrainConfig, TrainerKind};
use distillab_core::error::{Error, Result};
use distillab_core::losses::SofteningMode;
use distillab_core::model::{InputShape, ModelKind, ModelSpec};
use distillab_core::optim::AdamConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub trainer: TrainerKind,
    /// Row label in summaries; defaults to the trainer name.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub distill: DistillConfig,
}

fn default_epochs() -> usize {
    100
}
fn default_batch_size() -> usize {
    16
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/experiment")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub input: InputShape,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub use_batchnorm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::SmallCnn,
            input: InputShape::Image {
                channels: 1,
                height: 32,
                width: 32,
            },
            hidden: vec![8, 16],
            num_classes: 3,
            use_batchnorm: false,
        }
    }
}

impl ModelConfig {
    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            kind: self.kind,
            input: self.input,
            hidden: self.hidden.clone(),
            num_classes: self.num_classes,
            use_batchnorm: self.use_batchnorm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    SpeckledShapes,
    Idx,
}

/// Where the train/test splits come from. The corruption fields apply to
/// the train split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_train_per_class")]
    pub train_per_class: usize,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_looks")]
    pub looks: u32,
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    #[serde(default)]
    pub few_shot_per_class: Option<usize>,
    #[serde(default = "default_label_noise")]
    pub label_noise_rate: f64,
    #[serde(default = "default_data_seed")]
    pub noise_seed: u64,
    /// IDX file paths, required when `source = "idx"`.
    #[serde(default)]
    pub train_images: Option<PathBuf>,
    #[serde(default)]
    pub train_labels: Option<PathBuf>,
    #[serde(default)]
    pub test_images: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
}

fn default_classes() -> usize {
    3
}
fn default_train_per_class() -> usize {
    80
}
fn default_test_per_class() -> usize {
    200
}
fn default_image_size() -> usize {
    32
}
fn default_looks() -> u32 {
    2
}
fn default_data_seed() -> u64 {
    7
}
fn default_label_noise() -> f64 {
    0.1
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::SpeckledShapes,
            classes: default_classes(),
            train_per_class: default_train_per_class(),
            test_per_class: default_test_per_class(),
            image_size: default_image_size(),
            looks: default_looks(),
            data_seed: default_data_seed(),
            few_shot_per_class: None,
            label_noise_rate: default_label_noise(),
            noise_seed: default_data_seed(),
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
        }
    }
}

impl DataConfig {
    /// Materializes the train and test splits. Corruption (few-shot
    /// subsampling and label flips) touches only the train split.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        let (train_raw, test) = match self.source {
            DataSource::SpeckledShapes => {
                let train = gen_speckled_shapes(
                    self.classes,
                    self.train_per_class,
                    self.image_size,
                    self.looks,
                    self.data_seed,
                    SplitTag::Train,
                )?;
                let test = gen_speckled_shapes(
                    self.classes,
                    self.test_per_class,
                    self.image_size,
                    self.looks,
                    self.data_seed.wrapping_add(1),
                    SplitTag::Test,
                )?;
                (train, test)
            }
            DataSource::Idx => {
                let missing = || {
                    Error::config(
                        "idx source requires train/test image and label paths".to_string(),
                    )
                };
                let train = read_idx(
                    self.train_images.as_deref().ok_or_else(missing)?,
                    self.train_labels.as_deref().ok_or_else(missing)?,
                    SplitTag::Train,
                )?;
                let test = read_idx(
                    self.test_images.as_deref().ok_or_else(missing)?,
                    self.test_labels.as_deref().ok_or_else(missing)?,
                    SplitTag::Test,
                )?;
                (train, test)
            }
        };
        let train = corrupt(
            &train_raw,
            &CorruptionSpec {
                few_shot_per_class: self.few_shot_per_class,
                label_noise_rate: self.label_noise_rate,
                speckle_looks: Some(self.looks),
                seed: self.noise_seed,
            },
        )?;
        Ok((train, test))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub eps: f64,
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_lr_period")]
    pub lr_decay_period: usize,
}

fn default_lr0() -> f64 {
    2e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_lr_decay() -> f64 {
    0.2
}
fn default_lr_period() -> usize {
    7
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr0: default_lr0(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
            lr_decay: default_lr_decay(),
            lr_decay_period: default_lr_period(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_lsr_eps")]
    pub lsr_eps: f64,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub awa: AwaSection,
}

fn default_tau() -> f64 {
    3.0
}
fn default_lsr_eps() -> f64 {
    0.1
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            tau: default_tau(),
            lsr_eps: default_lsr_eps(),
            schedule: ScheduleConfig::default(),
            awa: AwaSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    #[serde(default = "default_fixed_value")]
    pub fixed_value: f64,
    #[serde(default)]
    pub warmup_epochs: usize,
    #[serde(default = "default_warmup_value")]
    pub warmup_value: f64,
}

fn default_fixed_value() -> f64 {
    0.5
}
fn default_warmup_value() -> f64 {
    0.5
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Fixed,
            fixed_value: default_fixed_value(),
            warmup_epochs: 0,
            warmup_value: default_warmup_value(),
        }
    }
}

impl ScheduleConfig {
    pub fn to_spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            kind: self.kind,
            fixed_value: self.fixed_value,
            warmup_epochs: self.warmup_epochs,
            warmup_value: self.warmup_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwaSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_alpha_tau")]
    pub alpha_tau: f64,
    #[serde(default = "default_granularity")]
    pub granularity: Granularity,
    #[serde(default = "default_softening")]
    pub softening: SofteningMode,
}

fn default_alpha() -> f64 {
    1.3
}
fn default_alpha_tau() -> f64 {
    1.0
}
fn default_granularity() -> Granularity {
    Granularity::PerSample
}
fn default_softening() -> SofteningMode {
    SofteningMode::Logits
}

impl Default for AwaSection {
    fn default() -> Self {
        AwaSection {
            alpha: default_alpha(),
            alpha_tau: default_alpha_tau(),
            granularity: default_granularity(),
            softening: default_softening(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("config encode: {e}")))
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.trainer.label().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must be nonempty".to_string()));
        }
        self.to_train_config(0).validate()?;
        self.model.to_spec().validate()?;
        Ok(())
    }

    /// Core training config for one seed.
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            adam: AdamConfig {
                lr0: self.optim.lr0,
                beta1: self.optim.beta1,
                beta2: self.optim.beta2,
                eps: self.optim.eps,
            },
            lr_decay: self.optim.lr_decay,
            lr_decay_period: self.optim.lr_decay_period,
            tau: self.distill.tau,
            lsr_eps: self.distill.lsr_eps,
            schedule: self.distill.schedule.to_spec(),
            awa: AwaConfig {
                alpha: self.distill.awa.alpha,
                alpha_tau: self.distill.awa.alpha_tau,
                granularity: self.distill.awa.granularity,
                softening: self.distill.awa.softening,
            },
            eval_batch: 64,
        }
    }
}

/// CLI-level field overrides, applied on top of the file (or defaults).
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub trainer: Option<TrainerKind>,
    pub label: Option<String>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub output_dir: Option<PathBuf>,
    pub lr0: Option<f64>,
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub alpha_tau: Option<f64>,
    pub lsr_eps: Option<f64>,
    pub schedule_kind: Option<ScheduleKind>,
    pub fixed_value: Option<f64>,
    pub warmup_epochs: Option<usize>,
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub label_noise_rate: Option<f64>,
    pub image_size: Option<usize>,
    pub looks: Option<u32>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($field:expr, $target:expr) => {
                if let Some(v) = &$field {
                    $target = v.clone();
                }
            };
        }
        set!(self.trainer, cfg.trainer);
        if self.label.is_some() {
            cfg.label = self.label.clone();
        }
        set!(self.epochs, cfg.epochs);
        set!(self.batch_size, cfg.batch_size);
        set!(self.seeds, cfg.seeds);
        set!(self.output_dir, cfg.output_dir);
        set!(self.lr0, cfg.optim.lr0);
        set!(self.tau, cfg.distill.tau);
        set!(self.alpha, cfg.distill.awa.alpha);
        set!(self.alpha_tau, cfg.distill.awa.alpha_tau);
        set!(self.lsr_eps, cfg.distill.lsr_eps);
        set!(self.schedule_kind, cfg.distill.schedule.kind);
        set!(self.fixed_value, cfg.distill.schedule.fixed_value);
        set!(self.warmup_epochs, cfg.distill.schedule.warmup_epochs);
        set!(self.train_per_class, cfg.data.train_per_class);
        set!(self.test_per_class, cfg.data.test_per_class);
        set!(self.label_noise_rate, cfg.data.label_noise_rate);
        set!(self.image_size, cfg.data.image_size);
        set!(self.looks, cfg.data.looks);
        if self.image_size.is_some() {
            // Keep the model input in lockstep with generated image size.
            if let InputShape::Image { channels, .. } = cfg.model.input {
                cfg.model.input = InputShape::Image {
                    channels,
                    height: cfg.data.image_size,
                    width: cfg.data.image_size,
                };
            }
        }
    }
}
