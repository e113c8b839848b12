//! TOML experiment configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cka::FeatureToken;
use crate::data::SynthParams;
use crate::error::{Error, Result};
use crate::lora::{SliceMode, DEFAULT_RANK};
use crate::losses::DistillConfig;
use crate::train::{AdaptMode, MappingKind, TrainConfig, DEFAULT_CLS_BLOCKS};
use crate::vit::EncoderConfig;

/// Environment variable naming the root directory for run outputs.
pub const OUTPUT_ENV: &str = "SLAD_OUTPUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Probe,
    Finetune,
    Lora,
    DistillTwoStep,
    Slad,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Probe => "probe",
            Strategy::Finetune => "finetune",
            Strategy::Lora => "lora",
            Strategy::DistillTwoStep => "distill-two-step",
            Strategy::Slad => "slad",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probe" => Ok(Strategy::Probe),
            "finetune" => Ok(Strategy::Finetune),
            "lora" => Ok(Strategy::Lora),
            "distill-two-step" => Ok(Strategy::DistillTwoStep),
            "slad" => Ok(Strategy::Slad),
            other => Err(Error::Config(format!(
                "strategy: unknown value '{other}' (probe, finetune, lora, distill-two-step, slad)"
            ))),
        }
    }
}

/// How the teacher is adapted before distillation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherAdaptation {
    Probe,
    Finetune,
    Lora,
}

impl TeacherAdaptation {
    pub fn name(&self) -> &'static str {
        match self {
            TeacherAdaptation::Probe => "probe",
            TeacherAdaptation::Finetune => "finetune",
            TeacherAdaptation::Lora => "lora",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    #[default]
    Teacher,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    #[default]
    Synthetic,
    ImageFolder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Fraction of the training data held out for validation.
    pub val_fraction: f64,
    /// Seed of the synthetic generator and of the split carving. Fixed
    /// across runs so that different run seeds see the same data.
    pub seed: u64,
    pub synthetic: SynthParams,
    /// Training images, `root/<class>/<file>`.
    pub train_path: Option<PathBuf>,
    /// Test images in the same layout; without it `test_fraction` of the
    /// training images are held out instead.
    pub test_path: Option<PathBuf>,
    pub test_fraction: f64,
    pub image_size: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Synthetic,
            val_fraction: 0.1,
            seed: 0,
            synthetic: SynthParams::default(),
            train_path: None,
            test_path: None,
            test_fraction: 0.2,
            image_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct CkaConfig {
    pub enabled: bool,
    pub probe_size: usize,
    pub token: FeatureToken,
}

impl Default for CkaConfig {
    fn default() -> Self {
        CkaConfig {
            enabled: true,
            probe_size: 256,
            token: FeatureToken::Cls,
        }
    }
}

/// Backbone pair standing in for pre-trained encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    /// Build the teacher by widening the student and perturbing it, so the
    /// two start with aligned representations. Otherwise both are drawn
    /// independently.
    pub aligned: bool,
    /// Relative scale of the perturbation added to the widened teacher.
    pub noise: f64,
    /// Backbone weights do not depend on the run seed.
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            aligned: true,
            noise: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    pub seed: u64,
    #[serde(default)]
    pub run_name: Option<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Model trained by the single-model strategies.
    #[serde(default)]
    pub model: ModelChoice,
    /// Teacher stage of `distill-two-step`.
    #[serde(default)]
    pub teacher_adaptation: Option<TeacherAdaptation>,
    /// Teacher-stage epochs of `distill-two-step`; `train.epochs` when absent.
    #[serde(default)]
    pub teacher_epochs: Option<usize>,
    /// Distillation-stage epochs of `distill-two-step`; see
    /// [`ExperimentConfig::distill_epochs`].
    #[serde(default)]
    pub distill_epochs: Option<usize>,
    #[serde(default = "default_student_mode")]
    pub student_mode: AdaptMode,
    #[serde(default)]
    pub mapping: MappingKind,
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default)]
    pub slice_mode: SliceMode,
    #[serde(default = "default_cls_blocks")]
    pub cls_blocks: usize,
    /// Save checkpoints every this many epochs (0: only at the end).
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default = "EncoderConfig::teacher")]
    pub teacher: EncoderConfig,
    #[serde(default = "EncoderConfig::student")]
    pub student: EncoderConfig,
    #[serde(default)]
    pub backbone: BackboneConfig,
    /// Distillation weights; the strategy's defaults when absent.
    #[serde(default)]
    pub distill: Option<DistillConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub cka: CkaConfig,
}

fn default_student_mode() -> AdaptMode {
    AdaptMode::Lora
}

fn default_rank() -> usize {
    DEFAULT_RANK
}

fn default_cls_blocks() -> usize {
    DEFAULT_CLS_BLOCKS
}

fn default_checkpoint_every() -> usize {
    1
}

impl ExperimentConfig {
    /// Defaults for `strategy` with the given seed.
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        ExperimentConfig {
            strategy,
            seed,
            run_name: None,
            output_dir: None,
            model: ModelChoice::Teacher,
            teacher_adaptation: (strategy == Strategy::DistillTwoStep).then_some(TeacherAdaptation::Lora),
            teacher_epochs: None,
            distill_epochs: None,
            student_mode: default_student_mode(),
            mapping: MappingKind::Even,
            rank: DEFAULT_RANK,
            slice_mode: SliceMode::default(),
            cls_blocks: DEFAULT_CLS_BLOCKS,
            checkpoint_every: default_checkpoint_every(),
            teacher: EncoderConfig::teacher(),
            student: EncoderConfig::student(),
            backbone: BackboneConfig::default(),
            distill: None,
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            dataset: DatasetConfig::default(),
            cka: CkaConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    /// Distillation weights in effect: the configured ones, else `T = 2`
    /// with `(0.5, 0.5)` for two-step and `(1, 1, 1)` for joint training.
    pub fn distill_config(&self) -> DistillConfig {
        self.distill.unwrap_or(match self.strategy {
            Strategy::Slad => DistillConfig::joint(),
            _ => DistillConfig::two_step(),
        })
    }

    pub fn teacher_epochs(&self) -> usize {
        self.teacher_epochs.unwrap_or(self.train.epochs)
    }

    /// `train.epochs`, stretched by 80/30 (rounded) after a probed teacher,
    /// whose distillation runs longer.
    pub fn distill_epochs(&self) -> usize {
        self.distill_epochs.unwrap_or(match self.teacher_adaptation {
            Some(TeacherAdaptation::Probe) => (self.train.epochs * 80 + 15) / 30,
            _ => self.train.epochs,
        })
    }

    pub fn run_id(&self) -> String {
        self.run_name.clone().unwrap_or_else(|| {
            let method = match (self.strategy, self.teacher_adaptation) {
                (Strategy::DistillTwoStep, Some(t)) => format!("two-step-{}", t.name()),
                (s, _) => s.name().to_string(),
            };
            format!("{method}-seed{}", self.seed)
        })
    }

    /// Output root: `$SLAD_OUTPUT`, else `output_dir`, else `runs`.
    pub fn output_root(&self) -> PathBuf {
        std::env::var_os(OUTPUT_ENV)
            .map(PathBuf::from)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    /// Field-level validation; messages name the offending key.
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: Error| Error::Config(format!("{name}: {e}"));
        self.teacher.validate().map_err(|e| field("teacher", e))?;
        self.student.validate().map_err(|e| field("student", e))?;
        self.train.validate().map_err(|e| field("train", e))?;
        self.distill_config().validate().map_err(|e| field("distill", e))?;
        if self.rank == 0 || self.rank > self.student.dim.min(self.teacher.dim) {
            return Err(Error::Config(format!(
                "rank: {} outside [1, {}]",
                self.rank,
                self.student.dim.min(self.teacher.dim)
            )));
        }
        if self.cls_blocks == 0 || self.cls_blocks > self.student.depth.min(self.teacher.depth) {
            return Err(Error::Config(format!("cls_blocks: {} exceeds encoder depth", self.cls_blocks)));
        }
        if self.student.depth > self.teacher.depth {
            return Err(Error::Config(format!(
                "student.depth: {} exceeds teacher.depth {}",
                self.student.depth, self.teacher.depth
            )));
        }
        if self.student.image_size != self.teacher.image_size {
            return Err(Error::Config("student.image_size: must equal teacher.image_size".into()));
        }
        match self.strategy {
            Strategy::DistillTwoStep if self.teacher_adaptation.is_none() => {
                return Err(Error::Config(
                    "teacher_adaptation: required for distill-two-step (probe, finetune, lora)".into(),
                ));
            }
            Strategy::DistillTwoStep | Strategy::Slad => {}
            _ if self.teacher_adaptation.is_some() => {
                return Err(Error::Config(format!(
                    "teacher_adaptation: only meaningful for distill-two-step, not {}",
                    self.strategy
                )));
            }
            _ => {}
        }
        if self.teacher_epochs == Some(0) {
            return Err(Error::Config("teacher_epochs: must be positive".into()));
        }
        if self.distill_epochs == Some(0) {
            return Err(Error::Config("distill_epochs: must be positive".into()));
        }
        let d = &self.dataset;
        if !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
            return Err(Error::Config(format!("dataset.val_fraction: {} outside (0, 1)", d.val_fraction)));
        }
        match d.kind {
            DatasetKind::Synthetic => {
                if d.synthetic.image_size != self.teacher.image_size {
                    return Err(Error::Config(format!(
                        "dataset.synthetic.image_size: {} differs from encoder image_size {}",
                        d.synthetic.image_size, self.teacher.image_size
                    )));
                }
                if d.synthetic.classes < 2 {
                    return Err(Error::Config("dataset.synthetic.classes: need at least 2".into()));
                }
            }
            DatasetKind::ImageFolder => {
                if d.train_path.is_none() {
                    return Err(Error::Config("dataset.train_path: required for image-folder".into()));
                }
                if d.test_path.is_none() && !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
                    return Err(Error::Config(format!(
                        "dataset.test_fraction: {} outside (0, 1)",
                        d.test_fraction
                    )));
                }
                if d.image_size != self.teacher.image_size {
                    return Err(Error::Config(format!(
                        "dataset.image_size: {} differs from encoder image_size {}",
                        d.image_size, self.teacher.image_size
                    )));
                }
            }
        }
        if self.teacher.channels != 3 || self.student.channels != 3 {
            return Err(Error::Config("teacher.channels / student.channels: datasets are RGB, use 3".into()));
        }
        if self.backbone.aligned && !self.teacher.dim.is_multiple_of(self.student.dim) {
            return Err(Error::Config(
                "backbone.aligned: teacher.dim must be a multiple of student.dim".into(),
            ));
        }
        if self.cka.enabled && self.cka.probe_size < 2 {
            return Err(Error::Config("cka.probe_size: need at least 2 samples".into()));
        }
        Ok(())
    }
}
