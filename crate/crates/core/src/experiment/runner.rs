//! Builds models and data from an [`ExperimentConfig`], runs the strategy and
//! writes the run directory.
//!
//! ```text
//! <root>/<run_id>/
//!   config.toml      effective configuration
//!   run.json         seed, version, dataset and backbone digests
//!   metrics.jsonl    one MetricsRecord per line
//!   summary.json     final accuracies, pass counts, wall-clock, CKA summary
//!   checkpoints/     last.ckpt every epoch, epoch-NNN.ckpt, final.ckpt
//!   cka/             before.csv, after.csv, delta.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{DatasetKind, ExperimentConfig, ModelChoice, Strategy, TeacherAdaptation};
use super::records::{MetricsLog, MetricsRecord};
use crate::cka::{cka_matrix, delta_cka, layer_features, mean_aligned_cka, CkaMatrix};
use crate::data::{load_image_folder, synth_dataset, Dataset, Splits};
use crate::error::{Error, Result};
use crate::head::ModelClass;
use crate::lora::AdapterBindings;
use crate::rng;
use crate::train::{
    bind_shared_adapters, block_mapping, distill_two_step, evaluate, parameter_digest, train_adapt, train_probing,
    train_slad, AdaptMode, EpochSummary, Model, PassCounts, RunMetrics, Split, TrainObserver,
};
use crate::vit::Encoder;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Derived seed for one component of a run.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    rng::stream(seed, label).next_u64()
}

/// Train/val/test splits described by the config.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let d = &cfg.dataset;
    match d.kind {
        DatasetKind::Synthetic => {
            let (train, test) = synth_dataset(&d.synthetic, d.seed)?;
            Splits::carve(train, test, d.val_fraction, d.seed)
        }
        DatasetKind::ImageFolder => {
            let path = d
                .train_path
                .as_deref()
                .ok_or_else(|| Error::Config("dataset.train_path: required for image-folder".into()))?;
            let train = load_image_folder(path, d.image_size)?;
            report_skipped(&train.skipped);
            let (train_set, test_set) = match &d.test_path {
                Some(p) => {
                    let test = load_image_folder(p, d.image_size)?;
                    report_skipped(&test.skipped);
                    if test.class_names != train.class_names {
                        return Err(Error::Data(format!(
                            "test classes {:?} differ from train classes {:?}",
                            test.class_names, train.class_names
                        )));
                    }
                    (train.dataset, test.dataset)
                }
                None => {
                    let (rest, test) = train.dataset.split_off(d.test_fraction, sub_seed(d.seed, "test-split"))?;
                    (rest, test)
                }
            };
            Splits::carve(train_set, test_set, d.val_fraction, d.seed)
        }
    }
}

fn report_skipped(skipped: &[PathBuf]) {
    if !skipped.is_empty() {
        log::warn!("{} unreadable image(s) skipped", skipped.len());
    }
}

/// The pre-trained stand-ins: a random student and, when aligned, a teacher
/// obtained by widening it.
pub fn build_backbones(cfg: &ExperimentConfig) -> Result<(Encoder, Encoder)> {
    let b = &cfg.backbone;
    let student = Encoder::new(cfg.student, sub_seed(b.seed, "student-backbone"))?;
    let teacher = if b.aligned {
        let placement = block_mapping(cfg.mapping, cfg.student.depth, cfg.teacher.depth)?;
        student.widen(cfg.teacher, placement.as_slice(), b.noise, sub_seed(b.seed, "teacher-backbone"))?
    } else {
        Encoder::new(cfg.teacher, sub_seed(b.seed, "teacher-backbone"))?
    };
    Ok((teacher, student))
}

/// Models as the strategy trains them, before training.
pub struct RunModels {
    pub teacher: Option<Model>,
    pub student: Option<Model>,
}

impl RunModels {
    fn named_parameters(&self) -> Vec<(String, crate::Tensor)> {
        let mut out = Vec::new();
        for (prefix, m) in [("teacher", &self.teacher), ("student", &self.student)] {
            if let Some(m) = m {
                out.extend(m.named_parameters().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
            }
        }
        out
    }
}

fn fresh_adapters(encoder: &Encoder, cfg: &ExperimentConfig, label: &str) -> Result<AdapterBindings> {
    AdapterBindings::all_blocks(encoder.config(), cfg.rank, sub_seed(cfg.seed, label))
}

pub fn build_models(cfg: &ExperimentConfig, num_classes: usize) -> Result<RunModels> {
    let (teacher_enc, student_enc) = build_backbones(cfg)?;
    let teacher = |with_adapters: bool| -> Result<Model> {
        let m = Model::new(
            teacher_enc.clone(),
            num_classes,
            ModelClass::Teacher,
            cfg.cls_blocks,
            sub_seed(cfg.seed, "teacher-head"),
        )?;
        if with_adapters {
            m.with_adapters(fresh_adapters(&teacher_enc, cfg, "teacher-adapters")?)
        } else {
            Ok(m)
        }
    };
    let student = |with_adapters: bool| -> Result<Model> {
        let m = Model::new(
            student_enc.clone(),
            num_classes,
            ModelClass::Student,
            cfg.cls_blocks,
            sub_seed(cfg.seed, "student-head"),
        )?;
        if with_adapters {
            m.with_adapters(fresh_adapters(&student_enc, cfg, "student-adapters")?)
        } else {
            Ok(m)
        }
    };
    let single = |with_adapters: bool| -> Result<RunModels> {
        Ok(match cfg.model {
            ModelChoice::Teacher => RunModels {
                teacher: Some(teacher(with_adapters)?),
                student: None,
            },
            ModelChoice::Student => RunModels {
                teacher: None,
                student: Some(student(with_adapters)?),
            },
        })
    };
    match cfg.strategy {
        Strategy::Probe | Strategy::Finetune => single(false),
        Strategy::Lora => single(true),
        Strategy::DistillTwoStep => {
            let adaptation = cfg
                .teacher_adaptation
                .ok_or_else(|| Error::Config("teacher_adaptation: required for distill-two-step".into()))?;
            Ok(RunModels {
                teacher: Some(teacher(adaptation == TeacherAdaptation::Lora)?),
                student: Some(student(cfg.student_mode == AdaptMode::Lora)?),
            })
        }
        Strategy::Slad => {
            let t = teacher(true)?;
            let mapping = block_mapping(cfg.mapping, cfg.student.depth, cfg.teacher.depth)?;
            let shared = bind_shared_adapters(&t, &student_enc, &mapping, cfg.slice_mode)?;
            let s = student(false)?.with_adapters(shared)?;
            Ok(RunModels {
                teacher: Some(t),
                student: Some(s),
            })
        }
    }
}

/// Teacher-vs-student CKA on a probe set. A single-model run is compared
/// with the untouched backbone of the other role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaSummary {
    pub probe_size: usize,
    pub before_mean_aligned: f64,
    pub after_mean_aligned: f64,
    /// `before − after`; positive when adaptation pulled the models apart.
    pub delta_mean_aligned: f64,
}

/// Evenly spaced samples of the test split, at most `size` of them.
pub fn probe_set(splits: &Splits, size: usize) -> Dataset {
    let n = splits.test.len();
    let take = size.min(n);
    let idx: Vec<usize> = (0..take).map(|i| i * n / take).collect();
    splits.test.subset(&idx)
}

fn cka_pair(cfg: &ExperimentConfig, teacher: &Model, student: &Model, probe: &Dataset) -> Result<CkaMatrix> {
    let bs = cfg.train.eval_batch_size;
    let t = layer_features(teacher, probe, cfg.cka.token, bs, "teacher")?;
    let s = layer_features(student, probe, cfg.cka.token, bs, "student")?;
    cka_matrix(&t, &s, &format!("test/{}/{}", probe.len(), probe.digest()))
}

/// Counterparts used for CKA: the trained models, with the other role's
/// plain backbone standing in when only one model is trained.
fn cka_models(cfg: &ExperimentConfig, models: &RunModels, num_classes: usize) -> Result<(Model, Model)> {
    let (teacher_enc, student_enc) = build_backbones(cfg)?;
    let plain = |enc: Encoder, class| Model::new(enc, num_classes, class, cfg.cls_blocks, 0);
    let t = match &models.teacher {
        Some(m) => m.clone(),
        None => plain(teacher_enc, ModelClass::Teacher)?,
    };
    let s = match &models.student {
        Some(m) => m.clone(),
        None => plain(student_enc, ModelClass::Student)?,
    };
    Ok((t, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub run_id: String,
    pub strategy: Strategy,
    pub method: String,
    pub seed: u64,
    pub version: String,
    pub dataset_digest: SplitDigests,
    pub teacher_backbone_digest: String,
    pub student_backbone_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDigests {
    pub train: String,
    pub val: String,
    pub test: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub method: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub dataset: String,
    pub teacher: String,
    pub student: String,
    pub temperature: Option<f64>,
    /// `(α_KL, α_t, α_s)` for distillation runs.
    pub weights: Option<[f64; 3]>,
    pub epochs: usize,
    pub teacher_accuracy: Option<f64>,
    pub student_accuracy: Option<f64>,
    pub passes: PassCounts,
    pub wall_clock_secs: f64,
    pub cka: Option<CkaSummary>,
    /// Encoder digests after training, to tell frozen from trained backbones.
    pub teacher_encoder_digest: Option<String>,
    pub student_encoder_digest: Option<String>,
}

impl RunSummary {
    pub fn load(run_dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(run_dir.join("summary.json"))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub summary: RunSummary,
    pub metrics: RunMetrics,
}

pub fn method_name(cfg: &ExperimentConfig) -> String {
    match (cfg.strategy, cfg.teacher_adaptation) {
        (Strategy::DistillTwoStep, Some(t)) => format!("two-step-{}", t.name()),
        (s, _) => s.name().to_string(),
    }
}

fn encoder_label(c: &crate::vit::EncoderConfig) -> String {
    format!("vit-d{}x{}", c.dim, c.depth)
}

fn dataset_label(cfg: &ExperimentConfig) -> String {
    match cfg.dataset.kind {
        DatasetKind::Synthetic => "synthetic".into(),
        DatasetKind::ImageFolder => cfg
            .dataset
            .train_path
            .as_ref()
            .and_then(|p| p.parent().unwrap_or(p).file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image-folder".into()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Persists every epoch: metrics records and the last-good checkpoint.
struct RunRecorder<'a> {
    run_id: String,
    log: MetricsLog,
    models: &'a RunModels,
    checkpoint_dir: PathBuf,
    checkpoint_every: usize,
    epoch_offset: usize,
    last_epoch: usize,
    pass_offset: PassCounts,
}

impl RunRecorder<'_> {
    fn save(&self, file: &str, stage: &str, epoch: usize) -> Result<()> {
        let meta = serde_json::json!({ "run_id": self.run_id, "stage": stage, "epoch": epoch });
        Checkpoint::from_tensors(meta, &self.models.named_parameters()).save(&self.checkpoint_dir.join(file))
    }

    /// Later stages continue the epoch numbering and pass counts.
    fn next_stage(&mut self, finished: &RunMetrics) {
        self.epoch_offset += finished.epochs.len();
        self.pass_offset += finished.passes;
    }
}

impl TrainObserver for RunRecorder<'_> {
    fn on_epoch(&mut self, summary: &EpochSummary) -> Result<()> {
        let mut s = summary.clone();
        s.epoch += self.epoch_offset;
        s.passes += self.pass_offset;
        for r in MetricsRecord::from_summary(&self.run_id, &s) {
            self.log.append(&r)?;
        }
        self.last_epoch = s.epoch;
        self.save("last.ckpt", &s.stage, s.epoch)?;
        if self.checkpoint_every > 0 && (s.epoch + 1).is_multiple_of(self.checkpoint_every) {
            self.save(&format!("epoch-{:03}.ckpt", s.epoch), &s.stage, s.epoch)?;
        }
        Ok(())
    }
}

/// Run `cfg` into `<output root>/<run id>`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let run_dir = cfg.output_root().join(cfg.run_id());
    run_in(cfg, &run_dir)
}

/// Run `cfg` into `run_dir`, replacing earlier outputs there.
pub fn run_in(cfg: &ExperimentConfig, run_dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.train.seed = cfg.seed;
    let splits = load_splits(&cfg)?;
    let num_classes = splits.num_classes();
    let models = build_models(&cfg, num_classes)?;
    let (teacher_enc, student_enc) = build_backbones(&cfg)?;

    let checkpoint_dir = run_dir.join("checkpoints");
    fs::create_dir_all(&checkpoint_dir)?;
    fs::write(run_dir.join("config.toml"), cfg.to_toml()?)?;
    let run_id = cfg.run_id();
    let method = method_name(&cfg);
    let info = RunInfo {
        run_id: run_id.clone(),
        strategy: cfg.strategy,
        method: method.clone(),
        seed: cfg.seed,
        version: VERSION.to_string(),
        dataset_digest: SplitDigests {
            train: splits.train.digest(),
            val: splits.val.digest(),
            test: splits.test.digest(),
        },
        teacher_backbone_digest: parameter_digest(&teacher_enc.parameters()),
        student_backbone_digest: parameter_digest(&student_enc.parameters()),
    };
    write_json(&run_dir.join("run.json"), &info)?;

    let probe = probe_set(&splits, cfg.cka.probe_size);
    let before = if cfg.cka.enabled {
        let (t, s) = cka_models(&cfg, &models, num_classes)?;
        Some(cka_pair(&cfg, &t, &s, &probe)?)
    } else {
        None
    };

    let mut recorder = RunRecorder {
        run_id: run_id.clone(),
        log: MetricsLog::create(&run_dir.join("metrics.jsonl"))?,
        models: &models,
        checkpoint_dir: checkpoint_dir.clone(),
        checkpoint_every: cfg.checkpoint_every,
        epoch_offset: 0,
        last_epoch: 0,
        pass_offset: PassCounts::default(),
    };
    let metrics = train_strategy(&cfg, &models, &splits, &mut recorder)?;

    // final test scores
    let mut teacher_accuracy = None;
    let mut student_accuracy = None;
    let last_epoch = recorder.last_epoch;
    let last_stage = metrics.epochs.last().map(|e| e.stage.clone()).unwrap_or_default();
    for (role, model) in [(ModelClass::Teacher, &models.teacher), (ModelClass::Student, &models.student)] {
        let Some(model) = model else { continue };
        let (loss, accuracy) = evaluate(model, &splits.test, cfg.train.eval_batch_size)?;
        match role {
            ModelClass::Teacher => teacher_accuracy = Some(accuracy),
            ModelClass::Student => student_accuracy = Some(accuracy),
        }
        recorder.log.append(&MetricsRecord {
            run_id: run_id.clone(),
            stage: last_stage.clone(),
            epoch: last_epoch,
            split: Split::Test,
            role,
            loss,
            accuracy,
            forward_passes: metrics.passes.forward,
            backward_passes: metrics.passes.backward,
        })?;
    }
    recorder.save("final.ckpt", &last_stage, last_epoch)?;

    let cka = match before {
        Some(before) => {
            let (t, s) = cka_models(&cfg, &models, num_classes)?;
            let after = cka_pair(&cfg, &t, &s, &probe)?;
            let delta = delta_cka(&before, &after)?;
            let cka_dir = run_dir.join("cka");
            fs::create_dir_all(&cka_dir)?;
            fs::write(cka_dir.join("before.csv"), before.to_csv())?;
            fs::write(cka_dir.join("after.csv"), after.to_csv())?;
            fs::write(cka_dir.join("delta.csv"), delta.to_csv())?;
            let mapping = block_mapping(cfg.mapping, cfg.student.depth, cfg.teacher.depth)?;
            let b = mean_aligned_cka(&before, &mapping)?;
            let a = mean_aligned_cka(&after, &mapping)?;
            Some(CkaSummary {
                probe_size: probe.len(),
                before_mean_aligned: b,
                after_mean_aligned: a,
                delta_mean_aligned: b - a,
            })
        }
        None => None,
    };

    let distill = matches!(cfg.strategy, Strategy::DistillTwoStep | Strategy::Slad).then(|| cfg.distill_config());
    let summary = RunSummary {
        run_id,
        method,
        strategy: cfg.strategy,
        seed: cfg.seed,
        dataset: dataset_label(&cfg),
        teacher: encoder_label(&cfg.teacher),
        student: encoder_label(&cfg.student),
        temperature: distill.map(|d| d.temperature),
        weights: distill.map(|d| [d.alpha_kl, d.alpha_t, d.alpha_s]),
        epochs: metrics.epochs.len(),
        teacher_accuracy,
        student_accuracy,
        passes: metrics.passes,
        wall_clock_secs: metrics.wall_clock_secs,
        cka,
        teacher_encoder_digest: models.teacher.as_ref().map(|m| parameter_digest(&m.encoder.parameters())),
        student_encoder_digest: models.student.as_ref().map(|m| parameter_digest(&m.encoder.parameters())),
    };
    write_json(&run_dir.join("summary.json"), &summary)?;
    Ok(RunOutcome {
        run_dir: run_dir.to_path_buf(),
        summary,
        metrics,
    })
}

fn train_strategy(
    cfg: &ExperimentConfig,
    models: &RunModels,
    splits: &Splits,
    recorder: &mut RunRecorder<'_>,
) -> Result<RunMetrics> {
    let single = || -> (&Model, ModelClass) {
        match (&models.teacher, &models.student) {
            (Some(t), _) => (t, ModelClass::Teacher),
            (None, Some(s)) => (s, ModelClass::Student),
            (None, None) => unreachable!("a run always builds one model"),
        }
    };
    let train = &cfg.train;
    match cfg.strategy {
        Strategy::Probe => {
            let (m, role) = single();
            train_probing(m, role, splits, train, recorder)
        }
        Strategy::Finetune => {
            let (m, role) = single();
            train_adapt(m, role, AdaptMode::Full, splits, train, recorder)
        }
        Strategy::Lora => {
            let (m, role) = single();
            train_adapt(m, role, AdaptMode::Lora, splits, train, recorder)
        }
        Strategy::DistillTwoStep => {
            let (Some(teacher), Some(student)) = (&models.teacher, &models.student) else {
                unreachable!("two-step builds both models")
            };
            let teacher_cfg = crate::train::TrainConfig {
                epochs: cfg.teacher_epochs(),
                ..train.clone()
            };
            let first = match cfg.teacher_adaptation {
                Some(TeacherAdaptation::Probe) => {
                    train_probing(teacher, ModelClass::Teacher, splits, &teacher_cfg, recorder)?
                }
                Some(TeacherAdaptation::Finetune) => {
                    train_adapt(teacher, ModelClass::Teacher, AdaptMode::Full, splits, &teacher_cfg, recorder)?
                }
                Some(TeacherAdaptation::Lora) => {
                    train_adapt(teacher, ModelClass::Teacher, AdaptMode::Lora, splits, &teacher_cfg, recorder)?
                }
                None => return Err(Error::Config("teacher_adaptation: required for distill-two-step".into())),
            };
            teacher.encoder.set_trainable(false);
            recorder.next_stage(&first);
            let student_cfg = crate::train::TrainConfig {
                epochs: cfg.distill_epochs(),
                ..train.clone()
            };
            let second = distill_two_step(
                teacher,
                student,
                cfg.student_mode,
                splits,
                &cfg.distill_config(),
                &student_cfg,
                recorder,
            )?;
            Ok(first.chain(second))
        }
        Strategy::Slad => {
            let (Some(teacher), Some(student)) = (&models.teacher, &models.student) else {
                unreachable!("joint training builds both models")
            };
            let mapping = block_mapping(cfg.mapping, cfg.student.depth, cfg.teacher.depth)?;
            train_slad(teacher, student, &mapping, splits, &cfg.distill_config(), train, recorder)
        }
    }
}

/// Load the final (or last-good) checkpoint of a run into freshly built
/// models.
pub fn restore_models(run_dir: &Path, file: &str) -> Result<(ExperimentConfig, RunModels, Splits)> {
    let cfg = ExperimentConfig::from_toml(&fs::read_to_string(run_dir.join("config.toml"))?)?;
    let splits = load_splits(&cfg)?;
    let models = build_models(&cfg, splits.num_classes())?;
    Checkpoint::load(&run_dir.join("checkpoints").join(file))?.restore_into(&models.named_parameters())?;
    Ok((cfg, models, splits))
}

/// Recompute the CKA matrices of a finished run: backbones before
/// adaptation against the restored models after it.
pub fn recompute_cka(run_dir: &Path) -> Result<(CkaMatrix, CkaMatrix, CkaSummary)> {
    let (cfg, models, splits) = restore_models(run_dir, "final.ckpt")?;
    let num_classes = splits.num_classes();
    let probe = probe_set(&splits, cfg.cka.probe_size);
    let initial = build_models(&cfg, num_classes)?;
    let (t0, s0) = cka_models(&cfg, &initial, num_classes)?;
    let before = cka_pair(&cfg, &t0, &s0, &probe)?;
    let (t1, s1) = cka_models(&cfg, &models, num_classes)?;
    let after = cka_pair(&cfg, &t1, &s1, &probe)?;
    let mapping = block_mapping(cfg.mapping, cfg.student.depth, cfg.teacher.depth)?;
    let b = mean_aligned_cka(&before, &mapping)?;
    let a = mean_aligned_cka(&after, &mapping)?;
    let summary = CkaSummary {
        probe_size: probe.len(),
        before_mean_aligned: b,
        after_mean_aligned: a,
        delta_mean_aligned: b - a,
    };
    Ok((before, after, summary))
}
