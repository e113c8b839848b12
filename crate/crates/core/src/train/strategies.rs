//! Probing, adaptation, two-step distillation and joint shared-adapter
//! training.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mapping::BlockMapping;
use super::metrics::{EpochSummary, PassCounts, RunMetrics, Score, Split, TrainObserver};
use super::optim::{AdamW, AdamWConfig, ParamGroup};
use crate::data::{BatchPlan, Dataset, Splits};
use crate::error::{Error, Result};
use crate::head::{MlpHead, ModelClass};
use crate::lora::{AdapterBindings, AdapterRef, SliceMode};
use crate::losses::{cross_entropy, kd_loss, slad_loss, DistillConfig};
use crate::tensor::{backward, kernels, NoGradGuard, Tensor};
use crate::vit::{cls_of, Encoder, LAYER_NORM_EPS};

/// Number of trailing blocks whose CLS tokens feed the head.
pub const DEFAULT_CLS_BLOCKS: usize = 3;

/// Encoder, optional QKV adapters and a prediction head.
#[derive(Clone)]
pub struct Model {
    pub encoder: Encoder,
    pub adapters: Option<AdapterBindings>,
    pub head: MlpHead,
    pub cls_blocks: usize,
}

impl Model {
    /// Head sized for `cls_blocks` concatenated CLS tokens.
    pub fn new(encoder: Encoder, num_classes: usize, class: ModelClass, cls_blocks: usize, seed: u64) -> Result<Self> {
        let depth = encoder.config().depth;
        if cls_blocks == 0 || cls_blocks > depth {
            return Err(Error::Config(format!(
                "cannot feed the head from {cls_blocks} of {depth} blocks"
            )));
        }
        let head = MlpHead::new(cls_blocks * encoder.config().dim, num_classes, class, seed)?;
        Ok(Model {
            encoder,
            adapters: None,
            head,
            cls_blocks,
        })
    }

    pub fn with_adapters(mut self, adapters: AdapterBindings) -> Result<Self> {
        adapters.check_against(self.encoder.config())?;
        self.adapters = Some(adapters);
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.head.n_out()
    }

    /// Token tensors after every block.
    pub fn block_tokens(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.encoder.forward(images, self.adapters.as_ref())?.blocks)
    }

    /// Final-norm CLS of the last `cls_blocks` blocks, concatenated.
    pub fn features(&self, images: &Tensor) -> Result<Tensor> {
        let blocks = self.block_tokens(images)?;
        let parts = blocks[blocks.len() - self.cls_blocks..]
            .iter()
            .map(|t| cls_of(t)?.layer_norm(&self.encoder.norm_weight, &self.encoder.norm_bias, LAYER_NORM_EPS))
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat(&parts, 1)
    }

    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        self.head.forward(&self.features(images)?)
    }

    /// Encoder, owned adapter factors and head, with dotted names.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .encoder
            .named_parameters()
            .into_iter()
            .map(|(n, t)| (format!("encoder.{n}"), t))
            .collect();
        if let Some(a) = &self.adapters {
            for (blk, adapter) in a.owned() {
                out.push((format!("adapters.{blk}.a"), adapter.a().clone()));
                out.push((format!("adapters.{blk}.b"), adapter.b().clone()));
            }
        }
        out.extend(
            self.head
                .named_parameters()
                .into_iter()
                .map(|(n, t)| (format!("head.{n}"), t)),
        );
        out
    }

    fn adapter_parameters(&self) -> Vec<Tensor> {
        self.adapters.as_ref().map(AdapterBindings::parameters).unwrap_or_default()
    }

    fn set_adapters_trainable(&self, flag: bool) -> Result<()> {
        for p in self.adapter_parameters() {
            p.set_requires_grad(flag)?;
        }
        Ok(())
    }

    fn set_head_trainable(&self, flag: bool) -> Result<()> {
        for p in self.head.parameters() {
            p.set_requires_grad(flag)?;
        }
        Ok(())
    }
}

/// SHA-256 over the bits of the given tensors, in order.
pub fn parameter_digest(params: &[Tensor]) -> String {
    let mut h = Sha256::new();
    for p in params {
        for v in p.data().iter() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptMode {
    /// Every encoder weight is trained.
    Full,
    /// Base weights frozen; adapters and head trained.
    Lora,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Base learning rate for heads and adapters.
    pub lr: f64,
    /// Base learning rate for encoder weights in full fine-tuning.
    pub lr_encoder: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Random horizontal flips on the training split.
    pub augment: bool,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            lr_encoder: 1e-4,
            weight_decay: 0.05,
            seed: 0,
            augment: true,
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("epochs and batch sizes must be positive".into()));
        }
        for (name, v) in [("lr", self.lr), ("lr_encoder", self.lr_encoder), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Mean cross-entropy and accuracy over `data`, with gradients off.
pub fn evaluate(model: &Model, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    let _guard = NoGradGuard::new();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for b in BatchPlan::sequential(data.len(), batch_size).batches {
        let (x, y) = data.batch(&b.indices, &b.flips)?;
        let logits = model.logits(&x)?;
        loss += cross_entropy(&logits, &y)?.item() * y.len() as f64;
        correct += count_correct(&logits, &y);
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks_exact(c)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Summed (not averaged) cross-entropy of `logits` read as plain values.
fn summed_ce(logits: &Tensor, labels: &[usize]) -> f64 {
    let c = logits.shape()[1];
    let (logp, _) = kernels::log_softmax_rows(&logits.data(), c, 1.0);
    logp.chunks_exact(c).zip(labels).map(|(row, &y)| -row[y]).sum()
}

struct Step {
    loss: Tensor,
    logits: Vec<(ModelClass, Tensor)>,
    passes: PassCounts,
}

struct Tally {
    role: ModelClass,
    loss: f64,
    correct: usize,
    seen: usize,
}

#[allow(clippy::too_many_arguments)]
fn train_loop<F>(
    stage: &str,
    cfg: &TrainConfig,
    data: &Splits,
    groups: Vec<ParamGroup>,
    evaluated: &[(ModelClass, &Model)],
    observer: &mut dyn TrainObserver,
    mut step: F,
) -> Result<RunMetrics>
where
    F: FnMut(&Tensor, &[usize]) -> Result<Step>,
{
    cfg.validate()?;
    let batches_per_epoch = data.train.len().div_ceil(cfg.batch_size);
    let mut opt = AdamW::new(groups, AdamWConfig::default(), cfg.epochs * batches_per_epoch)?;
    let mut metrics = RunMetrics::default();
    for epoch in 0..cfg.epochs {
        let plan = BatchPlan::for_epoch(data.train.len(), cfg.batch_size, cfg.seed, epoch, cfg.augment)?;
        let mut tallies: Vec<Tally> = evaluated
            .iter()
            .map(|(role, _)| Tally {
                role: *role,
                loss: 0.0,
                correct: 0,
                seen: 0,
            })
            .collect();
        let started = Instant::now();
        for batch in &plan.batches {
            let (x, y) = data.train.batch(&batch.indices, &batch.flips)?;
            opt.zero_grad();
            let out = step(&x, &y)?;
            let value = out.loss.item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{stage} loss is {value} at epoch {epoch}, step {}",
                    opt.global_step()
                )));
            }
            backward(&out.loss)?;
            opt.step()?;
            metrics.passes += out.passes;
            for (role, logits) in &out.logits {
                if let Some(t) = tallies.iter_mut().find(|t| t.role == *role) {
                    t.loss += summed_ce(logits, &y);
                    t.correct += count_correct(logits, &y);
                    t.seen += y.len();
                }
            }
        }
        metrics.wall_clock_secs += started.elapsed().as_secs_f64();

        let mut scores = Vec::with_capacity(2 * evaluated.len());
        for ((role, model), t) in evaluated.iter().zip(&tallies) {
            let seen = t.seen.max(1) as f64;
            scores.push(Score {
                role: *role,
                split: Split::Train,
                loss: t.loss / seen,
                accuracy: t.correct as f64 / seen,
            });
            let (loss, accuracy) = evaluate(model, &data.val, cfg.eval_batch_size)?;
            scores.push(Score {
                role: *role,
                split: Split::Val,
                loss,
                accuracy,
            });
        }
        let summary = EpochSummary {
            stage: stage.to_string(),
            epoch,
            scores,
            passes: metrics.passes,
        };
        log::info!("{stage} epoch {epoch}: {:?}", summary.scores);
        observer.on_epoch(&summary)?;
        metrics.epochs.push(summary);
    }
    Ok(metrics)
}

fn batch_passes(b: usize, forward_models: u64, backward_models: u64) -> PassCounts {
    PassCounts {
        forward: forward_models * b as u64,
        backward: backward_models * b as u64,
    }
}

/// Train the head on frozen encoder features. Adapters, if bound, are
/// frozen too.
pub fn train_probing(
    model: &Model,
    role: ModelClass,
    data: &Splits,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<RunMetrics> {
    check_classes(model, data)?;
    model.encoder.set_trainable(false);
    model.set_adapters_trainable(false)?;
    model.set_head_trainable(true)?;
    let groups = vec![ParamGroup::new("head", model.head.parameters(), cfg.lr, cfg.weight_decay)];
    train_loop("probe", cfg, data, groups, &[(role, model)], observer, |x, y| {
        let logits = model.logits(x)?;
        Ok(Step {
            loss: cross_entropy(&logits, y)?,
            passes: batch_passes(y.len(), 1, 1),
            logits: vec![(role, logits)],
        })
    })
}

/// Fine-tune the whole encoder (`Full`) or only bound adapters (`Lora`),
/// together with the head.
pub fn train_adapt(
    model: &Model,
    role: ModelClass,
    mode: AdaptMode,
    data: &Splits,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<RunMetrics> {
    check_classes(model, data)?;
    let groups = adapt_groups(model, mode, cfg)?;
    let stage = match mode {
        AdaptMode::Full => "finetune",
        AdaptMode::Lora => "lora",
    };
    train_loop(stage, cfg, data, groups, &[(role, model)], observer, |x, y| {
        let logits = model.logits(x)?;
        Ok(Step {
            loss: cross_entropy(&logits, y)?,
            passes: batch_passes(y.len(), 1, 1),
            logits: vec![(role, logits)],
        })
    })
}

fn adapt_groups(model: &Model, mode: AdaptMode, cfg: &TrainConfig) -> Result<Vec<ParamGroup>> {
    model.set_head_trainable(true)?;
    let mut groups = Vec::new();
    match mode {
        AdaptMode::Full => {
            model.encoder.set_trainable(true);
            groups.push(ParamGroup::new("encoder", model.encoder.parameters(), cfg.lr_encoder, cfg.weight_decay));
        }
        AdaptMode::Lora => {
            if model.adapters.as_ref().is_none_or(|a| a.owned().is_empty()) {
                return Err(Error::Usage("LoRA adaptation needs owned adapters bound to the encoder".into()));
            }
            model.encoder.set_trainable(false);
        }
    }
    model.set_adapters_trainable(true)?;
    let adapters = model.adapter_parameters();
    if !adapters.is_empty() {
        groups.push(ParamGroup::new("adapters", adapters, cfg.lr, cfg.weight_decay));
    }
    groups.push(ParamGroup::new("head", model.head.parameters(), cfg.lr, cfg.weight_decay));
    Ok(groups)
}

/// Second stage of two-step distillation: the student, adapted with
/// `student_mode`, learns from an already adapted teacher that stays frozen.
/// Both read every batch from the same plan.
pub fn distill_two_step(
    teacher: &Model,
    student: &Model,
    student_mode: AdaptMode,
    data: &Splits,
    distill: &DistillConfig,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<RunMetrics> {
    distill.validate()?;
    if teacher.num_classes() != student.num_classes() {
        return Err(Error::Config(format!(
            "teacher predicts {} classes, student {}",
            teacher.num_classes(),
            student.num_classes()
        )));
    }
    check_classes(student, data)?;
    let groups = adapt_groups(student, student_mode, cfg)?;
    let evaluated = [(ModelClass::Student, student)];
    train_loop("distill", cfg, data, groups, &evaluated, observer, |x, y| {
        let teacher_logits = {
            let _guard = NoGradGuard::new();
            teacher.logits(x)?
        };
        let logits = student.logits(x)?;
        Ok(Step {
            loss: kd_loss(&logits, &teacher_logits, y, distill)?,
            passes: batch_passes(y.len(), 2, 1),
            logits: vec![(ModelClass::Student, logits)],
        })
    })
}

/// Student bindings reading the teacher's adapters through width-sliced
/// views, block `i` from teacher block `g(i)`.
pub fn bind_shared_adapters(
    teacher: &Model,
    student_encoder: &Encoder,
    mapping: &BlockMapping,
    mode: SliceMode,
) -> Result<AdapterBindings> {
    let ta = teacher
        .adapters
        .as_ref()
        .ok_or_else(|| Error::Usage("teacher has no adapters to share".into()))?;
    check_mapping(mapping, teacher, student_encoder)?;
    AdapterBindings::shared_from(
        ta,
        student_encoder.config(),
        teacher.encoder.config().dim,
        mapping.as_slice(),
        mode,
    )
}

fn check_mapping(mapping: &BlockMapping, teacher: &Model, student: &Encoder) -> Result<()> {
    let (n_t, n_s) = (teacher.encoder.config().depth, student.config().depth);
    if mapping.student_depth() != n_s || mapping.teacher_depth() != n_t {
        return Err(Error::Config(format!(
            "mapping built for {}→{} blocks, models have {n_s}→{n_t}",
            mapping.student_depth(),
            mapping.teacher_depth()
        )));
    }
    if let Some(&bad) = mapping.as_slice().iter().find(|&&t| t >= n_t) {
        return Err(Error::Config(format!("mapping targets block {bad} of a {n_t}-block teacher")));
    }
    Ok(())
}

/// Joint training with shared adapters: both encoders frozen, one optimizer
/// over the teacher's adapters (the student reads them through views) and
/// both heads, one backward of the joint loss per batch.
pub fn train_slad(
    teacher: &Model,
    student: &Model,
    mapping: &BlockMapping,
    data: &Splits,
    distill: &DistillConfig,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<RunMetrics> {
    distill.validate()?;
    if teacher.num_classes() != student.num_classes() {
        return Err(Error::Config(format!(
            "teacher predicts {} classes, student {}",
            teacher.num_classes(),
            student.num_classes()
        )));
    }
    check_classes(teacher, data)?;
    check_mapping(mapping, teacher, &student.encoder)?;
    check_sharing(teacher, student, mapping)?;

    teacher.encoder.set_trainable(false);
    student.encoder.set_trainable(false);
    teacher.set_adapters_trainable(true)?;
    teacher.set_head_trainable(true)?;
    student.set_head_trainable(true)?;
    let groups = vec![
        ParamGroup::new("adapters", teacher.adapter_parameters(), cfg.lr, cfg.weight_decay),
        ParamGroup::new("teacher-head", teacher.head.parameters(), cfg.lr, cfg.weight_decay),
        ParamGroup::new("student-head", student.head.parameters(), cfg.lr, cfg.weight_decay),
    ];
    let through_teacher = distill.alpha_t > 0.0 || (distill.alpha_kl > 0.0 && !distill.detach_teacher_in_kl);
    let through_student = distill.alpha_s > 0.0 || distill.alpha_kl > 0.0;
    let backward_models = through_teacher as u64 + through_student as u64;
    let evaluated = [(ModelClass::Teacher, teacher), (ModelClass::Student, student)];
    train_loop("slad", cfg, data, groups, &evaluated, observer, |x, y| {
        let teacher_logits = teacher.logits(x)?;
        let student_logits = student.logits(x)?;
        Ok(Step {
            loss: slad_loss(&student_logits, &teacher_logits, y, distill)?,
            passes: batch_passes(y.len(), 2, backward_models),
            logits: vec![(ModelClass::Teacher, teacher_logits), (ModelClass::Student, student_logits)],
        })
    })
}

/// Every student block must read the teacher adapter at `g(i)`.
fn check_sharing(teacher: &Model, student: &Model, mapping: &BlockMapping) -> Result<()> {
    let (Some(ta), Some(sa)) = (&teacher.adapters, &student.adapters) else {
        return Err(Error::Binding("joint training needs adapters on both models".into()));
    };
    for i in 0..mapping.student_depth() {
        let t = mapping.teacher_block(i);
        let parent = match ta.slot(t) {
            Some(AdapterRef::Owned(a)) => a,
            _ => return Err(Error::Binding(format!("teacher block {t} has no owned adapter"))),
        };
        match sa.slot(i) {
            Some(AdapterRef::Shared(v)) if v.parent().a().same_storage(parent.a()) => {}
            _ => {
                return Err(Error::Binding(format!(
                    "student block {i} does not view the adapter of teacher block {t}"
                )))
            }
        }
    }
    Ok(())
}

fn check_classes(model: &Model, data: &Splits) -> Result<()> {
    if model.num_classes() != data.num_classes() {
        return Err(Error::Config(format!(
            "head predicts {} classes, dataset has {}",
            model.num_classes(),
            data.num_classes()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthParams};
    use crate::train::metrics::NoObserver;
    use crate::train::{block_mapping, MappingKind};
    use crate::vit::EncoderConfig;

    fn tiny(dim: usize, heads: usize) -> EncoderConfig {
        EncoderConfig {
            depth: 2,
            dim,
            heads,
            patch_size: 4,
            image_size: 8,
            channels: 3,
            mlp_ratio: 2,
        }
    }

    fn splits() -> Splits {
        let p = SynthParams {
            classes: 3,
            train_per_class: 6,
            test_per_class: 2,
            image_size: 8,
            ..SynthParams::default()
        };
        let (train, test) = synth_dataset(&p, 0).unwrap();
        Splits::carve(train, test, 0.2, 0).unwrap()
    }

    fn model(cfg: EncoderConfig, class: ModelClass, adapters: bool) -> Model {
        let m = Model::new(Encoder::new(cfg, 1).unwrap(), 3, class, 2, 2).unwrap();
        if adapters {
            m.with_adapters(AdapterBindings::all_blocks(&cfg, 2, 3).unwrap()).unwrap()
        } else {
            m
        }
    }

    fn train_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn probing_moves_only_the_head() {
        let m = model(tiny(8, 2), ModelClass::Teacher, false);
        let encoder_before = parameter_digest(&m.encoder.parameters());
        let head_before = parameter_digest(&m.head.parameters());
        let data = splits();
        let metrics = train_probing(&m, ModelClass::Teacher, &data, &train_cfg(), &mut NoObserver).unwrap();
        assert_eq!(parameter_digest(&m.encoder.parameters()), encoder_before);
        assert_ne!(parameter_digest(&m.head.parameters()), head_before);
        let n = 2 * data.train.len() as u64;
        assert_eq!((metrics.passes.forward, metrics.passes.backward), (n, n));
        assert_eq!(metrics.epochs.len(), 2);
    }

    #[test]
    fn lora_adaptation_freezes_the_base_weights() {
        let m = model(tiny(8, 2), ModelClass::Teacher, true);
        let encoder_before = parameter_digest(&m.encoder.parameters());
        train_adapt(&m, ModelClass::Teacher, AdaptMode::Lora, &splits(), &train_cfg(), &mut NoObserver).unwrap();
        assert_eq!(parameter_digest(&m.encoder.parameters()), encoder_before);
        let owned = m.adapters.as_ref().unwrap().owned();
        assert!(owned.iter().all(|(_, a)| a.b().to_vec().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn lora_adaptation_without_adapters_is_a_usage_error() {
        let m = model(tiny(8, 2), ModelClass::Teacher, false);
        let err = train_adapt(&m, ModelClass::Teacher, AdaptMode::Lora, &splits(), &train_cfg(), &mut NoObserver);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn distillation_counts_teacher_forwards_without_backwards() {
        let teacher = model(tiny(16, 2), ModelClass::Teacher, true);
        let student = model(tiny(8, 1), ModelClass::Student, true);
        let data = splits();
        let m = distill_two_step(
            &teacher,
            &student,
            AdaptMode::Lora,
            &data,
            &DistillConfig::two_step(),
            &train_cfg(),
            &mut NoObserver,
        )
        .unwrap();
        let n = 2 * data.train.len() as u64;
        assert_eq!((m.passes.forward, m.passes.backward), (2 * n, n));
    }

    #[test]
    fn joint_training_requires_shared_views() {
        let teacher = model(tiny(16, 2), ModelClass::Teacher, true);
        let student = model(tiny(8, 1), ModelClass::Student, true);
        let mapping = block_mapping(MappingKind::Even, 2, 2).unwrap();
        let data = splits();
        let err = train_slad(&teacher, &student, &mapping, &data, &DistillConfig::joint(), &train_cfg(), &mut NoObserver);
        assert!(matches!(err, Err(Error::Binding(_))));

        let shared = bind_shared_adapters(&teacher, &student.encoder, &mapping, SliceMode::PerSegment).unwrap();
        let student = model(tiny(8, 1), ModelClass::Student, false).with_adapters(shared).unwrap();
        let m = train_slad(&teacher, &student, &mapping, &data, &DistillConfig::joint(), &train_cfg(), &mut NoObserver).unwrap();
        let n = 2 * data.train.len() as u64;
        assert_eq!((m.passes.forward, m.passes.backward), (2 * n, 2 * n));
    }

    #[test]
    fn detached_teacher_without_teacher_loss_backpropagates_once() {
        let teacher = model(tiny(16, 2), ModelClass::Teacher, true);
        let mapping = block_mapping(MappingKind::Even, 2, 2).unwrap();
        let student_enc = Encoder::new(tiny(8, 1), 1).unwrap();
        let shared = bind_shared_adapters(&teacher, &student_enc, &mapping, SliceMode::PerSegment).unwrap();
        let student = model(tiny(8, 1), ModelClass::Student, false).with_adapters(shared).unwrap();
        let distill = DistillConfig {
            alpha_t: 0.0,
            ..DistillConfig::joint()
        };
        let data = splits();
        let m = train_slad(&teacher, &student, &mapping, &data, &distill, &train_cfg(), &mut NoObserver).unwrap();
        let n = 2 * data.train.len() as u64;
        assert_eq!((m.passes.forward, m.passes.backward), (2 * n, n));
    }

    #[test]
    fn class_mismatch_is_a_config_error() {
        let m = Model::new(Encoder::new(tiny(8, 2), 1).unwrap(), 5, ModelClass::Teacher, 2, 2).unwrap();
        assert!(matches!(
            train_probing(&m, ModelClass::Teacher, &splits(), &train_cfg(), &mut NoObserver),
            Err(Error::Config(_))
        ));
    }
}
