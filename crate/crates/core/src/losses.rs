//! Task and distillation objectives.
//!
//! The task terms are plain cross-entropy at temperature 1. The distillation
//! term is `T²·KL(p_teacher ∥ p_student)` on temperature-softened
//! distributions, averaged over the batch. Terms whose weight is zero are
//! not built at all, so their parameters receive no gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    /// `KL(p_t ∥ p_s)`, the usual distillation direction.
    #[default]
    TeacherToStudent,
    /// `KL(p_s ∥ p_t)`.
    StudentToTeacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub temperature: f64,
    pub alpha_s: f64,
    pub alpha_t: f64,
    pub alpha_kl: f64,
    /// Cut the teacher logits from the graph inside the KL term.
    #[serde(default = "yes")]
    pub detach_teacher_in_kl: bool,
    #[serde(default)]
    pub kl_direction: KlDirection,
}

fn yes() -> bool {
    true
}

impl DistillConfig {
    /// Two-step distillation: `T = 2`, `(α_s, α_KL) = (0.5, 0.5)`.
    pub fn two_step() -> Self {
        DistillConfig {
            temperature: 2.0,
            alpha_s: 0.5,
            alpha_t: 0.0,
            alpha_kl: 0.5,
            detach_teacher_in_kl: true,
            kl_direction: KlDirection::TeacherToStudent,
        }
    }

    /// Joint training: `T = 2`, `(α_s, α_t, α_KL) = (1, 1, 1)`.
    pub fn joint() -> Self {
        DistillConfig {
            alpha_s: 1.0,
            alpha_t: 1.0,
            alpha_kl: 1.0,
            ..Self::two_step()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        let weights = [self.alpha_s, self.alpha_t, self.alpha_kl];
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Parameter(format!("loss weights must be non-negative, got {weights:?}")));
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err(Error::Parameter("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Mean over the batch of `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, c) = batch_classes(logits)?;
    if labels.len() != b {
        return Err(Error::shape("cross_entropy", logits.shape(), &[labels.len()]));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Data(format!("label {bad} outside 0..{c}")));
    }
    let flat_idx: Vec<usize> = labels.iter().enumerate().map(|(i, &y)| i * c + y).collect();
    let picked = logits
        .log_softmax()?
        .reshape(&[b * c, 1])?
        .gather_rows(&flat_idx)?;
    Ok(picked.mean().neg())
}

/// Batch-mean `KL(softmax(p/T) ∥ softmax(q/T))`.
pub fn kl_divergence(p_logits: &Tensor, q_logits: &Tensor, temperature: f64) -> Result<Tensor> {
    if p_logits.shape() != q_logits.shape() {
        return Err(Error::shape("kl_divergence", p_logits.shape(), q_logits.shape()));
    }
    let (b, _) = batch_classes(p_logits)?;
    let p = p_logits.softmax_temperature(temperature)?;
    let log_p = p_logits.log_softmax_temperature(temperature)?;
    let log_q = q_logits.log_softmax_temperature(temperature)?;
    Ok(p.mul(&log_p.sub(&log_q)?)?.sum().scale(1.0 / b as f64))
}

/// `T²·KL` between teacher and student, honouring direction and detaching.
pub fn distillation_term(student_logits: &Tensor, teacher_logits: &Tensor, cfg: &DistillConfig) -> Result<Tensor> {
    let teacher = if cfg.detach_teacher_in_kl {
        teacher_logits.detach()
    } else {
        teacher_logits.clone()
    };
    let kl = match cfg.kl_direction {
        KlDirection::TeacherToStudent => kl_divergence(&teacher, student_logits, cfg.temperature)?,
        KlDirection::StudentToTeacher => kl_divergence(student_logits, &teacher, cfg.temperature)?,
    };
    Ok(kl.scale(cfg.temperature * cfg.temperature))
}

/// `α_s·CE(student) + α_KL·T²·KL(p_t ∥ p_s)`.
pub fn kd_loss(
    student_logits: &Tensor,
    teacher_logits: &Tensor,
    labels: &[usize],
    cfg: &DistillConfig,
) -> Result<Tensor> {
    joint_loss(student_logits, teacher_logits, labels, &DistillConfig { alpha_t: 0.0, ..*cfg })
}

/// `α_s·CE(student) + α_t·CE(teacher) + α_KL·T²·KL(p_t ∥ p_s)`.
pub fn slad_loss(
    student_logits: &Tensor,
    teacher_logits: &Tensor,
    labels: &[usize],
    cfg: &DistillConfig,
) -> Result<Tensor> {
    joint_loss(student_logits, teacher_logits, labels, cfg)
}

fn joint_loss(
    student_logits: &Tensor,
    teacher_logits: &Tensor,
    labels: &[usize],
    cfg: &DistillConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    if student_logits.shape() != teacher_logits.shape() {
        return Err(Error::shape("distillation", student_logits.shape(), teacher_logits.shape()));
    }
    let mut terms = Vec::with_capacity(3);
    if cfg.alpha_s != 0.0 {
        terms.push(cross_entropy(student_logits, labels)?.scale(cfg.alpha_s));
    }
    if cfg.alpha_t != 0.0 {
        terms.push(cross_entropy(teacher_logits, labels)?.scale(cfg.alpha_t));
    }
    if cfg.alpha_kl != 0.0 {
        terms.push(distillation_term(student_logits, teacher_logits, cfg)?.scale(cfg.alpha_kl));
    }
    let mut total = terms.remove(0);
    for t in &terms {
        total = total.add(t)?;
    }
    Ok(total)
}

fn batch_classes(logits: &Tensor) -> Result<(usize, usize)> {
    match logits.shape() {
        [b, c] => Ok((*b, *c)),
        s => Err(Error::Usage(format!("expected [batch, classes] logits, got {s:?}"))),
    }
}
