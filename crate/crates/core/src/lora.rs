//! Low-rank adapters `W = W0 + A·B` and the width-restricted view through
//! which a narrower student reads (and trains) a slice of a teacher adapter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use crate::vit::EncoderConfig;

pub const DEFAULT_RANK: usize = 16;

/// Which weight an adapter modifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdapterSite {
    /// Fused QKV projection of block `block`, encoder width `width`
    /// (so the adapted weight is `width × 3·width`).
    Qkv { block: usize, width: usize },
    /// Any other dense weight; cannot be shared across widths.
    Dense,
}

/// How the student's QKV columns are picked out of the teacher's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SliceMode {
    /// First `d_s` columns of each of the Q, K and V segments.
    #[default]
    PerSegment,
    /// First `3·d_s` raw columns of the fused output.
    Contiguous,
}

#[derive(Clone)]
pub struct LoraAdapter {
    a: Tensor,
    b: Tensor,
    rank: usize,
    site: AdapterSite,
}

impl LoraAdapter {
    /// `A ~ U(−√(6/m), √(6/m))` (Kaiming-uniform, fan-in `m`, gain √2) and
    /// `B = 0`, so the adapter starts as an exact no-op.
    pub fn new(m: usize, n: usize, rank: usize, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Parameter(format!("adapter shape {m}×{n} is empty")));
        }
        if rank == 0 || rank > m.min(n) {
            return Err(Error::Parameter(format!(
                "LoRA rank {rank} outside 1..={} for a {m}×{n} weight",
                m.min(n)
            )));
        }
        let bound = (6.0 / m as f64).sqrt();
        let mut rng = rng::stream(seed, "lora-a");
        let a = Tensor::uniform(&[m, rank], -bound, bound, &mut rng);
        a.set_requires_grad(true)?;
        let b = Tensor::zeros(&[rank, n]);
        b.set_requires_grad(true)?;
        Ok(LoraAdapter {
            a,
            b,
            rank,
            site: AdapterSite::Dense,
        })
    }

    /// Adapter for the fused QKV weight of `block` in an encoder of `width`.
    pub fn for_qkv(width: usize, block: usize, rank: usize, seed: u64) -> Result<Self> {
        let mut adapter = Self::new(width, 3 * width, rank, seed)?;
        adapter.site = AdapterSite::Qkv { block, width };
        Ok(adapter)
    }

    /// Rebuild from stored factors (checkpoint loading).
    pub fn from_parts(a: Tensor, b: Tensor, site: AdapterSite) -> Result<Self> {
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::shape("lora", a.shape(), b.shape()));
        }
        let rank = a.shape()[1];
        a.set_requires_grad(true)?;
        b.set_requires_grad(true)?;
        Ok(LoraAdapter { a, b, rank, site })
    }

    pub fn a(&self) -> &Tensor {
        &self.a
    }

    pub fn b(&self) -> &Tensor {
        &self.b
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn site(&self) -> AdapterSite {
        self.site
    }

    pub fn in_dim(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.b.shape()[1]
    }

    pub fn parameters(&self) -> [Tensor; 2] {
        [self.a.clone(), self.b.clone()]
    }
}

/// A student-width window onto a teacher QKV adapter. Holds no storage of
/// its own: every read goes to the parent tensors, and gradients flowing
/// through the view accumulate in the parent's gradient slots.
#[derive(Clone)]
pub struct SharedAdapterView {
    parent: LoraAdapter,
    student_width: usize,
    teacher_width: usize,
    mode: SliceMode,
}

impl SharedAdapterView {
    pub fn new(parent: &LoraAdapter, d_s: usize, d_t: usize, mode: SliceMode) -> Result<Self> {
        match parent.site {
            AdapterSite::Qkv { width, .. } if width == d_t && parent.out_dim() == 3 * d_t => {}
            AdapterSite::Qkv { width, .. } => {
                return Err(Error::shape("shared view", &[width, 3 * width], &[d_t, 3 * d_t]))
            }
            AdapterSite::Dense => {
                return Err(Error::UnsupportedSite(
                    "only fused QKV adapters can be shared across widths".into(),
                ))
            }
        }
        if d_s == 0 || d_s > d_t {
            return Err(Error::shape("shared view", &[d_s], &[d_t]));
        }
        Ok(SharedAdapterView {
            parent: parent.clone(),
            student_width: d_s,
            teacher_width: d_t,
            mode,
        })
    }

    pub fn parent(&self) -> &LoraAdapter {
        &self.parent
    }

    pub fn rank(&self) -> usize {
        self.parent.rank
    }

    pub fn student_width(&self) -> usize {
        self.student_width
    }

    /// Parent rows of `A` visible to the student.
    pub fn row_range(&self) -> std::ops::Range<usize> {
        0..self.student_width
    }

    /// Parent columns of `B` visible to the student, in student order.
    pub fn column_indices(&self) -> Vec<usize> {
        let (ds, dt) = (self.student_width, self.teacher_width);
        match self.mode {
            SliceMode::PerSegment => (0..3).flat_map(|s| s * dt..s * dt + ds).collect(),
            SliceMode::Contiguous => (0..3 * ds).collect(),
        }
    }

    /// `A[0..d_s, :]` as a graph node over the parent.
    pub fn a(&self) -> Result<Tensor> {
        self.parent.a.narrow(0, 0, self.student_width)
    }

    /// Selected columns of `B` as a graph node over the parent.
    pub fn b(&self) -> Result<Tensor> {
        let (ds, dt) = (self.student_width, self.teacher_width);
        match self.mode {
            SliceMode::PerSegment => {
                let parts = (0..3)
                    .map(|s| self.parent.b.narrow(1, s * dt, ds))
                    .collect::<Result<Vec<_>>>()?;
                Tensor::concat(&parts, 1)
            }
            SliceMode::Contiguous => self.parent.b.narrow(1, 0, 3 * ds),
        }
    }

    /// Current value of the student's `A[i, j]`, read from the parent.
    pub fn a_value(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.student_width);
        self.parent.a.data()[i * self.rank() + j]
    }

    /// Current value of the student's `B[i, j]`, read from the parent.
    pub fn b_value(&self, i: usize, j: usize) -> f64 {
        let col = self.column_indices()[j];
        self.parent.b.data()[i * self.parent.out_dim() + col]
    }
}

/// An adapter as seen by one encoder: owned factors or a shared view.
#[derive(Clone)]
pub enum AdapterRef {
    Owned(LoraAdapter),
    Shared(SharedAdapterView),
}

impl AdapterRef {
    /// `(A, B)` as graph nodes for one forward pass.
    pub fn factors(&self) -> Result<(Tensor, Tensor)> {
        match self {
            AdapterRef::Owned(a) => Ok((a.a.clone(), a.b.clone())),
            AdapterRef::Shared(v) => Ok((v.a()?, v.b()?)),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        match self {
            AdapterRef::Owned(a) => (a.in_dim(), a.rank, a.out_dim()),
            AdapterRef::Shared(v) => (v.student_width, v.rank(), 3 * v.student_width),
        }
    }
}

/// `x·W0 + s·(x·A)·B` without materialising `W0 + A·B`. `s` is 1 unless the
/// conventional `α/r` scaling is switched on.
pub fn lora_linear_forward(x: &Tensor, w0: &Tensor, adapter: &AdapterRef, scaling: f64) -> Result<Tensor> {
    let (m, _, n) = adapter.dims();
    if w0.rank() != 2 || w0.shape() != [m, n] {
        return Err(Error::Binding(format!(
            "adapter {m}×{n} does not fit weight {:?}",
            w0.shape()
        )));
    }
    if x.shape().last() != Some(&m) {
        return Err(Error::Binding(format!(
            "input width {:?} does not match adapter input {m}",
            x.shape().last()
        )));
    }
    let (a, b) = adapter.factors()?;
    let base = x.matmul(w0)?;
    let mut delta = x.matmul(&a)?.matmul(&b)?;
    if scaling != 1.0 {
        delta = delta.scale(scaling);
    }
    base.add(&delta)
}

/// Dense `W0 + A·B` for export or inference.
pub fn merge_weights(w0: &Tensor, adapter: &AdapterRef) -> Result<Tensor> {
    let (m, _, n) = adapter.dims();
    if w0.shape() != [m, n] {
        return Err(Error::shape("merge_weights", w0.shape(), &[m, n]));
    }
    let (a, b) = adapter.factors()?;
    let delta = a.detach().matmul(&b.detach())?;
    w0.detach().add(&delta)
}

/// Per-block adapter slots for one encoder.
#[derive(Clone)]
pub struct AdapterBindings {
    slots: Vec<Option<AdapterRef>>,
    scaling: f64,
}

impl AdapterBindings {
    /// Fresh QKV adapters on `blocks` of an encoder with `config`. Each
    /// block's `A` comes from its own seeded stream.
    pub fn fresh(config: &EncoderConfig, blocks: &[usize], rank: usize, seed: u64) -> Result<Self> {
        let mut slots = vec![None; config.depth];
        for &blk in blocks {
            if blk >= config.depth {
                return Err(Error::Config(format!(
                    "adapter block {blk} outside encoder depth {}",
                    config.depth
                )));
            }
            let adapter = LoraAdapter::for_qkv(config.dim, blk, rank, seed.wrapping_add(blk as u64 * 7919))?;
            slots[blk] = Some(AdapterRef::Owned(adapter));
        }
        Ok(AdapterBindings {
            slots,
            scaling: 1.0,
        })
    }

    /// Adapters on every block.
    pub fn all_blocks(config: &EncoderConfig, rank: usize, seed: u64) -> Result<Self> {
        let blocks: Vec<usize> = (0..config.depth).collect();
        Self::fresh(config, &blocks, rank, seed)
    }

    /// Student bindings: student block `i` reads the teacher adapter at block
    /// `student_to_teacher[i]` through a [`SharedAdapterView`].
    pub fn shared_from(
        teacher: &AdapterBindings,
        student: &EncoderConfig,
        teacher_width: usize,
        student_to_teacher: &[usize],
        mode: SliceMode,
    ) -> Result<Self> {
        if student_to_teacher.len() != student.depth {
            return Err(Error::Config(format!(
                "mapping covers {} student blocks, encoder has {}",
                student_to_teacher.len(),
                student.depth
            )));
        }
        let mut slots = Vec::with_capacity(student.depth);
        for (i, &t) in student_to_teacher.iter().enumerate() {
            let parent = match teacher.slots.get(t) {
                Some(Some(AdapterRef::Owned(a))) => a,
                Some(_) => {
                    return Err(Error::Config(format!(
                        "student block {i} maps to teacher block {t}, which has no owned adapter"
                    )))
                }
                None => {
                    return Err(Error::Config(format!(
                        "student block {i} maps to teacher block {t}, beyond teacher depth {}",
                        teacher.slots.len()
                    )))
                }
            };
            let view = SharedAdapterView::new(parent, student.dim, teacher_width, mode)?;
            slots.push(Some(AdapterRef::Shared(view)));
        }
        Ok(AdapterBindings {
            slots,
            scaling: teacher.scaling,
        })
    }

    pub fn from_slots(slots: Vec<Option<AdapterRef>>) -> Self {
        AdapterBindings {
            slots,
            scaling: 1.0,
        }
    }

    /// Switch on the conventional `alpha / r` scaling of `A·B`.
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        let rank = self
            .slots
            .iter()
            .flatten()
            .map(|a| a.dims().1)
            .next()
            .unwrap_or(1);
        self.scaling = alpha / rank as f64;
        self
    }

    pub fn scaling(&self) -> f64 {
        self.scaling
    }

    pub fn slot(&self, block: usize) -> Option<&AdapterRef> {
        self.slots.get(block).and_then(Option::as_ref)
    }

    pub fn slots(&self) -> &[Option<AdapterRef>] {
        &self.slots
    }

    /// Trainable tensors stored by these bindings. Shared views contribute
    /// nothing: their storage belongs to the parent.
    pub fn parameters(&self) -> Vec<Tensor> {
        self.slots
            .iter()
            .flatten()
            .filter_map(|s| match s {
                AdapterRef::Owned(a) => Some(a.parameters()),
                AdapterRef::Shared(_) => None,
            })
            .flatten()
            .collect()
    }

    /// Owned adapters with their block index.
    pub fn owned(&self) -> Vec<(usize, &LoraAdapter)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                Some(AdapterRef::Owned(a)) => Some((i, a)),
                _ => None,
            })
            .collect()
    }

    pub(crate) fn check_against(&self, config: &EncoderConfig) -> Result<()> {
        if self.slots.len() != config.depth {
            return Err(Error::Binding(format!(
                "{} adapter slots for an encoder of depth {}",
                self.slots.len(),
                config.depth
            )));
        }
        for (i, slot) in self.slots.iter().enumerate() {
            if let Some(a) = slot {
                let (m, _, n) = a.dims();
                if m != config.dim || n != 3 * config.dim {
                    return Err(Error::Binding(format!(
                        "block {i}: adapter {m}×{n} on a {}×{} QKV weight",
                        config.dim,
                        3 * config.dim
                    )));
                }
            }
        }
        Ok(())
    }
}
