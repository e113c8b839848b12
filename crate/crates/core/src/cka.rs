//! Linear centered kernel alignment between layer representations.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::tensor::{kernels::gemm, NoGradGuard, Tensor};
use crate::train::{BlockMapping, Model};
use crate::vit::{cls_of, mean_patch_of};

/// `n × p` representation of one layer on a probe batch, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n: usize,
    p: usize,
    pub layer: usize,
    pub model: String,
}

impl FeatureMatrix {
    pub fn new(n: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        if n < 2 || p == 0 {
            return Err(Error::Usage(format!("feature matrix needs n ≥ 2 and p ≥ 1, got {n}×{p}")));
        }
        if data.len() != n * p {
            return Err(Error::shape("feature_matrix", &[n, p], &[data.len()]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix entry".into()));
        }
        Ok(FeatureMatrix {
            data,
            n,
            p,
            layer: 0,
            model: String::new(),
        })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [n, p] => Self::new(*n, *p, t.to_vec()),
            s => Err(Error::Usage(format!("expected [samples, features], got {s:?}"))),
        }
    }

    pub fn tagged(mut self, model: &str, layer: usize) -> Self {
        self.model = model.to_string();
        self.layer = layer;
        self
    }

    pub fn samples(&self) -> usize {
        self.n
    }

    pub fn features(&self) -> usize {
        self.p
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Subtract each column's mean.
pub fn center_columns(x: &FeatureMatrix) -> FeatureMatrix {
    let (n, p) = (x.n, x.p);
    let mut means = vec![0.0; p];
    for row in x.data.chunks_exact(p) {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let mut data = x.data.clone();
    for row in data.chunks_exact_mut(p) {
        for (v, m) in row.iter_mut().zip(&means) {
            *v -= m;
        }
    }
    FeatureMatrix { data, ..x.clone() }
}

/// Centered matrix together with `‖XᵀX‖_F`.
struct Prepared {
    centered: Vec<f64>,
    n: usize,
    p: usize,
    self_norm: f64,
}

fn frobenius_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `AᵀB` for row-major `A: n×p`, `B: n×q`.
fn cross(a: &[f64], p: usize, b: &[f64], q: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * q];
    gemm(p, n, q, a, true, b, false, &mut out, false);
    out
}

fn prepare(x: &FeatureMatrix) -> Result<Prepared> {
    let c = center_columns(x);
    let scale = frobenius_sq(&x.data).max(f64::MIN_POSITIVE);
    if frobenius_sq(&c.data) <= 1e-24 * scale {
        return Err(Error::UndefinedSimilarity(format!(
            "{} layer {} has no variance across the probe batch",
            if x.model.is_empty() { "features" } else { &x.model },
            x.layer
        )));
    }
    let self_norm = frobenius_sq(&cross(&c.data, c.p, &c.data, c.p, c.n)).sqrt();
    Ok(Prepared {
        centered: c.data,
        n: c.n,
        p: c.p,
        self_norm,
    })
}

fn cka_prepared(x: &Prepared, y: &Prepared) -> f64 {
    let yx = cross(&y.centered, y.p, &x.centered, x.p, x.n);
    frobenius_sq(&yx) / (x.self_norm * y.self_norm)
}

/// `‖YᵀX‖²_F / (‖XᵀX‖_F·‖YᵀY‖_F)` on column-centered inputs. Inputs with
/// no variance give [`Error::UndefinedSimilarity`].
pub fn linear_cka(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64> {
    if x.n != y.n {
        return Err(Error::Usage(format!(
            "CKA needs the same samples: {} vs {} rows",
            x.n, y.n
        )));
    }
    Ok(cka_prepared(&prepare(x)?, &prepare(y)?))
}

/// `rows × cols` CKA values, rows indexing teacher layers and columns
/// student layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    /// Identifies the probe batch; matrices are only comparable when equal.
    pub probe: String,
}

impl CkaMatrix {
    pub fn get(&self, teacher_layer: usize, student_layer: usize) -> f64 {
        self.values[teacher_layer * self.cols + student_layer]
    }

    /// One line per teacher layer, one column per student layer, six
    /// decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("teacher_layer");
        for j in 0..self.cols {
            let _ = write!(out, ",student_{j}");
        }
        out.push('\n');
        for i in 0..self.rows {
            let _ = write!(out, "{i}");
            for j in 0..self.cols {
                let _ = write!(out, ",{:.6}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }
}

/// Entry `(i, j)` is `linear_cka(teacher[i], student[j])`.
pub fn cka_matrix(teacher: &[FeatureMatrix], student: &[FeatureMatrix], probe: &str) -> Result<CkaMatrix> {
    if teacher.is_empty() || student.is_empty() {
        return Err(Error::Usage("CKA matrix needs at least one layer per model".into()));
    }
    let n = teacher[0].n;
    if let Some(bad) = teacher.iter().chain(student).find(|f| f.n != n) {
        return Err(Error::Usage(format!(
            "probe batch mismatch: {} rows vs {n}",
            bad.n
        )));
    }
    let t = teacher.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    let s = student.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(t.len() * s.len());
    for ti in &t {
        for sj in &s {
            values.push(cka_prepared(ti, sj));
        }
    }
    Ok(CkaMatrix {
        rows: t.len(),
        cols: s.len(),
        values,
        probe: probe.to_string(),
    })
}

/// Element-wise `before − after`.
pub fn delta_cka(before: &CkaMatrix, after: &CkaMatrix) -> Result<CkaMatrix> {
    if (before.rows, before.cols) != (after.rows, after.cols) {
        return Err(Error::Usage(format!(
            "cannot subtract a {}×{} CKA matrix from a {}×{} one",
            after.rows, after.cols, before.rows, before.cols
        )));
    }
    if before.probe != after.probe {
        return Err(Error::Usage(format!(
            "CKA matrices come from different probes ('{}' vs '{}')",
            before.probe, after.probe
        )));
    }
    Ok(CkaMatrix {
        values: before.values.iter().zip(&after.values).map(|(b, a)| b - a).collect(),
        ..before.clone()
    })
}

/// Mean of the entries `(g(j), j)` over student layers `j`.
pub fn mean_aligned_cka(m: &CkaMatrix, mapping: &BlockMapping) -> Result<f64> {
    if mapping.student_depth() != m.cols || mapping.teacher_depth() != m.rows {
        return Err(Error::Usage(format!(
            "mapping {}→{} does not fit a {}×{} CKA matrix",
            mapping.student_depth(),
            mapping.teacher_depth(),
            m.rows,
            m.cols
        )));
    }
    let total: f64 = (0..m.cols).map(|j| m.get(mapping.teacher_block(j), j)).sum();
    Ok(total / m.cols as f64)
}

/// Which tokens represent a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureToken {
    #[default]
    Cls,
    MeanPatch,
}

/// Per-block representations of `model` on `probe` (no flips, gradients
/// off), one matrix per block.
pub fn layer_features(model: &Model, probe: &Dataset, token: FeatureToken, batch_size: usize, tag: &str) -> Result<Vec<FeatureMatrix>> {
    let _guard = NoGradGuard::new();
    let depth = model.encoder.config().depth;
    let dim = model.encoder.config().dim;
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(probe.len() * dim); depth];
    for b in BatchPlan::sequential(probe.len(), batch_size).batches {
        let (x, _) = probe.batch(&b.indices, &b.flips)?;
        for (acc, tokens) in columns.iter_mut().zip(model.block_tokens(&x)?) {
            let pooled = match token {
                FeatureToken::Cls => cls_of(&tokens)?,
                FeatureToken::MeanPatch => mean_patch_of(&tokens)?,
            };
            acc.extend_from_slice(&pooled.data());
        }
    }
    columns
        .into_iter()
        .enumerate()
        .map(|(layer, data)| Ok(FeatureMatrix::new(probe.len(), dim, data)?.tagged(tag, layer)))
        .collect()
}
