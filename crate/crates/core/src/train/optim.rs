//! AdamW with a cosine learning-rate schedule.

use std::collections::HashSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// `base · ½(1 + cos(π·t/T_max))`, with `t` clamped to `[0, T_max]`.
pub fn cosine_lr(base: f64, t: usize, t_max: usize) -> f64 {
    if t_max == 0 {
        return base;
    }
    let frac = t.min(t_max) as f64 / t_max as f64;
    base * 0.5 * (1.0 + (PI * frac).cos())
}

/// Parameters sharing a base learning rate and weight decay.
#[derive(Debug, Clone)]
pub struct ParamGroup {
    pub name: String,
    pub params: Vec<Tensor>,
    pub lr: f64,
    pub weight_decay: f64,
}

impl ParamGroup {
    pub fn new(name: &str, params: Vec<Tensor>, lr: f64, weight_decay: f64) -> Self {
        ParamGroup {
            name: name.to_string(),
            params,
            lr,
            weight_decay,
        }
    }
}

struct Slot {
    param: Tensor,
    group: usize,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

/// One moment pair and step counter per distinct parameter storage.
pub struct AdamW {
    config: AdamWConfig,
    groups: Vec<(String, f64, f64)>,
    slots: Vec<Slot>,
    t: usize,
    t_max: usize,
}

impl AdamW {
    /// Fails if any storage appears twice across the groups: an aliased
    /// tensor would otherwise be stepped more than once per update.
    pub fn new(groups: Vec<ParamGroup>, config: AdamWConfig, t_max: usize) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut slots = Vec::new();
        let mut meta = Vec::with_capacity(groups.len());
        for (gi, g) in groups.into_iter().enumerate() {
            if !(g.lr.is_finite() && g.lr >= 0.0 && g.weight_decay.is_finite() && g.weight_decay >= 0.0) {
                return Err(Error::Parameter(format!(
                    "group '{}' has lr {} and weight decay {}",
                    g.name, g.lr, g.weight_decay
                )));
            }
            for p in g.params {
                if !p.is_leaf() {
                    return Err(Error::Parameter(format!(
                        "group '{}' holds a non-leaf tensor",
                        g.name
                    )));
                }
                if !seen.insert(p.id()) {
                    return Err(Error::Parameter(format!(
                        "tensor {} registered twice (group '{}')",
                        p.id(),
                        g.name
                    )));
                }
                let n = p.numel();
                slots.push(Slot {
                    param: p,
                    group: gi,
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                    steps: 0,
                });
            }
            meta.push((g.name, g.lr, g.weight_decay));
        }
        Ok(AdamW {
            config,
            groups: meta,
            slots,
            t: 0,
            t_max,
        })
    }

    pub fn num_states(&self) -> usize {
        self.slots.len()
    }

    pub fn global_step(&self) -> usize {
        self.t
    }

    /// Scheduled learning rate of group `g` at the current step.
    pub fn lr(&self, group: usize) -> f64 {
        cosine_lr(self.groups[group].1, self.t, self.t_max)
    }

    /// Apply one update to every parameter holding a gradient, then advance
    /// the schedule. Parameters without a gradient keep their value and
    /// moments. A non-finite gradient aborts before anything is written.
    pub fn step(&mut self) -> Result<()> {
        for (si, s) in self.slots.iter().enumerate() {
            if let Some(g) = s.param.grad_ref().as_ref() {
                if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of parameter #{si} (group '{}', shape {:?}) is {} at element {pos}",
                        self.groups[s.group].0,
                        s.param.shape(),
                        g[pos]
                    )));
                }
            }
        }
        let AdamWConfig { beta1, beta2, eps } = self.config;
        for s in &mut self.slots {
            let grad = s.param.grad_ref();
            let Some(g) = grad.as_ref() else { continue };
            let (_, base, wd) = &self.groups[s.group];
            let lr = cosine_lr(*base, self.t, self.t_max);
            s.steps += 1;
            let bc1 = 1.0 - beta1.powi(s.steps as i32);
            let bc2 = 1.0 - beta2.powi(s.steps as i32);
            let mut p = s.param.data_mut();
            for i in 0..p.len() {
                p[i] -= lr * wd * p[i];
                s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g[i];
                s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = s.m[i] / bc1;
                let v_hat = s.v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.t += 1;
        Ok(())
    }

    pub fn zero_grad(&self) {
        for s in &self.slots {
            s.param.zero_grad();
        }
    }
}
