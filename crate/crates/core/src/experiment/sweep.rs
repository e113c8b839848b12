//! Seed repetition and ablation grids built from one base config.

use std::path::PathBuf;

use super::config::{ExperimentConfig, Strategy};
use super::report::{format_weights, sweep_table};
use super::runner::{run, RunSummary};
use crate::error::Result;

/// Seeds of the three-seed protocol.
pub const SEEDS: [u64; 3] = [0, 1, 2];

pub const TEMPERATURES: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];

/// `(α_KL, α_t, α_s)`.
pub const WEIGHTS: [[f64; 3]; 3] = [[1.0, 1.0, 1.0], [2.0, 1.0, 1.0], [4.0, 1.0, 1.0]];

/// `base` once per seed, run names suffixed accordingly.
pub fn with_seeds(base: &ExperimentConfig, seeds: &[u64]) -> Vec<ExperimentConfig> {
    seeds
        .iter()
        .map(|&seed| {
            let mut c = base.clone();
            c.seed = seed;
            c.train.seed = seed;
            c.run_name = base.run_name.as_ref().map(|n| format!("{n}-seed{seed}"));
            c
        })
        .collect()
}

fn named(base: &ExperimentConfig, suffix: &str) -> ExperimentConfig {
    let mut c = base.clone();
    let stem = base.run_name.clone().unwrap_or_else(|| base.strategy.to_string());
    c.run_name = Some(format!("{stem}-{suffix}"));
    c
}

/// One config per temperature, other weights as in `base`.
pub fn temperature_sweep(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    TEMPERATURES
        .iter()
        .map(|&t| {
            let mut c = named(base, &format!("T{t}"));
            let mut d = base.distill_config();
            d.temperature = t;
            c.distill = Some(d);
            c
        })
        .collect()
}

/// One config per `(α_KL, α_t, α_s)` triple.
pub fn weight_sweep(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    WEIGHTS
        .iter()
        .map(|&[kl, t, s]| {
            let mut c = named(base, &format!("w{kl}-{t}-{s}"));
            let mut d = base.distill_config();
            d.alpha_kl = kl;
            d.alpha_t = t;
            d.alpha_s = s;
            c.distill = Some(d);
            c
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Temperature,
    Weights,
}

pub struct SweepResult {
    pub table: String,
    pub run_dirs: Vec<PathBuf>,
}

/// Run `axis` over `seeds` and tabulate seed-mean student accuracy, one
/// row for the teacher/student pair of `base`.
pub fn run_sweep(base: &ExperimentConfig, axis: SweepAxis, seeds: &[u64]) -> Result<SweepResult> {
    let mut base = base.clone();
    if base.strategy != Strategy::Slad && base.strategy != Strategy::DistillTwoStep {
        base.strategy = Strategy::Slad;
    }
    let points = match axis {
        SweepAxis::Temperature => temperature_sweep(&base),
        SweepAxis::Weights => weight_sweep(&base),
    };
    let mut settings = Vec::with_capacity(points.len());
    let mut values = Vec::with_capacity(points.len());
    let mut run_dirs = Vec::new();
    for point in &points {
        let d = point.distill_config();
        settings.push(match axis {
            SweepAxis::Temperature => d.temperature.to_string(),
            SweepAxis::Weights => format_weights([d.alpha_kl, d.alpha_t, d.alpha_s]),
        });
        let mut accs = Vec::with_capacity(seeds.len());
        for cfg in with_seeds(point, seeds) {
            let outcome = run(&cfg)?;
            accs.push(outcome.summary.student_accuracy);
            run_dirs.push(outcome.run_dir);
        }
        let accs: Option<Vec<f64>> = accs.into_iter().collect();
        values.push(accs.filter(|a| !a.is_empty()).map(|a| a.iter().sum::<f64>() / a.len() as f64));
    }
    let label = pair_label(&base);
    let axis_name = match axis {
        SweepAxis::Temperature => "T",
        SweepAxis::Weights => "weights",
    };
    Ok(SweepResult {
        table: sweep_table(axis_name, &settings, &[(label, values)]),
        run_dirs,
    })
}

fn pair_label(cfg: &ExperimentConfig) -> String {
    format!(
        "vit-d{}x{}->vit-d{}x{}",
        cfg.teacher.dim, cfg.teacher.depth, cfg.student.dim, cfg.student.depth
    )
}

/// Seed means of the summaries' student accuracy.
pub fn mean_student_accuracy(runs: &[RunSummary]) -> Option<f64> {
    let v: Vec<f64> = runs.iter().map(|r| r.student_accuracy).collect::<Option<_>>()?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
