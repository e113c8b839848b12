//! Comparison tables over finished runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::runner::RunSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub student: String,
    pub teacher: String,
    pub method: String,
    pub dataset: String,
    pub temperature: Option<f64>,
    pub weights: Option<[f64; 3]>,
    pub seeds: Vec<u64>,
    /// Seed means; accuracies are fractions.
    pub student_accuracy: Option<f64>,
    pub teacher_accuracy: Option<f64>,
    pub delta_cka: Option<f64>,
    pub forward_passes: Option<f64>,
    pub backward_passes: Option<f64>,
    pub wall_clock_secs: Option<f64>,
    /// Run directories that had no readable summary.
    pub absent: bool,
}

impl ReportRow {
    pub fn total_passes(&self) -> Option<f64> {
        Some(self.forward_passes? + self.backward_passes?)
    }
}

/// Summaries of `run_dirs`; unreadable ones come back as the directory.
pub fn load_summaries(run_dirs: &[PathBuf]) -> (Vec<RunSummary>, Vec<PathBuf>) {
    let mut present = Vec::new();
    let mut missing = Vec::new();
    for dir in run_dirs {
        match RunSummary::load(dir) {
            Ok(s) => present.push(s),
            Err(e) => {
                log::warn!("run {} is absent: {e}", dir.display());
                missing.push(dir.clone());
            }
        }
    }
    (present, missing)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.collect::<Option<Vec<_>>>()?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

type GroupKey = (String, String, String, String, Option<u64>, Option<[u64; 3]>);

/// One row per (student, teacher, method, dataset, distillation setting),
/// averaged over seeds, sorted by method name. Missing runs are appended as
/// absent rows named after their directory.
pub fn report_rows(summaries: &[RunSummary], missing: &[PathBuf]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<GroupKey, Vec<&RunSummary>> = BTreeMap::new();
    for s in summaries {
        let key = (
            s.method.clone(),
            s.dataset.clone(),
            s.student.clone(),
            s.teacher.clone(),
            s.temperature.map(f64::to_bits),
            s.weights.map(|w| w.map(f64::to_bits)),
        );
        groups.entry(key).or_default().push(s);
    }
    let mut rows: Vec<ReportRow> = groups
        .into_values()
        .map(|runs| {
            let first = runs[0];
            let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
            seeds.sort_unstable();
            ReportRow {
                student: first.student.clone(),
                teacher: first.teacher.clone(),
                method: first.method.clone(),
                dataset: first.dataset.clone(),
                temperature: first.temperature,
                weights: first.weights,
                seeds,
                student_accuracy: mean(runs.iter().map(|r| r.student_accuracy)),
                teacher_accuracy: mean(runs.iter().map(|r| r.teacher_accuracy)),
                delta_cka: mean(runs.iter().map(|r| r.cka.as_ref().map(|c| c.delta_mean_aligned))),
                forward_passes: mean(runs.iter().map(|r| Some(r.passes.forward as f64))),
                backward_passes: mean(runs.iter().map(|r| Some(r.passes.backward as f64))),
                wall_clock_secs: mean(runs.iter().map(|r| Some(r.wall_clock_secs))),
                absent: false,
            }
        })
        .collect();
    for dir in missing {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        rows.push(ReportRow {
            student: String::new(),
            teacher: String::new(),
            method: name,
            dataset: String::new(),
            temperature: None,
            weights: None,
            seeds: Vec::new(),
            student_accuracy: None,
            teacher_accuracy: None,
            delta_cka: None,
            forward_passes: None,
            backward_passes: None,
            wall_clock_secs: None,
            absent: true,
        });
    }
    rows.sort_by(|a, b| a.method.cmp(&b.method).then(a.absent.cmp(&b.absent)));
    rows
}

pub const REPORT_HEADER: &str = "student,teacher,method,dataset,temperature,weights,seeds,student_acc,teacher_acc,delta_cka,forward_passes,backward_passes,total_passes,wall_clock_secs,status";

fn opt(v: Option<f64>, decimals: usize) -> String {
    v.map(|x| format!("{x:.decimals$}")).unwrap_or_default()
}

fn percent(v: Option<f64>) -> String {
    opt(v.map(|x| 100.0 * x), 2)
}

pub fn format_weights(w: [f64; 3]) -> String {
    format!("({};{};{})", w[0], w[1], w[2])
}

/// CSV with accuracies in percent.
pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        let seeds = r.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.student,
            r.teacher,
            r.method,
            r.dataset,
            r.temperature.map(|t| t.to_string()).unwrap_or_default(),
            r.weights.map(format_weights).unwrap_or_default(),
            seeds,
            percent(r.student_accuracy),
            percent(r.teacher_accuracy),
            opt(r.delta_cka, 6),
            opt(r.forward_passes, 0),
            opt(r.backward_passes, 0),
            opt(r.total_passes(), 0),
            opt(r.wall_clock_secs, 2),
            if r.absent { "absent" } else { "ok" },
        );
    }
    out
}

/// Report over run directories.
pub fn report(run_dirs: &[PathBuf]) -> String {
    let (present, missing) = load_summaries(run_dirs);
    report_csv(&report_rows(&present, &missing))
}

/// Horizontal sweep table: the header row lists the settings, each further
/// row holds seed-mean student accuracy (percent) per setting.
pub fn sweep_table(axis: &str, settings: &[String], rows: &[(String, Vec<Option<f64>>)]) -> String {
    let mut out = String::from(axis);
    for s in settings {
        let _ = write!(out, ",{s}");
    }
    out.push('\n');
    for (label, values) in rows {
        out.push_str(label);
        for v in values {
            let _ = write!(out, ",{}", percent(*v));
        }
        out.push('\n');
    }
    out
}

/// Every immediate sub-directory of `root` holding a `summary.json`.
pub fn discover_runs(root: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let path = entry?.path();
        if path.join("summary.json").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::Strategy;
    use crate::train::PassCounts;

    fn summary(method: &str, seed: u64, acc: f64) -> RunSummary {
        RunSummary {
            run_id: format!("{method}-seed{seed}"),
            method: method.into(),
            strategy: Strategy::Slad,
            seed,
            dataset: "synthetic".into(),
            teacher: "vit-d64x6".into(),
            student: "vit-d32x6".into(),
            temperature: Some(2.0),
            weights: Some([1.0, 1.0, 1.0]),
            epochs: 1,
            teacher_accuracy: Some(acc),
            student_accuracy: Some(acc),
            passes: PassCounts {
                forward: 10,
                backward: 10,
            },
            wall_clock_secs: 1.0,
            cka: None,
            teacher_encoder_digest: None,
            student_encoder_digest: None,
        }
    }

    #[test]
    fn single_run_single_row() {
        let rows = report_rows(&[summary("slad", 0, 0.5)], &[]);
        assert_eq!(rows.len(), 1);
        let csv = report_csv(&rows);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().contains(",slad,"));
    }

    #[test]
    fn rows_sorted_by_method_and_seeds_averaged() {
        let runs = [
            summary("slad", 0, 0.5),
            summary("two-step-lora", 0, 0.25),
            summary("slad", 1, 0.7),
            summary("two-step-full", 0, 0.3),
        ];
        let rows = report_rows(&runs, &[PathBuf::from("runs/gone")]);
        let methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(methods, ["gone", "slad", "two-step-full", "two-step-lora"]);
        assert!(rows[0].absent);
        assert_eq!(rows[1].seeds, vec![0, 1]);
        assert!((rows[1].student_accuracy.unwrap() - 0.6).abs() < 1e-12);
        assert!(report_csv(&rows).contains(",absent\n"));
    }

    #[test]
    fn sweep_table_shape() {
        let t = sweep_table(
            "T",
            &["0.5".into(), "1".into()],
            &[("accuracy".into(), vec![Some(0.5), None])],
        );
        assert_eq!(t, "T,0.5,1\naccuracy,50.00,\n");
    }
}
