mod common;

use std::fs;

use common::checks::{ablation_harness, tiny_run_config};
use slad_core::experiment::runner::{recompute_cka, RunInfo};
use slad_core::experiment::{read_metrics, run_in, Checkpoint, Strategy, TeacherAdaptation};
use slad_core::head::ModelClass;
use slad_core::train::strategies::AdaptMode;
use slad_core::train::Split;
use slad_core::Error;

#[test]
fn repeated_runs_write_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run_config(Strategy::Slad, 5);
    let a = run_in(&cfg, &dir.path().join("a")).unwrap();
    let b = run_in(&cfg, &dir.path().join("b")).unwrap();
    let read = |d: &std::path::Path| fs::read(d.join("metrics.jsonl")).unwrap();
    assert_eq!(read(&a.run_dir), read(&b.run_dir));
    assert_eq!(a.summary.student_accuracy, b.summary.student_accuracy);
}

#[test]
fn run_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(&tiny_run_config(Strategy::Lora, 0), dir.path()).unwrap();
    for f in [
        "config.toml",
        "run.json",
        "metrics.jsonl",
        "summary.json",
        "checkpoints/last.ckpt",
        "checkpoints/final.ckpt",
        "checkpoints/epoch-000.ckpt",
        "checkpoints/epoch-001.ckpt",
        "cka/before.csv",
        "cka/after.csv",
        "cka/delta.csv",
    ] {
        assert!(out.run_dir.join(f).is_file(), "missing {f}");
    }
    let metrics = fs::read_to_string(out.run_dir.join("metrics.jsonl")).unwrap();
    assert!(!metrics.contains("wall"), "wall-clock belongs in summary.json only");
}

#[test]
fn probing_keeps_the_backbone_and_fine_tuning_changes_it() {
    let dir = tempfile::tempdir().unwrap();
    let probe = run_in(&tiny_run_config(Strategy::Probe, 0), &dir.path().join("probe")).unwrap();
    let info: RunInfo = serde_json::from_slice(&fs::read(probe.run_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(probe.summary.teacher_encoder_digest.as_ref(), Some(&info.teacher_backbone_digest));
    assert!(probe.summary.cka.as_ref().unwrap().delta_mean_aligned.abs() < 1e-12);

    let full = run_in(&tiny_run_config(Strategy::Finetune, 0), &dir.path().join("full")).unwrap();
    assert_ne!(full.summary.teacher_encoder_digest.as_ref(), Some(&info.teacher_backbone_digest));
}

#[test]
fn joint_runs_report_both_roles_on_test() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(&tiny_run_config(Strategy::Slad, 1), dir.path()).unwrap();
    let records = read_metrics(&out.run_dir.join("metrics.jsonl")).unwrap();
    let test: Vec<_> = records.iter().filter(|r| r.split == Split::Test).collect();
    assert_eq!(test.len(), 2);
    assert!(test.iter().any(|r| r.role == ModelClass::Teacher));
    assert!(test.iter().any(|r| r.role == ModelClass::Student));
    assert!(out.summary.teacher_accuracy.is_some() && out.summary.student_accuracy.is_some());
}

#[test]
fn two_step_continues_epochs_and_passes_across_stages() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_run_config(Strategy::DistillTwoStep, 2);
    cfg.teacher_adaptation = Some(TeacherAdaptation::Lora);
    let out = run_in(&cfg, dir.path()).unwrap();
    let records = read_metrics(&out.run_dir.join("metrics.jsonl")).unwrap();
    let val: Vec<_> = records.iter().filter(|r| r.split == Split::Val).collect();
    let epochs: Vec<usize> = val.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, [0, 1, 2, 3]);
    assert!(val.windows(2).all(|w| w[0].forward_passes < w[1].forward_passes));
    let n = out.summary.passes;
    assert!(n.forward > n.backward, "distillation forwards the teacher without a backward");
}

#[test]
fn divergence_aborts_and_keeps_the_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_run_config(Strategy::DistillTwoStep, 0);
    cfg.teacher_adaptation = Some(TeacherAdaptation::Lora);
    cfg.student_mode = AdaptMode::Full;
    cfg.train.lr_encoder = 1e300;
    let err = run_in(&cfg, dir.path()).expect_err("training must diverge");
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    let ckpt = Checkpoint::load(&dir.path().join("checkpoints/last.ckpt")).unwrap();
    assert_eq!(ckpt.meta["epoch"], 1);
    assert!(ckpt.blobs.iter().all(|b| b.data.iter().all(|v| v.is_finite())));
    assert!(!dir.path().join("summary.json").exists());
}

#[test]
fn cka_can_be_recomputed_from_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(&tiny_run_config(Strategy::Slad, 4), dir.path()).unwrap();
    let (_, _, summary) = recompute_cka(&out.run_dir).unwrap();
    let stored = out.summary.cka.unwrap();
    assert_eq!(summary.after_mean_aligned.to_bits(), stored.after_mean_aligned.to_bits());
    assert_eq!(summary.before_mean_aligned.to_bits(), stored.before_mean_aligned.to_bits());
}

#[test]
fn sweeps_emit_one_row_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let v = ablation_harness(dir.path());
    assert!(v.pass, "{}", v.detail);
}
