//! One function per acceptance criterion. Each returns a verdict with the
//! measured numbers so failures say by how much.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;

use slad_core::cka::{cka_matrix, linear_cka, FeatureMatrix};
use slad_core::data::BatchPlan;
use slad_core::experiment::runner::{build_models, load_splits};
use slad_core::experiment::sweep::{with_seeds, SweepAxis, TEMPERATURES, WEIGHTS};
use slad_core::experiment::{run_in, run_sweep, ExperimentConfig, RunSummary, Strategy, SEEDS};
use slad_core::lora::{lora_linear_forward, merge_weights, AdapterBindings, AdapterRef, LoraAdapter};
use slad_core::losses::{cross_entropy, kd_loss, slad_loss, DistillConfig};
use slad_core::rng;
use slad_core::tensor::backward;
use slad_core::train::{block_mapping, AdamW, AdamWConfig, MappingKind, ParamGroup};
use slad_core::vit::{Encoder, EncoderConfig};
use slad_core::Tensor;

use super::{composite_grad_check, primitive_grad_checks, GRAD_SEEDS};

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: String) -> Self {
        Verdict { pass, detail }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let (mut worst_primitive, mut worst_name) = (0.0f64, "");
    let mut worst_composite = 0.0f64;
    for seed in 0..GRAD_SEEDS {
        for (name, report) in primitive_grad_checks(seed) {
            if !report.passed() {
                failures.push(format!("{name}@{seed}"));
            }
            if report.worst() > worst_primitive {
                (worst_primitive, worst_name) = (report.worst(), name);
            }
        }
        let report = composite_grad_check(seed);
        if !report.passed() {
            failures.push(format!("composite@{seed}"));
        }
        worst_composite = worst_composite.max(report.worst());
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        failures.is_empty() && secs < 120.0,
        format!(
            "worst primitive {worst_primitive:.1e} ({worst_name}), worst composite {worst_composite:.1e}, \
             {GRAD_SEEDS} seeds in {secs:.1}s, failing: {failures:?}"
        ),
    )
}

/// Fresh adapters change nothing, bit for bit; merged and factored
/// forwards agree.
pub fn adapter_identity() -> Verdict {
    let mut unchanged = true;
    for (cfg, seed) in [(EncoderConfig::teacher(), 0), (EncoderConfig::student(), 1)] {
        let encoder = Encoder::new(cfg, seed).unwrap();
        let adapters = AdapterBindings::all_blocks(&cfg, 16, seed).unwrap();
        let x = Tensor::normal(&[4, 16, 16, 3], 1.0, &mut rng::stream(seed, "images"));
        let plain = encoder.forward(&x, None).unwrap();
        let adapted = encoder.forward(&x, Some(&adapters)).unwrap();
        for (a, b) in plain.blocks.iter().zip(&adapted.blocks) {
            unchanged &= a.to_vec() == b.to_vec();
        }
        unchanged &= plain.final_tokens.to_vec() == adapted.final_tokens.to_vec();
    }
    let mut worst_merge = 0.0f64;
    for seed in 0..10 {
        let adapter = LoraAdapter::new(64, 192, 16, seed).unwrap();
        let b = Tensor::normal(&[16 * 192], 0.1, &mut rng::stream(seed, "b")).to_vec();
        adapter.b().data_mut().copy_from_slice(&b);
        let adapter = AdapterRef::Owned(adapter);
        let w0 = Tensor::normal(&[64, 192], 0.125, &mut rng::stream(seed, "w0"));
        let x = Tensor::normal(&[8, 64], 1.0, &mut rng::stream(seed, "x"));
        let factored = lora_linear_forward(&x, &w0, &adapter, 1.0).unwrap();
        let merged = x.matmul(&merge_weights(&w0, &adapter).unwrap()).unwrap();
        worst_merge = worst_merge.max(max_abs_diff(&factored.to_vec(), &merged.to_vec()));
    }
    Verdict::new(
        unchanged && worst_merge <= 1e-12,
        format!("bitwise unchanged: {unchanged}, merged vs factored {worst_merge:.1e}"),
    )
}

/// Gradients of the shared adapter parameters for the given loss.
fn adapter_grads(params: &[Tensor], loss: Tensor) -> Vec<f64> {
    for p in params {
        p.zero_grad();
    }
    backward(&loss).unwrap();
    params
        .iter()
        .flat_map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect()
}

pub struct SharingReport {
    pub views_equal: bool,
    pub adapters_moved: bool,
    pub additivity_error: f64,
}

/// 100 joint steps on the desk-scale pair, then compare every student view
/// with the teacher slice it reads, and split one backward into its teacher
/// and student halves.
pub fn sharing_report() -> SharingReport {
    let mut cfg = ExperimentConfig::new(Strategy::Slad, 0);
    cfg.dataset.synthetic.train_per_class = 20;
    cfg.dataset.synthetic.test_per_class = 2;
    let splits = load_splits(&cfg).unwrap();
    let models = build_models(&cfg, splits.num_classes()).unwrap();
    let (teacher, student) = (models.teacher.unwrap(), models.student.unwrap());
    teacher.encoder.set_trainable(false);
    student.encoder.set_trainable(false);
    let adapters = teacher.adapters.as_ref().unwrap().parameters();
    let distill = DistillConfig::joint();
    let groups = vec![
        ParamGroup::new("adapters", adapters.clone(), 1e-2, 0.05),
        ParamGroup::new("teacher-head", teacher.head.parameters(), 1e-2, 0.05),
        ParamGroup::new("student-head", student.head.parameters(), 1e-2, 0.05),
    ];
    let steps = 100;
    let mut opt = AdamW::new(groups, AdamWConfig::default(), steps).unwrap();
    let mut batches = Vec::new();
    let mut epoch = 0;
    while batches.len() < steps {
        let plan = BatchPlan::for_epoch(splits.train.len(), 16, 0, epoch, false).unwrap();
        batches.extend(plan.batches.into_iter().map(|b| b.indices));
        epoch += 1;
    }
    for idx in batches.iter().take(steps) {
        let (x, y) = splits.train.batch(idx, &vec![false; idx.len()]).unwrap();
        let loss = slad_loss(&student.logits(&x).unwrap(), &teacher.logits(&x).unwrap(), &y, &distill).unwrap();
        opt.zero_grad();
        backward(&loss).unwrap();
        opt.step().unwrap();
    }

    let mut views_equal = true;
    let mapping = block_mapping(cfg.mapping, cfg.student.depth, cfg.teacher.depth).unwrap();
    let student_slots = student.adapters.as_ref().unwrap();
    let teacher_slots = teacher.adapters.as_ref().unwrap();
    for i in 0..cfg.student.depth {
        let Some(AdapterRef::Shared(view)) = student_slots.slot(i) else {
            return SharingReport {
                views_equal: false,
                adapters_moved: false,
                additivity_error: f64::INFINITY,
            };
        };
        let Some(AdapterRef::Owned(parent)) = teacher_slots.slot(mapping.teacher_block(i)) else {
            unreachable!("teacher blocks own their adapters");
        };
        let (pa, pb) = (parent.a().to_vec(), parent.b().to_vec());
        let (n_out, rank) = (parent.out_dim(), parent.rank());
        let rows: Vec<usize> = view.row_range().collect();
        let cols = view.column_indices();
        let expected_a: Vec<f64> = rows
            .iter()
            .flat_map(|&r| pa[r * rank..(r + 1) * rank].to_vec())
            .collect();
        let expected_b: Vec<f64> = (0..rank)
            .flat_map(|r| cols.iter().map(|&c| pb[r * n_out + c]).collect::<Vec<_>>())
            .collect();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        views_equal &= bits(&view.a().unwrap().to_vec()) == bits(&expected_a);
        views_equal &= bits(&view.b().unwrap().to_vec()) == bits(&expected_b);
    }
    let adapters_moved = teacher_slots
        .owned()
        .iter()
        .all(|(_, a)| a.b().to_vec().iter().any(|&v| v != 0.0));

    let (x, y) = splits.val.batch(&(0..16).collect::<Vec<_>>(), &[false; 16]).unwrap();
    let t_logits = || teacher.logits(&x).unwrap();
    let s_logits = || student.logits(&x).unwrap();
    let teacher_only = cross_entropy(&t_logits(), &y).unwrap().scale(distill.alpha_t);
    let g_t = adapter_grads(&adapters, teacher_only);
    let g_s = adapter_grads(&adapters, kd_loss(&s_logits(), &t_logits(), &y, &distill).unwrap());
    let g_joint = adapter_grads(&adapters, slad_loss(&s_logits(), &t_logits(), &y, &distill).unwrap());
    let summed: Vec<f64> = g_t.iter().zip(&g_s).map(|(a, b)| a + b).collect();
    SharingReport {
        views_equal,
        adapters_moved,
        additivity_error: max_abs_diff(&summed, &g_joint),
    }
}

pub fn sharing_invariant() -> Verdict {
    let r = sharing_report();
    Verdict::new(
        r.views_equal && r.adapters_moved && r.additivity_error <= 1e-12,
        format!(
            "views bitwise equal after 100 steps: {}, adapters moved: {}, additivity {:.1e}",
            r.views_equal, r.adapters_moved, r.additivity_error
        ),
    )
}

fn logits(rows: &[&[f64]]) -> Tensor {
    Tensor::new(&[rows.len(), rows[0].len()], rows.concat()).unwrap()
}

pub fn loss_oracles() -> Verdict {
    let kl_only = DistillConfig {
        temperature: 2.0,
        alpha_s: 0.0,
        alpha_t: 0.0,
        alpha_kl: 1.0,
        ..DistillConfig::two_step()
    };
    let kd = kd_loss(&logits(&[&[0.0, 2.0]]), &logits(&[&[2.0, 0.0]]), &[0], &kl_only)
        .unwrap()
        .item();
    let kd_err = (kd - 1.848_468).abs();

    let mut ce_err = 0.0f64;
    for c in [2usize, 3, 10, 100, 1000] {
        for level in [0.0, -3.5, 12.0] {
            let l = Tensor::full(&[3, c], level);
            let ce = cross_entropy(&l, &[0, c / 2, c - 1]).unwrap().item();
            ce_err = ce_err.max((ce - (c as f64).ln()).abs());
        }
    }

    let mut identical = true;
    for seed in 0..20 {
        let s = Tensor::normal(&[4, 5], 2.0, &mut rng::stream(seed, "s"));
        let t = Tensor::normal(&[4, 5], 2.0, &mut rng::stream(seed, "t"));
        let cfg = DistillConfig {
            alpha_t: 0.0,
            temperature: 0.5 + seed as f64 * 0.4,
            ..DistillConfig::joint()
        };
        let labels = [0, 1, 4, (seed % 5) as usize];
        let a = slad_loss(&s, &t, &labels, &cfg).unwrap().item();
        let b = kd_loss(&s, &t, &labels, &cfg).unwrap().item();
        identical &= a.to_bits() == b.to_bits();
    }
    Verdict::new(
        kd_err <= 1e-5 && ce_err <= 1e-10 && identical,
        format!("kd example {kd:.7} (err {kd_err:.1e}), uniform CE err {ce_err:.1e}, slad(α_t=0) == kd: {identical}"),
    )
}

pub fn features(n: usize, p: usize, seed: u64, label: &str) -> FeatureMatrix {
    let t = Tensor::normal(&[n, p], 1.0, &mut rng::stream(seed, label));
    FeatureMatrix::new(n, p, t.to_vec()).unwrap()
}

fn to_dmatrix(x: &FeatureMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(x.samples(), x.features(), x.data())
}

fn from_dmatrix(m: &DMatrix<f64>) -> FeatureMatrix {
    let data: Vec<f64> = m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
    FeatureMatrix::new(m.nrows(), m.ncols(), data).unwrap()
}

/// CKA through centered Gram matrices: `HSIC(K, L) / √(HSIC(K, K)·HSIC(L, L))`
/// with `HSIC(K, L) = tr(K·H·L·H) / (n−1)²`.
pub fn hsic_cka(x: &FeatureMatrix, y: &FeatureMatrix) -> f64 {
    let (x, y) = (to_dmatrix(x), to_dmatrix(y));
    let n = x.nrows();
    let h = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let hsic = |k: &DMatrix<f64>, l: &DMatrix<f64>| (k * &h * l * &h).trace() / ((n - 1) as f64).powi(2);
    let k = &x * x.transpose();
    let l = &y * y.transpose();
    hsic(&k, &l) / (hsic(&k, &k) * hsic(&l, &l)).sqrt()
}

/// Random orthogonal `p×p` from the QR factor of a Gaussian matrix.
pub fn random_orthogonal(p: usize, seed: u64) -> DMatrix<f64> {
    let g = Tensor::normal(&[p, p], 1.0, &mut rng::stream(seed, "orthogonal"));
    DMatrix::from_row_slice(p, p, &g.to_vec()).qr().q()
}

pub fn cka_suite() -> Verdict {
    let (mut self_err, mut invariance_err, mut oracle_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut in_range = true;
    for seed in 0..10u64 {
        let p = if seed % 2 == 0 { 8 } else { 16 };
        let x = features(50, p, seed, "x");
        let y = features(50, 24 - p, seed, "y");
        self_err = self_err.max((linear_cka(&x, &x).unwrap() - 1.0).abs());

        let base = linear_cka(&x, &y).unwrap();
        let rotated = from_dmatrix(&(to_dmatrix(&x) * random_orthogonal(p, seed) * 3.7));
        invariance_err = invariance_err.max((linear_cka(&rotated, &y).unwrap() - base).abs());
        oracle_err = oracle_err.max((hsic_cka(&x, &y) - base).abs());

        let teacher: Vec<FeatureMatrix> = (0..3).map(|l| features(50, 16, seed, &format!("t{l}"))).collect();
        let student: Vec<FeatureMatrix> = (0..3).map(|l| features(50, 8, seed, &format!("s{l}"))).collect();
        let m = cka_matrix(&teacher, &student, "random").unwrap();
        for t in 0..3 {
            for s in 0..3 {
                let v = m.get(t, s);
                in_range &= (0.0..=1.0 + 1e-9).contains(&v);
            }
        }
    }
    Verdict::new(
        self_err <= 1e-10 && invariance_err <= 1e-8 && oracle_err <= 1e-8 && in_range,
        format!(
            "self {self_err:.1e}, orthogonal+scale {invariance_err:.1e}, HSIC oracle {oracle_err:.1e}, \
             entries in range: {in_range}"
        ),
    )
}

/// `a / b` rounded to nearest, halves down.
fn round_half_down(a: usize, b: usize) -> usize {
    let exact = a as f64 / b as f64;
    let up = exact.ceil();
    if up - exact < 0.5 { up as usize } else { exact.floor() as usize }
}

pub fn mapping_suite() -> Verdict {
    let even = block_mapping(MappingKind::Even, 12, 24).unwrap();
    let doubles = (0..12).all(|i| even.teacher_block(i) == 2 * i);
    let first = block_mapping(MappingKind::First, 6, 12).unwrap();
    let last = block_mapping(MappingKind::Last, 6, 12).unwrap();
    let mut closed_forms = (0..6).all(|i| first.teacher_block(i) == i && last.teacher_block(i) == 6 + i);
    let mut injective = true;
    let mut cases = 0;
    for n_t in 1..=32 {
        for n_s in 1..=n_t {
            for kind in [MappingKind::Even, MappingKind::First, MappingKind::Last] {
                let m = block_mapping(kind, n_s, n_t).unwrap();
                let mut seen = vec![false; n_t];
                for &t in m.as_slice() {
                    injective &= t < n_t && !seen[t];
                    seen[t] = true;
                }
                closed_forms &= match kind {
                    MappingKind::Even => (0..n_s).all(|i| m.teacher_block(i) == round_half_down(i * n_t, n_s)),
                    MappingKind::First => (0..n_s).all(|i| m.teacher_block(i) == i),
                    MappingKind::Last => (0..n_s).all(|i| m.teacher_block(i) == n_t - n_s + i),
                };
                cases += 1;
            }
        }
    }
    Verdict::new(
        doubles && closed_forms && injective,
        format!("even 12→24 doubles: {doubles}, closed forms: {closed_forms}, injective over {cases} cases: {injective}"),
    )
}

pub fn trend_configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/trend")
}

pub fn load_trend_config(name: &str) -> ExperimentConfig {
    let path = trend_configs_dir().join(format!("{name}.toml"));
    ExperimentConfig::from_toml(&fs::read_to_string(&path).unwrap()).unwrap()
}

pub const TREND_METHODS: [&str; 5] = ["finetune", "lora", "slad", "two-step-lora", "two-step-probe"];

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Every trend method over the three seeds, then the ordering, accuracy and
/// efficiency checks on seed means.
pub fn trend(root: &Path) -> Verdict {
    let start = Instant::now();
    let mut runs: Vec<Vec<RunSummary>> = Vec::new();
    for name in TREND_METHODS {
        let base = load_trend_config(name);
        let mut per_seed = Vec::new();
        for cfg in with_seeds(&base, &SEEDS) {
            let dir = root.join(format!("{name}-seed{}", cfg.seed));
            per_seed.push(run_in(&cfg, &dir).unwrap().summary);
        }
        runs.push(per_seed);
    }
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let [finetune, lora, slad, two_lora, two_probe] = [0, 1, 2, 3, 4].map(|i| &runs[i]);

    let delta = |r: &Vec<RunSummary>| mean(r.iter().map(|s| s.cka.as_ref().unwrap().delta_mean_aligned));
    let (d_full, d_lora, d_slad) = (delta(finetune), delta(lora), delta(slad));
    let ordering = d_full - d_lora >= 0.005 && d_lora - d_slad >= 0.005 && d_slad >= 0.0;

    let acc = |r: &Vec<RunSummary>| 100.0 * mean(r.iter().map(|s| s.student_accuracy.unwrap()));
    let (a_slad, a_lora, a_probe) = (acc(slad), acc(two_lora), acc(two_probe));
    let accuracy = a_slad >= a_lora - 0.5 && a_slad >= a_probe - 0.5;

    let passes = |s: &RunSummary| s.passes.forward + s.passes.backward;
    let fewer_passes = slad.iter().zip(two_lora).all(|(a, b)| passes(a) < passes(b));
    let wall = |r: &Vec<RunSummary>| r.iter().map(|s| s.wall_clock_secs).sum::<f64>();
    let wall_ratio = wall(slad) / wall(two_lora);
    let efficiency = fewer_passes && wall_ratio <= 0.8;

    let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
    Verdict::new(
        ordering && accuracy && efficiency && minutes <= 30.0,
        format!(
            "a {} ΔCKA full {d_full:.4} > lora {d_lora:.4} > slad {d_slad:.4} ≥ 0; \
             b {} student acc slad {a_slad:.2} vs two-step lora {a_lora:.2}, probe {a_probe:.2}; \
             c {} passes {} vs {}, wall ratio {wall_ratio:.2}; {minutes:.1} min",
            mark(ordering),
            mark(accuracy),
            mark(efficiency),
            passes(&slad[0]),
            passes(&two_lora[0]),
        ),
    )
}

/// A few-second config: two-block encoders on 8×8 images, four classes.
pub fn tiny_run_config(strategy: Strategy, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(strategy, seed);
    cfg.teacher = EncoderConfig {
        depth: 2,
        dim: 16,
        heads: 2,
        patch_size: 4,
        image_size: 8,
        channels: 3,
        mlp_ratio: 2,
    };
    cfg.student = EncoderConfig {
        dim: 8,
        heads: 1,
        ..cfg.teacher
    };
    cfg.rank = 2;
    cfg.cls_blocks = 2;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 8;
    let s = &mut cfg.dataset.synthetic;
    s.classes = 4;
    s.train_per_class = 10;
    s.test_per_class = 4;
    s.image_size = 8;
    cfg.cka.probe_size = 8;
    cfg
}

/// Strategies covered by the determinism check, two-step once per teacher.
pub fn all_tiny_configs(seed: u64) -> Vec<ExperimentConfig> {
    let mut out: Vec<ExperimentConfig> = [Strategy::Probe, Strategy::Finetune, Strategy::Lora, Strategy::Slad]
        .into_iter()
        .map(|s| tiny_run_config(s, seed))
        .collect();
    for t in [
        slad_core::experiment::TeacherAdaptation::Probe,
        slad_core::experiment::TeacherAdaptation::Finetune,
        slad_core::experiment::TeacherAdaptation::Lora,
    ] {
        let mut c = tiny_run_config(Strategy::DistillTwoStep, seed);
        c.teacher_adaptation = Some(t);
        out.push(c);
    }
    out
}

pub fn determinism(root: &Path) -> Verdict {
    let mut differing = Vec::new();
    for cfg in all_tiny_configs(3) {
        let id = cfg.run_id();
        let a = run_in(&cfg, &root.join(format!("{id}-a"))).unwrap();
        let b = run_in(&cfg, &root.join(format!("{id}-b"))).unwrap();
        let read = |d: &Path| fs::read(d.join("metrics.jsonl")).unwrap();
        if read(&a.run_dir) != read(&b.run_dir) {
            differing.push(id);
        }
    }
    Verdict::new(
        differing.is_empty(),
        format!("7 strategy variants run twice, metrics differing: {differing:?}"),
    )
}

pub fn ablation_harness(root: &Path) -> Verdict {
    let mut base = tiny_run_config(Strategy::Slad, 0);
    base.train.epochs = 1;
    base.output_dir = Some(root.to_path_buf());
    let t = run_sweep(&base, SweepAxis::Temperature, &SEEDS).unwrap();
    let w = run_sweep(&base, SweepAxis::Weights, &SEEDS).unwrap();
    let shaped = |table: &str, settings: usize, axis: &str| {
        let lines: Vec<&str> = table.lines().collect();
        lines.len() == 2
            && lines[0].starts_with(axis)
            && lines.iter().all(|l| l.split(',').count() == settings + 1)
            && lines[1].split(',').skip(1).all(|v| v.parse::<f64>().is_ok())
    };
    let ok = shaped(&t.table, TEMPERATURES.len(), "T")
        && shaped(&w.table, WEIGHTS.len(), "weights")
        && t.run_dirs.len() == TEMPERATURES.len() * SEEDS.len()
        && w.run_dirs.len() == WEIGHTS.len() * SEEDS.len();
    Verdict::new(
        ok,
        format!(
            "{} + {} runs; temperature table {:?}; weight table {:?}",
            t.run_dirs.len(),
            w.run_dirs.len(),
            t.table,
            w.table
        ),
    )
}
