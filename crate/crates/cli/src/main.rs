use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use slad_core::data::{save_image_folder, synth_dataset, SynthParams};
use slad_core::experiment::report::{discover_runs, load_summaries};
use slad_core::experiment::runner::recompute_cka;
use slad_core::experiment::sweep::with_seeds;
use slad_core::experiment::{
    report_csv, report_rows, run, run_sweep, ExperimentConfig, Strategy, SweepAxis, OUTPUT_ENV,
};
use slad_core::train::MappingKind;
use slad_core::Error;

/// Shared-LoRA adaptation and distillation experiments.
#[derive(Parser)]
#[command(name = "slad", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment.
    Run(RunArgs),
    /// Compare finished runs as CSV.
    Report(ReportArgs),
    /// Recompute before/after CKA matrices of a finished run.
    Cka(CkaArgs),
    /// Write the synthetic dataset as PNG folders.
    Synth(SynthArgs),
    /// Temperature or loss-weight sweep over seeds.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct Overrides {
    /// TOML config; without it the strategy defaults are used.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    mapping: Option<MappingKind>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Output root; overrides both the config and the environment.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Run once per seed (comma separated) and print the seed-mean report.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories.
    runs: Vec<PathBuf>,
    /// Report every run found under this directory.
    #[arg(long)]
    root: Option<PathBuf>,
    /// Write the CSV here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CkaArgs {
    run: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Destination; `train/` and `test/` are created inside.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Temperature,
    Weights,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, value_enum)]
    axis: Axis,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    seeds: Vec<u64>,
    /// Write the table here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let invalid_config = err
                .chain()
                .any(|e| matches!(e.downcast_ref::<Error>(), Some(Error::Config(_) | Error::Toml(_))));
            ExitCode::from(if invalid_config { 2 } else { 1 })
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
        Command::Cka(args) => cmd_cka(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

/// Config file (or strategy defaults) with command-line overrides applied.
/// `seed_fallback` fills a missing seed when several seeds are requested.
fn load_config(o: &Overrides, seed_fallback: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let seed = o.seed.or(seed_fallback);
    let mut cfg = match &o.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut table: toml::Table = text.parse().map_err(Error::from)?;
            if let Some(seed) = seed {
                table.insert("seed".into(), toml::Value::Integer(seed as i64));
            }
            if let Some(s) = &o.strategy {
                table.insert("strategy".into(), toml::Value::String(s.clone()));
            }
            ExperimentConfig::from_toml(&toml::to_string(&table)?)?
        }
        None => {
            let Some(strategy) = &o.strategy else {
                return Err(Error::Config("strategy: give --strategy or --config".into()).into());
            };
            let Some(seed) = seed else {
                return Err(Error::Config("seed: give --seed or set it in the config".into()).into());
            };
            ExperimentConfig::new(strategy.parse::<Strategy>()?, seed)
        }
    };
    if let Some(e) = o.epochs {
        cfg.train.epochs = e;
    }
    if let Some(m) = o.mapping {
        cfg.mapping = m;
    }
    if let Some(r) = o.rank {
        cfg.rank = r;
    }
    if let Some(t) = o.temperature {
        let mut d = cfg.distill_config();
        d.temperature = t;
        cfg.distill = Some(d);
    }
    if let Some(out) = &o.output {
        // the flag wins over the environment
        std::env::remove_var(OUTPUT_ENV);
        cfg.output_dir = Some(out.clone());
    }
    if cfg.strategy == Strategy::DistillTwoStep && cfg.teacher_adaptation.is_none() {
        cfg.teacher_adaptation = Some(slad_core::experiment::TeacherAdaptation::Lora);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    if args.seeds.is_empty() {
        let cfg = load_config(&args.overrides, None)?;
        let outcome = run(&cfg)?;
        let s = &outcome.summary;
        println!("run {} -> {}", s.run_id, outcome.run_dir.display());
        if let Some(a) = s.teacher_accuracy {
            println!("teacher test accuracy {:.2}%", 100.0 * a);
        }
        if let Some(a) = s.student_accuracy {
            println!("student test accuracy {:.2}%", 100.0 * a);
        }
        if let Some(c) = &s.cka {
            println!(
                "mean aligned CKA {:.4} -> {:.4} (delta {:.4})",
                c.before_mean_aligned, c.after_mean_aligned, c.delta_mean_aligned
            );
        }
        println!(
            "passes {} forward + {} backward, {:.1}s",
            s.passes.forward, s.passes.backward, s.wall_clock_secs
        );
        return Ok(());
    }
    let base = load_config(&args.overrides, Some(args.seeds[0]))?;
    let mut summaries = Vec::new();
    for cfg in with_seeds(&base, &args.seeds) {
        let outcome = run(&cfg)?;
        eprintln!("finished {}", outcome.summary.run_id);
        summaries.push(outcome.summary);
    }
    print!("{}", report_csv(&report_rows(&summaries, &[])));
    Ok(())
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<()> {
    let mut dirs = args.runs.clone();
    if let Some(root) = &args.root {
        dirs.extend(discover_runs(root).with_context(|| format!("listing {}", root.display()))?);
    }
    if dirs.is_empty() {
        bail!("no runs given");
    }
    let (present, missing) = load_summaries(&dirs);
    for m in &missing {
        eprintln!("absent: {}", m.display());
    }
    emit(&report_csv(&report_rows(&present, &missing)), args.out.as_deref())
}

fn emit(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_cka(args: CkaArgs) -> anyhow::Result<()> {
    let (before, after, summary) = recompute_cka(&args.run)?;
    let dir = args.run.join("cka");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("before.csv"), before.to_csv())?;
    fs::write(dir.join("after.csv"), after.to_csv())?;
    fs::write(
        dir.join("delta.csv"),
        slad_core::cka::delta_cka(&before, &after)?.to_csv(),
    )?;
    println!(
        "probe {} samples: mean aligned CKA {:.6} -> {:.6} (delta {:.6})",
        summary.probe_size, summary.before_mean_aligned, summary.after_mean_aligned, summary.delta_mean_aligned
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let mut p = SynthParams::default();
    if let Some(v) = args.classes {
        p.classes = v;
    }
    if let Some(v) = args.train_per_class {
        p.train_per_class = v;
    }
    if let Some(v) = args.test_per_class {
        p.test_per_class = v;
    }
    if let Some(v) = args.image_size {
        p.image_size = v;
    }
    let (train, test) = synth_dataset(&p, args.seed)?;
    let a = save_image_folder(&train, &args.out.join("train"))?;
    let b = save_image_folder(&test, &args.out.join("test"))?;
    println!(
        "wrote {} train and {} test images of {} classes to {}",
        a.len(),
        b.len(),
        p.classes,
        args.out.display()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<()> {
    if args.seeds.is_empty() {
        bail!("--seeds must not be empty");
    }
    let base = load_config(&args.overrides, Some(args.seeds[0]))?;
    let axis = match args.axis {
        Axis::Temperature => SweepAxis::Temperature,
        Axis::Weights => SweepAxis::Weights,
    };
    let result = run_sweep(&base, axis, &args.seeds)?;
    emit(&result.table, args.out.as_deref())
}
