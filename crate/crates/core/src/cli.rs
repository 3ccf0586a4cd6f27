//! The `est-lab` command line: generate, train, eval, sweep and report.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint;
use crate::config::ExperimentSpec;
use crate::error::{Error, Result};
use crate::stream::{generate_with_data, write_dataset, Dataset, Split, Task, DATA_DIR_ENV};
use crate::training::{
    evaluate, render_csv, render_text, run_with, sweep, Report, ResultsStore, RunStatus,
    SweepOptions,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Usage(_) => EXIT_CONFIG,
        Error::Data { .. } | Error::Format(_) | Error::Io { .. } => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "est-lab",
    version,
    about = "Echo State Transformer experiments on the STREAM benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a task's train/valid/test splits and write them to disk.
    Generate(GenerateArgs),
    /// Train one model on one task and record the run.
    Train(TrainArgs),
    /// Score a saved checkpoint on a task split.
    Eval(EvalArgs),
    /// Run a grid of tasks, configs, learning rates and seeds.
    Sweep(SweepArgs),
    /// Summarise a results store into BWA and BOA tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task name, overriding or standing in for the [task] table.
    #[arg(long)]
    task: Option<String>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
    /// Data seed; defaults to the task's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Published model configuration name, e.g. est-1-1k.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    /// Run seed (model initialisation and shuffling).
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the results store and checkpoint.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Data seed; defaults to the task's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    /// Continue a results store, skipping finished cells.
    #[arg(long)]
    resume: bool,
    /// Directory for the results store (overrides sweep.results).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stop after this many new runs.
    #[arg(long)]
    max_runs: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Results store written by train or sweep.
    #[arg(long)]
    results: PathBuf,
    /// Also write report.txt and report.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print CSV instead of the text tables.
    #[arg(long)]
    csv: bool,
}

fn load_spec(path: Option<&Path>) -> Result<ExperimentSpec> {
    path.map_or_else(|| Ok(ExperimentSpec::default()), ExperimentSpec::load)
}

fn data_dir(spec: &ExperimentSpec) -> Option<PathBuf> {
    spec.data_dir
        .clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
}

fn task_arg(common: &Common) -> Result<Option<Task>> {
    common.task.as_deref().map(Task::parse).transpose()
}

fn load_data(spec: &ExperimentSpec, common: &Common, seed: Option<u64>) -> Result<Dataset> {
    let cfg = spec.task_config(task_arg(common)?)?;
    let seed = seed.unwrap_or(cfg.seed);
    generate_with_data(&cfg, seed, data_dir(spec).as_deref())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let spec = load_spec(a.common.config.as_deref())?;
    let data = load_data(&spec, &a.common, a.seed)?;
    let paths = write_dataset(&data, &a.out)?;
    let d = data.dims;
    println!(
        "{}: train={} valid={} test={} input_dim={} output_dim={} length={}",
        data.config.task,
        data.train.len(),
        data.valid.len(),
        data.test.len(),
        d.input_dim,
        d.output_dim,
        d.length
    );
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let spec = load_spec(a.common.config.as_deref())?;
    let task = spec.task_config(task_arg(&a.common)?)?;
    let named = spec.model(a.model.as_deref())?;
    let train = spec.train_config(&task, a.lr, a.seed)?;
    let data = generate_with_data(&task, task.seed, data_dir(&spec).as_deref())?;
    let (record, model) = run_with(&task, &data, &named, &train);
    let store = ResultsStore::new(a.out.join("results.txt"));
    store.append(&record)?;
    println!("{}", record.to_line());
    let model = match (&record.status, model) {
        (RunStatus::Ok, Some(m)) => m,
        (RunStatus::Failed(why), _) => return Err(Error::Training(why.clone())),
        (RunStatus::Ok, None) => return Err(Error::Training("training produced no model".into())),
    };
    let path = a.out.join(format!(
        "{}.{}.lr{}.seed{}.ckpt",
        task.task, named.name, train.learning_rate, train.seed
    ));
    checkpoint::save(&model, &path)?;
    println!("checkpoint {}", path.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let spec = load_spec(a.common.config.as_deref())?;
    let data = load_data(&spec, &a.common, a.seed)?;
    let model = checkpoint::load(&a.checkpoint)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Valid => Split::Valid,
        SplitArg::Test => Split::Test,
    };
    let error = evaluate(&model, data.split(split))?;
    println!("{} {} error={error}", data.config.task, split.name());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let spec = ExperimentSpec::load(&a.config)?;
    let plan = spec.sweep_plan()?;
    let s = spec.sweep.clone().unwrap_or_default();
    let path = match (&a.out, &s.results) {
        (Some(dir), _) => dir.join("results.txt"),
        (None, Some(p)) => p.clone(),
        (None, None) => PathBuf::from("results.txt"),
    };
    let store = ResultsStore::new(path);
    let opts = SweepOptions {
        workers: a.workers.or(s.workers).unwrap_or(1),
        resume: a.resume,
        max_runs: a.max_runs,
        data_dir: data_dir(&spec),
        verbose: true,
    };
    let produced = sweep(&plan, &store, &opts)?;
    let failed = produced.iter().filter(|r| !r.is_ok()).count();
    println!(
        "{} cells in grid, {} run now ({} failed), results in {}",
        plan.len(),
        produced.len(),
        failed,
        store.path().display()
    );
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let records = ResultsStore::new(&a.results).load()?;
    let report = Report::from_records(&records);
    let (text, csv) = (render_text(&report), render_csv(&report));
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("report.txt", &text), ("report.csv", &csv)] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
    }
    print!("{}", if a.csv { csv } else { text });
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
