//! `nodulenet`: command-line front end for the nodule classification pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nodulenet_core::evaluation::Aggregation;
use nodulenet_core::pipeline::{cmd_extract, cmd_predict, cmd_report, cmd_train_eval};
use nodulenet_core::synthetic::{paper_count_manifest, write_blank_volumes, write_sphere_dataset, SphereConfig};
use nodulenet_core::volume::load_volume;
use nodulenet_core::{annotations, BoundingBox, Checkpoint, ExperimentConfig, Task};

#[derive(Parser)]
#[command(name = "nodulenet", version, about = "3D CNN lung nodule suspicion classification")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Prepare volumes and write canonical patch shards per fold.
    Extract(ConfigArgs),
    /// Train one model per fold and write pooled validation reports.
    Train(ConfigArgs),
    /// Score one nodule with a trained checkpoint.
    Predict(PredictArgs),
    /// Recompute reports from a predictions file.
    Report(ReportArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Multiclass4,
    Multiclass5,
    Binary,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Multiclass4 => Task::Multiclass4,
            TaskArg::Multiclass5 => Task::Multiclass5,
            TaskArg::Binary => Task::Binary,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Sum,
    Max,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Aggregation {
        match a {
            AggregationArg::Sum => Aggregation::Sum,
            AggregationArg::Max => Aggregation::Max,
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long, value_enum)]
    aggregation: Option<AggregationArg>,
    /// Keep nodules whose aggregated label is Indeterminate.
    #[arg(long)]
    keep_indeterminate: bool,
    /// Disable bounding-box jitter during training.
    #[arg(long)]
    no_jitter: bool,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    crop_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    volumes: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Decision threshold for binary metrics.
    #[arg(long)]
    threshold: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.task {
            cfg.task = t.into();
        }
        if let Some(a) = self.aggregation {
            cfg.aggregation = a.into();
        }
        if self.keep_indeterminate {
            cfg.keep_indeterminate = true;
        }
        if self.no_jitter {
            cfg.augment.jitter_enabled = false;
        }
        if let Some(k) = self.folds {
            cfg.folds = k;
        }
        if let Some(c) = self.crop_size {
            cfg.crop_size = c;
        }
        if let Some(e) = self.epochs {
            cfg.train.max_epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(t) = self.threshold {
            cfg.threshold = t;
        }
        for (field, value) in [
            (&mut cfg.volumes_dir, &self.volumes),
            (&mut cfg.manifest, &self.manifest),
            (&mut cfg.output_dir, &self.output),
        ] {
            if let Some(v) = value {
                *field = v.clone();
            }
        }
        Ok(cfg.resolve()?)
    }
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Volume payload (`.raw`) or sidecar (`.json`).
    #[arg(long)]
    volume: PathBuf,
    /// `x_min,y_min,z_min,x_max,y_max,z_max` in voxels of the given volume.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    bbox: Vec<i64>,
    #[arg(long, value_enum, default_value = "sum")]
    aggregation: AggregationArg,
    /// Config supplying target spacing and normalization.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Also write reports and confusion matrices here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// Bright vs faint spheres, one per volume, binary-separable.
    Spheres,
    /// Manifest with the LIDC-IDRI class mix over blank volumes.
    Counts,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "spheres")]
    kind: SynthKind,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<serde_json::Value> {
    match args.kind {
        SynthKind::Spheres => {
            let mut cfg = SphereConfig::default();
            if let Some(n) = args.count {
                cfg.count = n;
            }
            let manifest = write_sphere_dataset(&cfg, args.seed, &args.out)?;
            Ok(serde_json::json!({ "manifest": manifest, "volumes": cfg.count }))
        }
        SynthKind::Counts => {
            let shape = [24, 24, 24];
            let mut records = paper_count_manifest(args.seed, shape);
            if let Some(n) = args.count {
                records.truncate(n);
            }
            write_blank_volumes(&records, shape, &args.out.join("volumes"))?;
            let manifest = args.out.join("manifest.json");
            annotations::save_manifest(&records, &manifest)?;
            Ok(serde_json::json!({ "manifest": manifest, "records": records.len() }))
        }
    }
}

fn predict(args: &PredictArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let Ok(coords) = <[i64; 6]>::try_from(args.bbox.as_slice()) else {
        bail!("--bbox needs six comma-separated integers");
    };
    let bbox = BoundingBox::new(coords)?;
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let volume = load_volume(&args.volume)?;
    let out = cmd_predict(
        &checkpoint,
        &volume,
        &bbox,
        args.aggregation.into(),
        cfg.target_spacing,
        &cfg.normalization,
    )?;
    print_json(&out)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Extract(a) => print_json(&cmd_extract(&a.resolve()?)?),
        Command::Train(a) => print_json(&cmd_train_eval(&a.resolve()?)?),
        Command::Predict(a) => predict(a),
        Command::Report(a) => {
            let reports = cmd_report(&a.predictions, a.task.into(), a.threshold, a.out.as_deref().map(Path::new))?;
            print_json(&reports)
        }
        Command::Synth(a) => print_json(&synth(a)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("{}", serde_json::json!({ "error": chain.join(": ") }));
            ExitCode::FAILURE
        }
    }
}
