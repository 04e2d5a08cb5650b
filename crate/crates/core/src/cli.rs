//! Command-line entry points. `main.rs` only forwards to [`run`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::{self, bench_attention};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::image::load_image;
use crate::data::{load_dataset, ClassMode, LabeledDataset};
use crate::error::{Error, Result};
use crate::explain::{emit_overlay, gradcam, overlay_file_name, DEFAULT_ALPHA};
use crate::model::{Model, ModelSpec, DEFAULT_TAP};
use crate::report::EvalReport;
use crate::training::{cross_validate, evaluate, fit, sensitivity_sweep, stratified_split};

pub const CHECKPOINT_FILE: &str = "model.fgaw";

#[derive(Debug, Parser)]
#[command(name = "fganet", version, about = "Train, evaluate and explain frequency-gated attention classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write a checkpoint plus training history.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled folder tree.
    Eval(EvalArgs),
    /// Stratified k-fold cross-validation.
    Crossval(CrossvalArgs),
    /// Optimizer / batch size / learning rate sensitivity table.
    Sweep(SweepArgs),
    /// Print `path<TAB>class<TAB>confidence` for each input image.
    Infer(InferArgs),
    /// Write Grad-CAM overlays for each input image.
    Heatmap(HeatmapArgs),
    /// Time the attention blocks and count their parameters.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root with one sub-folder per class.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Class setting: 4, 3 (tumor classes only) or 2 (tumor / no tumor).
    #[arg(long, value_parser = parse_classes)]
    pub classes: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_classes(s: &str) -> std::result::Result<usize, String> {
    match s {
        "4" | "3" | "2" => Ok(s.parse().expect("digit")),
        _ => Err(format!("expected 4, 3 or 2, got `{s}`")),
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: DataArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint path (default `<out>/model.fgaw`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[command(flatten)]
    pub common: DataArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of folds (default 5).
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: DataArgs,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Feature map to explain.
    #[arg(long, default_value = DEFAULT_TAP)]
    pub tap: String,
    /// Overlay opacity in [0, 1].
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Class index to explain (default: the predicted class).
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `argv`, runs the command and returns the process exit code.
/// Usage errors exit 2 with clap's message; runtime errors print one
/// `error: kind=<kind> msg=<message>` line and exit 1.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} msg={msg}", e.kind());
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Crossval(a) => crossval(a),
        Command::Sweep(a) => sweep(a),
        Command::Infer(a) => infer(a),
        Command::Heatmap(a) => heatmap(a),
        Command::Bench(a) => bench(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Config file merged with command-line overrides.
fn resolve(common: &DataArgs, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = load_config(common.config.as_deref())?;
    if common.data.is_some() {
        cfg.data = common.data.clone();
    }
    if common.classes.is_some() {
        cfg.classes = common.classes;
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    if seed.is_some() {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn data_root(cfg: &RunConfig) -> Result<&Path> {
    let root = cfg.data.as_deref().ok_or_else(|| Error::Config("no dataset given (--data or \"data\")".into()))?;
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    Ok(root)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let out = cfg.out.as_deref().ok_or_else(|| Error::Config("no output directory given (--out or \"out\")".into()))?;
    std::fs::create_dir_all(out)?;
    Ok(out)
}

fn load_for_spec(cfg: &RunConfig, size: [usize; 2], mode: ClassMode) -> Result<LabeledDataset> {
    let data = load_dataset(data_root(cfg)?, size, mode)?;
    for s in data.skipped() {
        log::warn!("skipped {}: {}", s.path.display(), s.reason);
    }
    Ok(data)
}

/// Loads the dataset and fixes the model's class count to match it.
fn dataset_and_spec(cfg: &RunConfig) -> Result<(LabeledDataset, ModelSpec)> {
    let data = load_for_spec(cfg, cfg.model.input_size, cfg.class_mode()?)?;
    let mut spec = cfg.model.clone();
    spec.classes = data.num_classes();
    spec.input_channels = data.image_dims().2;
    spec.validate()?;
    Ok((data, spec))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn csv_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = resolve(&a.common, a.seed)?;
    let (data, spec) = dataset_and_spec(&cfg)?;
    let out = out_dir(&cfg)?;
    let tc = cfg.train_for(spec.classes);
    tc.validate()?;

    let (train_idx, val_idx) = stratified_split(data.labels(), tc.val_fraction, tc.seed)?;
    let (train_set, val_set) = (data.subset(&train_idx)?, data.subset(&val_idx)?);
    log::info!("training on {} images, validating on {}", train_set.len(), val_set.len());

    let mut model = Model::new(spec, tc.seed)?;
    let history = fit(&mut model, &train_set, Some(&val_set), &tc)?;

    let ckpt_path = a.checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    Checkpoint::new(model, data.class_names().to_vec())?.save(&ckpt_path)?;
    history.write_csv(csv_file(&out.join("history.csv"))?)?;
    write_json(&out.join("history.json"), &history)
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = resolve(&a.common, None)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let data = load_for_spec(&cfg, ck.model.spec().input_size, cfg.class_mode()?)?;
    if data.class_names() != ck.class_names.as_slice() {
        return Err(Error::Dataset(format!(
            "dataset classes {:?} do not match checkpoint classes {:?}",
            data.class_names(),
            ck.class_names
        )));
    }
    let out = out_dir(&cfg)?;
    let ev = evaluate(&ck.model, &data, cfg.train.batch_size)?;
    let mut report = EvalReport::build(&ck.class_names, data.labels(), &ev.predictions, &ev.probs, cfg.weighted_metrics)?;
    report.skipped = data.skipped().to_vec();
    report.class_sources = data.provenance().to_vec();
    report.write_all(out)
}

fn crossval(a: CrossvalArgs) -> Result<()> {
    let mut cfg = resolve(&a.common, a.seed)?;
    if a.k.is_some() {
        cfg.k = a.k;
    }
    let (data, spec) = dataset_and_spec(&cfg)?;
    let out = out_dir(&cfg)?;
    let tc = cfg.train_for(spec.classes);
    let report = cross_validate(&spec, &data, cfg.k.unwrap_or(5), &tc)?;
    report.write_csv(csv_file(&out.join("crossval.csv"))?)?;
    write_json(&out.join("crossval.json"), &report)
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = resolve(&a.common, a.seed)?;
    let (data, spec) = dataset_and_spec(&cfg)?;
    let out = out_dir(&cfg)?;
    let tc = cfg.train_for(spec.classes);
    let (train_idx, val_idx) = stratified_split(data.labels(), tc.val_fraction, tc.seed)?;
    let report = sensitivity_sweep(&spec, &data.subset(&train_idx)?, &data.subset(&val_idx)?, &cfg.sweep, &tc)?;
    for f in &report.failures {
        log::warn!("sweep cell failed: {f:?}");
    }
    report.write_csv(csv_file(&out.join("sweep.csv"))?)?;
    write_json(&out.join("sweep.json"), &report)
}

fn infer(a: InferArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let [h, w] = ck.model.spec().input_size;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for path in &a.inputs {
        let p = ck.model.predict(&load_image(path, h, w)?)?;
        writeln!(out, "{}\t{}\t{:.6}", path.display(), ck.class_names[p.class], p.confidence)?;
    }
    Ok(())
}

fn heatmap(a: HeatmapArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(Error::InvalidArgument(format!("alpha {} outside [0, 1]", a.alpha)));
    }
    let [h, w] = ck.model.spec().input_size;
    std::fs::create_dir_all(&a.out)?;
    for path in &a.inputs {
        let image = load_image(path, h, w)?;
        let class = match a.class {
            Some(c) => c,
            None => ck.model.predict(&image)?.class,
        };
        let heat = gradcam(&ck.model, &image, class, &a.tap)?;
        let name = ck
            .class_names
            .get(class)
            .ok_or_else(|| Error::InvalidArgument(format!("class {class} outside 0..{}", ck.class_names.len())))?;
        emit_overlay(&a.out.join(overlay_file_name(path, name)), &image, &heat.upsampled, a.alpha)?;
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let shapes: Vec<_> = cfg.bench.shapes.iter().map(|s| (s[0], s[1], s[2])).collect();
    let base = cfg.model.attention.for_channels(1);
    let rows = bench_attention(&shapes, cfg.bench.batch, cfg.bench.repeats, &base, a.seed)?;
    std::fs::create_dir_all(&a.out)?;
    bench::write_csv(&rows, csv_file(&a.out.join("bench.csv"))?)
}
