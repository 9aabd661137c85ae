//! Command implementations behind the `headposr` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use headposr::checkpoint::{Checkpoint, Selection};
use headposr::config::{apply, parse_lines, render, KvSection};
use headposr::data::{
    draw_pose, filter_angle_range, load_dataset, read_image, split_dataset, write_image, AugmentConfig, Dataset,
    DatasetManifest, Sample, Split, SynthConfig, DEFAULT_ANGLE_LIMIT,
};
use headposr::model::ModelConfig;
use headposr::train::{ablation_run, evaluate, train, AblationAxis, Metrics, TrainConfig, EVAL_BATCH_SIZE};
use headposr::{Error, HeadPosr, Tensor};

/// Train and test fractions of the split protocol.
pub const SPLIT_FRACTIONS: (f64, f64) = (0.7, 0.3);

#[derive(Debug, Parser)]
#[command(
    name = "headposr",
    version,
    about = "Head pose estimation with a CNN backbone and a transformer encoder"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train a model and write checkpoints and a history CSV.
    Train(TrainArgs),
    /// Print per-angle MAE of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train one model per value of a hyperparameter and tabulate MAE.
    Ablate(AblateArgs),
    /// Predict the pose in one image.
    Infer(InferArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: i64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    /// Shuffle one directory into 70% train and 30% test.
    Split,
    /// Train on --data and test on --test-data.
    Cross,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Flat key=value file with model, training and augmentation keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path. The final-epoch weights go next to it as
    /// `<stem>.final.ckpt` and the history as `<stem>.history.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Protocol::Split)]
    pub protocol: Protocol,
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    /// Fraction of the data held out for epoch selection (split protocol).
    #[arg(long, default_value_t = 0.0)]
    pub val_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalSplit {
    /// The held-out 30% of the split protocol, reproduced from the
    /// checkpoint's seed.
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
    pub split: EvalSplit,
    /// Also write the metrics CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub axis: String,
    /// Comma-separated values.
    #[arg(long)]
    pub values: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Write the image with the predicted axes drawn on it.
    #[arg(long)]
    pub render: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Every setting a config file can hold.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> headposr::Result<Self> {
        let mut c = RunConfig::default();
        let lines = parse_lines(text, path)?;
        apply(&lines, &mut [&mut c.model, &mut c.train, &mut c.augment], path)?;
        c.model.validate()?;
        c.train.validate()?;
        c.augment.validate()?;
        Ok(c)
    }

    pub fn load(path: Option<&Path>) -> headposr::Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| io_error(format!("reading {}", p.display()), e))?;
                Self::parse(&text, p)
            }
        }
    }

    pub fn render(&self) -> String {
        let sections: [&dyn KvSection; 3] = [&self.model, &self.train, &self.augment];
        render(&sections)
    }
}

fn io_error(context: String, source: std::io::Error) -> Error {
    Error::Io { context, source }
}

fn write_text(path: &Path, text: &str) -> headposr::Result<()> {
    fs::write(path, text).map_err(|e| io_error(format!("writing {}", path.display()), e))
}

/// `<dir>/<stem>.<suffix>` for a checkpoint path.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a).map(|m| println!("{}", metrics_table(&m))),
        Command::Eval(a) => cmd_eval(&a).map(|m| println!("{}", metrics_table(&m))),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Infer(a) => cmd_infer(&a).map(|p| println!("{p}")),
    }
}

pub fn metrics_table(m: &Metrics) -> String {
    format!("yaw,pitch,roll,mae\n{}", m.csv_row())
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    if a.count <= 0 {
        return Err(CliError::Usage(format!("--count must be positive, got {}", a.count)));
    }
    let cfg = SynthConfig {
        count: a.count as usize,
        size: a.size,
        seed: a.seed,
        noise_level: a.noise,
    };
    cfg.write(&a.out)?;
    log::info!("wrote {} samples to {}", cfg.count, a.out.display());
    Ok(())
}

fn load_filtered(root: &Path) -> headposr::Result<DatasetManifest> {
    let m = load_dataset(root)?;
    if m.skipped > 0 {
        log::warn!("{} rows skipped for missing images", m.skipped);
    }
    let filtered = filter_angle_range(&m, DEFAULT_ANGLE_LIMIT);
    if filtered.len() < m.len() {
        log::info!(
            "dropped {} rows outside ±{DEFAULT_ANGLE_LIMIT}°",
            m.len() - filtered.len()
        );
    }
    Ok(filtered)
}

/// Train/test (or train/val/test) assignment of the split protocol.
pub fn protocol_split(manifest: &DatasetManifest, val_fraction: f64, seed: u64) -> headposr::Result<DatasetManifest> {
    let (train, test) = SPLIT_FRACTIONS;
    if val_fraction > 0.0 {
        split_dataset(manifest, &[train - val_fraction, val_fraction, test], seed)
    } else {
        split_dataset(manifest, &[train, test], seed)
    }
}

fn all_as(manifest: &DatasetManifest, split: Split) -> DatasetManifest {
    DatasetManifest {
        splits: vec![split; manifest.len()],
        ..manifest.clone()
    }
}

/// Returns the final-epoch metrics on the test data.
pub fn cmd_train(a: &TrainArgs) -> CliResult<Metrics> {
    if !(0.0..SPLIT_FRACTIONS.0).contains(&a.val_fraction) {
        return Err(CliError::Usage(format!(
            "--val-fraction {} is out of range",
            a.val_fraction
        )));
    }
    let cfg = RunConfig::load(a.config.as_deref())?;
    let size = cfg.model.input_size;
    let data = match a.protocol {
        Protocol::Split => {
            let m = protocol_split(&load_filtered(&a.data)?, a.val_fraction, cfg.train.seed)?;
            Dataset::load(&m, size)?
        }
        Protocol::Cross => {
            let test_root = a
                .test_data
                .as_ref()
                .ok_or_else(|| CliError::Usage("--protocol cross requires --test-data".into()))?;
            let train_m = all_as(&load_filtered(&a.data)?, Split::Train);
            let test_m = all_as(&load_filtered(test_root)?, Split::Test);
            let tr = Dataset::load(&train_m, size)?;
            let te = Dataset::load(&test_m, size)?;
            Dataset::from_parts(tr.samples, vec![], te.samples)
        }
    };
    let mut model = HeadPosr::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
    let report = train(&mut model, &data, &cfg.train, &cfg.augment)?;
    let test = data.split(Split::Test);
    let final_metrics = evaluate(&model, &test, EVAL_BATCH_SIZE)?;

    let mut final_ckpt = Checkpoint::from_model(&model, &cfg.train, &cfg.augment, Selection::Final);
    final_ckpt.epoch = Some(cfg.train.epochs - 1);
    final_ckpt.metrics = Some(final_metrics);
    final_ckpt.optimizer = Some(report.optimizer.clone());
    let primary = match &report.best {
        Some(best) => Checkpoint {
            selection: Selection::BestVal,
            epoch: Some(best.epoch),
            metrics: Some(best.metrics),
            params: best.params.clone(),
            buffers: best.buffers.clone(),
            optimizer: None,
            ..final_ckpt.clone()
        },
        None => final_ckpt.clone(),
    };
    primary.save(&a.out)?;
    final_ckpt.save(&sibling(&a.out, "final.ckpt"))?;
    write_text(&sibling(&a.out, "history.csv"), &report.history_csv())?;
    Ok(final_metrics)
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<Metrics> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let model = ckpt.to_model()?;
    let manifest = load_filtered(&a.data)?;
    let manifest = match a.split {
        EvalSplit::All => all_as(&manifest, Split::Test),
        EvalSplit::Test => protocol_split(&manifest, 0.0, ckpt.train.seed)?,
    };
    let data = Dataset::load(&manifest, ckpt.model.input_size)?;
    let metrics = evaluate(&model, &data.split(Split::Test), EVAL_BATCH_SIZE)?;
    if let Some(out) = &a.out {
        write_text(out, &format!("{}\n", metrics_table(&metrics)))?;
    }
    Ok(metrics)
}

pub fn parse_values(list: &str) -> CliResult<Vec<String>> {
    let values: Vec<String> = list
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(CliError::Usage("--values is empty".into()));
    }
    Ok(values)
}

pub fn cmd_ablate(a: &AblateArgs) -> CliResult<()> {
    let axis: AblationAxis = a.axis.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let values = parse_values(&a.values)?;
    let cfg = RunConfig::load(a.config.as_deref())?;
    let manifest = protocol_split(&load_filtered(&a.data)?, 0.0, cfg.train.seed)?;
    let data = Dataset::load(&manifest, cfg.model.input_size)?;
    let table = ablation_run(
        &cfg.model,
        &cfg.train,
        &cfg.augment,
        axis,
        &values,
        &data,
        cfg.train.seed,
    )?;
    write_text(&a.out, &table.to_csv())?;
    Ok(())
}

/// Predicts a pose and optionally writes the overlay.
pub fn cmd_infer(a: &InferArgs) -> CliResult<headposr::HeadPose> {
    let model = Checkpoint::load(&a.ckpt)?.to_model()?;
    let size = model.config().input_size;
    let canvas = read_image(&a.image, Some(size))?;
    let sample = Sample::from_canvas(canvas, Default::default(), a.image.display().to_string())?;
    let image = sample.image.reshape(&[1, 3, size, size])?;
    let pose = predict_one(&model, &image)?;
    if let Some(out) = &a.render {
        let mut original = read_image(&a.image, None)?;
        let (w, h) = (original.width as f64, original.height as f64);
        draw_pose(&mut original, pose, [w / 2.0, h / 2.0], 0.4 * w.min(h), false);
        write_image(out, &original)?;
    }
    Ok(pose)
}

fn predict_one(model: &HeadPosr<f32>, image: &Tensor<f32>) -> headposr::Result<headposr::HeadPose> {
    Ok(model.predict(image)?[0])
}
