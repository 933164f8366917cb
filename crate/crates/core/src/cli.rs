//! `tinysiamese` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 internal
//! invariant violation.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{balanced_pairs, load_dataset_auto, save_dataset, Dataset, FeatureFormat, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{
    bench_matching, bench_training, classify_gallery_probe, evaluate_scores, evaluate_verification,
    sweep_scores, sweep_table, Aggregation, Report, ReportFormat,
};
use crate::model::{load_model, save_model, DistanceMode, ModelConfig, TinyModel, DEFAULT_THRESHOLD};
use crate::training::{train_with, AdamConfig, TrainConfig};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "tinysiamese", version, about = "Siamese verification over precomputed feature vectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a clustered synthetic feature file.
    Gen(GenArgs),
    /// Train a model on a feature file and write a checkpoint and loss trace.
    Train(TrainArgs),
    /// Score vector pairs with a trained model.
    Verify(VerifyArgs),
    /// Gallery/probe classification with a trained model.
    Classify(ClassifyArgs),
    /// Time matching and a short training run.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Binary,
    Text,
}

impl From<FormatArg> for FeatureFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Binary => FeatureFormat::Binary,
            FormatArg::Text => FeatureFormat::Text,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportArg {
    Table,
    Kv,
}

impl From<ReportArg> for ReportFormat {
    fn from(r: ReportArg) -> Self {
        match r {
            ReportArg::Table => ReportFormat::Table,
            ReportArg::Kv => ReportFormat::KeyValue,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AggregationArg {
    Mean,
    Max,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::Mean => Aggregation::Mean,
            AggregationArg::Max => Aggregation::Max,
        }
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 20)]
    subjects: usize,
    #[arg(long, default_value_t = 6)]
    samples: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = FormatArg::Binary)]
    format: FormatArg,
    #[arg(long)]
    out: PathBuf,
    /// Also write a run manifest here.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelShape {
    /// Backbone layer count; 2 is the standard n -> n/2 -> n shape.
    #[arg(long, default_value_t = 2)]
    depth: usize,
    /// Drop the elementwise-product half of the distance vector.
    #[arg(long)]
    no_hadamard: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training feature file (binary or text, detected).
    #[arg(long)]
    train: PathBuf,
    /// Validation feature file; the training file is scored when absent.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Loss trace output path; defaults to `<out>.trace.tsv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 120)]
    epochs: usize,
    #[arg(long, default_value_t = 18)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Balanced pairs per epoch; defaults to one batch per training record.
    #[arg(long)]
    pairs_per_epoch: Option<usize>,
    /// Balanced batches drawn for the final evaluation.
    #[arg(long, default_value_t = 100)]
    eval_batches: usize,
    /// Skip the first-batch finite-difference gradient check.
    #[arg(long)]
    no_grad_check: bool,
    #[command(flatten)]
    shape: ModelShape,
    #[arg(long, value_enum, default_value_t = ReportArg::Table)]
    report: ReportArg,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated vector; requires --right.
    #[arg(long, requires = "right", conflicts_with = "pairs")]
    left: Option<String>,
    #[arg(long, requires = "left")]
    right: Option<String>,
    /// Pair file: `label,x1..xn,y1..yn` (labeled) or `x1..xn,y1..yn` per line.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Also emit a threshold sweep with this many interior points.
    #[arg(long)]
    sweep: Option<usize>,
    #[arg(long, value_enum, default_value_t = ReportArg::Table)]
    report: ReportArg,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    gallery: PathBuf,
    #[arg(long)]
    probes: PathBuf,
    #[arg(long, value_enum, default_value_t = AggregationArg::Mean)]
    aggregation: AggregationArg,
    #[arg(long, value_enum, default_value_t = ReportArg::Table)]
    report: ReportArg,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Checkpoint to time; a freshly initialized model of --dim otherwise.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Feature file to draw pairs from; synthetic data otherwise.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 18)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Pairs per epoch for the training timing.
    #[arg(long)]
    pairs_per_epoch: Option<usize>,
    /// Skip the 10-epoch training timing.
    #[arg(long)]
    no_train: bool,
    #[command(flatten)]
    shape: ModelShape,
    #[arg(long, value_enum, default_value_t = ReportArg::Table)]
    report: ReportArg,
}

/// Everything needed to repeat a run, written as `key=value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub artifacts: Vec<PathBuf>,
    pub wall_seconds: f64,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        Self {
            command: command.to_owned(),
            ..Default::default()
        }
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_owned(), value.to_string()));
    }

    pub fn to_kv(&self) -> String {
        let mut out = format!("command={}\n", self.command);
        if let Some(seed) = self.seed {
            writeln!(out, "seed={seed}").unwrap();
        }
        for (k, v) in &self.config {
            writeln!(out, "config.{k}={v}").unwrap();
        }
        for p in &self.inputs {
            writeln!(out, "input={}", p.display()).unwrap();
        }
        for p in &self.artifacts {
            writeln!(out, "artifact={}", p.display()).unwrap();
        }
        writeln!(out, "wall_seconds={}", self.wall_seconds).unwrap();
        out
    }

    fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_kv())?;
        Ok(())
    }
}

/// Maps a library error to its process exit code.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidParameter(_) => EXIT_USAGE,
        Error::GradientCheck { .. } | Error::StaleActivations => EXIT_INTERNAL,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("threshold must be in [0, 1], got {t}")));
    }
    Ok(())
}

fn model_config(dim: usize, shape: &ModelShape) -> ModelConfig {
    let distance = if shape.no_hadamard {
        DistanceMode::SquaredDifferenceOnly
    } else {
        DistanceMode::Full
    };
    ModelConfig::new(dim).with_depth(shape.depth).with_distance(distance)
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let start = Instant::now();
    let spec = SyntheticSpec {
        subjects: a.subjects,
        samples_per_subject: a.samples,
        dim: a.dim,
        spread: a.spread,
        noise: a.noise,
        seed: a.seed,
    };
    let dataset = spec.generate()?;
    save_dataset(&dataset, &a.out, a.format.into())?;
    println!(
        "wrote {} records ({} subjects, dim {}) to {}",
        dataset.len(),
        dataset.subject_count(),
        dataset.dim(),
        a.out.display()
    );
    if let Some(path) = &a.manifest {
        let mut m = RunManifest::new("gen");
        m.seed = Some(a.seed);
        m.set("subjects", a.subjects);
        m.set("samples", a.samples);
        m.set("dim", a.dim);
        m.set("spread", a.spread);
        m.set("noise", a.noise);
        m.set("format", format!("{:?}", a.format).to_lowercase());
        m.artifacts.push(a.out.clone());
        m.wall_seconds = start.elapsed().as_secs_f64();
        m.write(path)?;
    }
    Ok(())
}

fn default_trace_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".trace.tsv");
    PathBuf::from(s)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let start = Instant::now();
    check_threshold(a.threshold)?;
    if a.eval_batches == 0 {
        return Err(Error::InvalidParameter("eval batches must be >= 1".into()));
    }
    let train_set = load_dataset_auto(&a.train)?;
    let val_set = match &a.val {
        Some(p) => {
            let v = load_dataset_auto(p)?;
            if v.dim() != train_set.dim() {
                return Err(Error::dim("validation file", train_set.dim(), v.dim()));
            }
            Some(v)
        }
        None => None,
    };

    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed: a.seed,
        pairs_per_epoch: a.pairs_per_epoch,
        grad_check: !a.no_grad_check,
    };
    config.validate()?;
    let model = TinyModel::init(model_config(train_set.dim(), &a.shape), a.seed)?;

    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "epoch\tmean_loss\tseconds")?;
    let (model, trace) = train_with(model, &train_set, &config, |r| {
        let _ = writeln!(stdout, "{}\t{:.6}\t{:.3}", r.epoch, r.mean_loss, r.seconds);
    })?;
    drop(stdout);

    let trace_path = a.trace.clone().unwrap_or_else(|| default_trace_path(&a.out));
    save_model(&model, &a.out)?;
    fs::write(&trace_path, trace.to_loss_table())?;

    let (eval_set, which) = match &val_set {
        Some(v) => (v, "validation"),
        None => (&train_set, "training"),
    };
    let pairs = balanced_pairs(eval_set, a.eval_batches, a.batch_size / 2, a.seed ^ 0x5eed_e7a1)?;
    let report = evaluate_verification(&model, eval_set, &pairs, a.threshold)?;
    println!("{which} verification ({} balanced pairs):", pairs.len());
    print!("{}", report.render(a.report.into()));
    println!("checkpoint {}", a.out.display());
    println!("trace      {}", trace_path.display());

    if let Some(path) = &a.manifest {
        let mut m = RunManifest::new("train");
        m.seed = Some(a.seed);
        m.set("epochs", a.epochs);
        m.set("batch_size", a.batch_size);
        m.set("lr", a.lr);
        m.set("threshold", a.threshold);
        m.set(
            "pairs_per_epoch",
            a.pairs_per_epoch.map_or("records".to_owned(), |p| p.to_string()),
        );
        m.set("eval_batches", a.eval_batches);
        m.set("grad_check", !a.no_grad_check);
        m.set("depth", a.shape.depth);
        m.set("hadamard", !a.shape.no_hadamard);
        m.inputs.push(a.train.clone());
        m.inputs.extend(a.val.clone());
        m.artifacts.push(a.out.clone());
        m.artifacts.push(trace_path);
        m.wall_seconds = start.elapsed().as_secs_f64();
        m.write(path)?;
    }
    Ok(())
}

fn parse_vector(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            let v: f64 = t.trim().parse().map_err(|_| Error::Parse {
                line: 1,
                message: format!("{what}: bad number {t:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite("vector argument"));
            }
            Ok(v)
        })
        .collect()
}

/// One scored pair from a pair file; `label` is `None` for unlabeled files.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub label: Option<u8>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// Reads a pair file for vectors of length `dim`. Every line must be labeled
/// (`2 * dim + 1` fields) or every line unlabeled (`2 * dim` fields).
pub fn parse_pair_file(text: &str, dim: usize) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    let mut labeled: Option<bool> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let this_labeled = match fields.len() {
            n if n == 2 * dim + 1 => true,
            n if n == 2 * dim => false,
            n => {
                return Err(Error::Arity {
                    line,
                    expected: labeled.map_or(2 * dim + 1, |l| 2 * dim + usize::from(l)),
                    actual: n,
                })
            }
        };
        if let Some(l) = labeled {
            if l != this_labeled {
                return Err(Error::Parse {
                    line,
                    message: "mixes labeled and unlabeled pairs".into(),
                });
            }
        }
        labeled = Some(this_labeled);

        let mut values = fields.iter();
        let label = if this_labeled {
            let t = values.next().unwrap();
            match *t {
                "0" => Some(0),
                "1" => Some(1),
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: format!("label must be 0 or 1, got {t:?}"),
                    })
                }
            }
        } else {
            None
        };
        let nums = values
            .map(|t| match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    line,
                    message: format!("bad value {t:?}"),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        let (left, right) = nums.split_at(dim);
        out.push(PairRecord {
            label,
            left: left.to_vec(),
            right: right.to_vec(),
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyFile);
    }
    Ok(out)
}

fn cmd_verify(a: VerifyArgs) -> Result<()> {
    check_threshold(a.threshold)?;
    let model = load_model(&a.model)?;
    let fmt: ReportFormat = a.report.into();

    if let (Some(l), Some(r)) = (&a.left, &a.right) {
        let left = parse_vector(l, "--left")?;
        let right = parse_vector(r, "--right")?;
        let p = model.score(&left, &right)?.p();
        println!("{p:.17}\t{}", if p >= a.threshold { "similar" } else { "different" });
        return Ok(());
    }
    let Some(path) = &a.pairs else {
        return Err(Error::InvalidParameter("give --left/--right or --pairs".into()));
    };
    let text = fs::read_to_string(path)?;
    let records = parse_pair_file(&text, model.dim())?;
    let mut scores = Vec::with_capacity(records.len());
    for rec in &records {
        scores.push(model.score(&rec.left, &rec.right)?.p());
    }
    for (i, p) in scores.iter().enumerate() {
        println!("{i}\t{p:.17}");
    }
    if records[0].label.is_some() {
        let labels: Vec<u8> = records.iter().map(|r| r.label.unwrap()).collect();
        let report = evaluate_scores(&scores, &labels, a.threshold)?;
        print!("{}", report.render(fmt));
        if let Some(steps) = a.sweep {
            print!("{}", sweep_table(&sweep_scores(&scores, &labels, steps)?));
        }
    }
    Ok(())
}

fn cmd_classify(a: ClassifyArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let gallery = load_dataset_auto(&a.gallery)?;
    let probes = load_dataset_auto(&a.probes)?;
    let report = classify_gallery_probe(&model, &gallery, &probes, a.aggregation.into())?;
    if !report.missing.is_empty() {
        eprintln!(
            "warning: {} probes belong to classes absent from the gallery and were excluded",
            report.missing.len()
        );
    }
    print!("{}", report.render(a.report.into()));
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let model = match &a.model {
        Some(p) => load_model(p)?,
        None => TinyModel::init(model_config(a.dim, &a.shape), a.seed)?,
    };
    let dataset: Dataset = match &a.features {
        Some(p) => load_dataset_auto(p)?,
        None => SyntheticSpec {
            subjects: 20,
            samples_per_subject: 6,
            dim: model.dim(),
            spread: 1.0,
            noise: 0.05,
            seed: a.seed,
        }
        .generate()?,
    };
    let mut report = bench_matching(&model, &dataset, a.trials, a.seed)?;
    if !a.no_train {
        let config = TrainConfig {
            batch_size: a.batch_size,
            adam: AdamConfig {
                lr: a.lr,
                ..AdamConfig::default()
            },
            seed: a.seed,
            pairs_per_epoch: a.pairs_per_epoch,
            ..TrainConfig::default()
        };
        report.train10_seconds = Some(bench_training(&model, &dataset, &config)?);
    }
    print!("{}", report.render(a.report.into()));
    Ok(())
}
