mod manifest;

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use arml::attack::{empirical_curve, DEFAULT_STEPS};
use arml::trainer::train_with;
use arml::{
    certified_curve, clean_error, harmonize, load_libsvm, sample_subset, CertifyMode, Dataset, KnnModel, LossFn,
    MetricFactor, MinMaxScaler, Objective, RobustErrorCurve, TrainConfig,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use grid::grid_points;
use serde::Serialize;

use manifest::Recorder;

#[derive(Debug, Parser)]
#[command(name = "arml", version, about = "Robust Mahalanobis metric learning for K-NN")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "ARML_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn a Mahalanobis metric and write its factor G.
    Train(TrainArgs),
    /// Certified robust error curve.
    Certify(CertifyArgs),
    /// Empirical robust error curve from a boundary attack.
    Attack(AttackArgs),
    /// Clean K-NN error.
    Eval(EvalArgs),
    /// K-NN predictions on a grid over a 2-D dataset's bounding box.
    BoundaryGrid(GridArgs),
    /// Min-max feature scaling of a LIBSVM file.
    Scale(ScaleArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum LossArg {
    Negative,
    Hinge,
    Exponential,
    Logistic,
}

impl From<LossArg> for LossFn {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Negative => LossFn::Negative,
            LossArg::Hinge => LossFn::Hinge,
            LossArg::Exponential => LossFn::Exponential,
            LossArg::Logistic => LossFn::Logistic,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ObjectiveArg {
    Sampled,
    ExactKth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    Theorem1,
    Exact,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Metric file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "negative")]
    loss: LossArg,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    neighborhood: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rows of G (default: the feature dimension).
    #[arg(long)]
    factor_rows: Option<usize>,
    #[arg(long, value_enum, default_value = "sampled")]
    objective: ObjectiveArg,
    /// K used by the exact-kth objective.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Per-epoch loss log (default: loss.csv next to the metric file).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ModelArgs {
    #[arg(long)]
    train: PathBuf,
    /// Metric file; omitted means Euclidean.
    #[arg(long)]
    metric: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    k: usize,
}

#[derive(Debug, Args, Serialize)]
struct SampleArgs {
    #[arg(long)]
    test: PathBuf,
    /// Comma-separated ascending radii.
    #[arg(long, default_value = "0")]
    radii: String,
    /// Evaluate on a random subset of this many test instances.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct CertifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    sample: SampleArgs,
    #[arg(long, value_enum, default_value = "theorem1")]
    mode: ModeArg,
}

#[derive(Debug, Args, Serialize)]
struct AttackArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    sample: SampleArgs,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Test file; omitted means leave-one-out on the training set.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct GridArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Cells per axis.
    #[arg(long, default_value_t = 100)]
    grid: usize,
    /// Padding added around the data's bounding box.
    #[arg(long, default_value_t = 0.5)]
    margin: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ScaleArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fit the ranges on this file instead of `--data`.
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    lower: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    upper: f64,
}

/// Bad flag combinations found after parsing; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parses `--radii`, keeping the typed spelling for the CSV.
fn parse_radii(spec: &str) -> Result<(Vec<f64>, Vec<String>)> {
    let labels: Vec<String> = spec.split(',').map(|s| s.trim().to_string()).collect();
    let radii = labels
        .iter()
        .map(|s| s.parse::<f64>().map_err(|_| usage(format!("invalid radius `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    arml::curve::validate_radii(&radii).map_err(|e| usage(e.to_string()))?;
    Ok((radii, labels))
}

fn load(path: &Path, rec: &mut Recorder) -> Result<Dataset> {
    rec.input(path)?;
    load_libsvm(path, None).with_context(|| format!("loading {}", path.display()))
}

fn load_metric(path: Option<&Path>, dim: usize, rec: &mut Recorder) -> Result<MetricFactor> {
    match path {
        Some(p) => {
            rec.input(p)?;
            MetricFactor::load(p).with_context(|| format!("loading metric {}", p.display()))
        }
        None => Ok(MetricFactor::identity(dim)),
    }
}

/// Loads training data, an optional test set and the metric onto a common
/// feature space.
fn load_model(args: &ModelArgs, test: Option<&Path>, rec: &mut Recorder) -> Result<(KnnModel, Option<Dataset>)> {
    let train = load(&args.train, rec)?;
    let (mut train, mut test) = match test {
        Some(p) => {
            let test = load(p, rec)?;
            let (a, b) = harmonize(&train, &test)?;
            (a, Some(b))
        }
        None => (train, None),
    };
    let metric = load_metric(args.metric.as_deref(), train.dim(), rec)?;
    if metric.dim() > train.dim() {
        train = train.pad_to(metric.dim())?;
        test = test.map(|t| t.pad_to(metric.dim())).transpose()?;
    }
    if metric.dim() != train.dim() {
        bail!(
            "metric is {}-dimensional but the data has {} features",
            metric.dim(),
            train.dim()
        );
    }
    Ok((KnnModel::new(train, metric, args.k)?, test))
}

fn subsample(test: Dataset, sample: Option<usize>, seed: u64) -> Result<Dataset> {
    match sample {
        Some(n) if n < test.len() => Ok(sample_subset(&test, n, seed)?),
        Some(n) => {
            log::info!("--sample {n} covers the whole test set ({} instances)", test.len());
            Ok(test)
        }
        None => Ok(test),
    }
}

/// Writes to `path`, or stdout when absent.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
        }
    }
    Ok(())
}

fn write_curve(curve: &RobustErrorCurve, labels: &[String], out: Option<&Path>) -> Result<()> {
    if curve.errors.iter().any(|e| !e.is_finite()) {
        bail!("curve contains non-finite values");
    }
    with_output(out, |w| curve.write_csv(w, Some(labels)))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut rec = Recorder::start("train");
    let data = load(&args.data, &mut rec)?;
    let cfg = TrainConfig {
        loss: args.loss.into(),
        epochs: args.epochs,
        neighborhood: args.neighborhood,
        lr: args.lr,
        seed: args.seed,
        objective: match args.objective {
            ObjectiveArg::Sampled => Objective::Sampled,
            ObjectiveArg::ExactKth => Objective::ExactKth,
        },
        k: args.k,
        factor_rows: args.factor_rows,
        ..TrainConfig::default()
    };
    cfg.validate(data.dim()).map_err(|e| usage(e.to_string()))?;
    let log_path = args.log.clone().unwrap_or_else(|| args.out.with_file_name("loss.csv"));
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    writeln!(log, "epoch,loss")?;
    let mut io_err = None;
    let report = train_with(&data, &cfg, |epoch, loss| {
        if io_err.is_none() {
            if let Err(e) = writeln!(log, "{epoch},{loss:.10e}") {
                io_err = Some(e);
            }
        }
        if epoch % 100 == 0 {
            log::info!("epoch {epoch}: loss {loss:.6}");
        }
    })?;
    if let Some(e) = io_err {
        return Err(e).context("writing training log");
    }
    log.flush()?;
    report.metric.save(&args.out)?;
    rec.finish(args, Some(args.seed), &[&args.out, &log_path])?;
    Ok(())
}

fn cmd_certify(args: &CertifyArgs) -> Result<()> {
    if args.mode == ModeArg::Exact && args.model.k != 1 {
        return Err(usage(format!("--mode exact requires --k 1, got --k {}", args.model.k)));
    }
    let (radii, labels) = parse_radii(&args.sample.radii)?;
    let mut rec = Recorder::start("certify");
    let (model, test) = load_model(&args.model, Some(&args.sample.test), &mut rec)?;
    let test = subsample(test.expect("test set loaded"), args.sample.sample, args.sample.seed)?;
    let mode = match args.mode {
        ModeArg::Theorem1 => CertifyMode::Theorem1,
        ModeArg::Exact => CertifyMode::Exact1nn,
    };
    let curve = certified_curve(&model, &test, &radii, mode)?;
    write_curve(&curve, &labels, args.sample.out.as_deref())?;
    if let Some(out) = &args.sample.out {
        rec.finish(args, Some(args.sample.seed), &[out])?;
    }
    Ok(())
}

fn cmd_attack(args: &AttackArgs) -> Result<()> {
    let (radii, labels) = parse_radii(&args.sample.radii)?;
    let mut rec = Recorder::start("attack");
    let (model, test) = load_model(&args.model, Some(&args.sample.test), &mut rec)?;
    let test = subsample(test.expect("test set loaded"), args.sample.sample, args.sample.seed)?;
    let curve = empirical_curve(&model, &test, &radii, args.steps, args.sample.seed)?;
    write_curve(&curve, &labels, args.sample.out.as_deref())?;
    if let Some(out) = &args.sample.out {
        rec.finish(args, Some(args.sample.seed), &[out])?;
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut rec = Recorder::start("eval");
    let (model, test) = load_model(&args.model, args.test.as_deref(), &mut rec)?;
    let err = match &test {
        Some(t) => clean_error(&model, t, false)?,
        None => clean_error(&model, model.train(), true)?,
    };
    with_output(args.out.as_deref(), |w| writeln!(w, "{err:.6}"))?;
    if let Some(out) = &args.out {
        rec.finish(args, None, &[out])?;
    }
    Ok(())
}

fn cmd_boundary_grid(args: &GridArgs) -> Result<()> {
    if args.grid < 2 {
        return Err(usage("--grid needs at least 2 cells per axis"));
    }
    let mut rec = Recorder::start("boundary-grid");
    let (model, _) = load_model(&args.model, None, &mut rec)?;
    if model.train().dim() != 2 {
        return Err(usage(format!(
            "boundary-grid needs 2-D data, got {} features",
            model.train().dim()
        )));
    }
    let points = grid_points(model.train().features(), args.grid, args.margin);
    let preds: Vec<usize> = {
        use rayon::prelude::*;
        points
            .par_iter()
            .map(|p| model.predict(ndarray::ArrayView1::from(&p[..]), None))
            .collect::<arml::Result<_>>()?
    };
    with_output(args.out.as_deref(), |w| {
        writeln!(w, "x1,x2,predicted_class")?;
        for (p, c) in points.iter().zip(&preds) {
            writeln!(w, "{},{},{c}", p[0], p[1])?;
        }
        Ok(())
    })?;
    if let Some(out) = &args.out {
        rec.finish(args, None, &[out])?;
    }
    Ok(())
}

fn cmd_scale(args: &ScaleArgs) -> Result<()> {
    let mut rec = Recorder::start("scale");
    let data = load(&args.data, &mut rec)?;
    let reference = match &args.fit {
        Some(p) => {
            let r = load(p, &mut rec)?;
            let (r, _) = harmonize(&r, &data)?;
            r
        }
        None => data.clone(),
    };
    let data = data.pad_to(reference.dim())?;
    let scaler = MinMaxScaler::fit(&reference, args.lower, args.upper).map_err(|e| usage(e.to_string()))?;
    scaler.transform(&data)?.save_libsvm(&args.out)?;
    rec.finish(args, None, &[&args.out])?;
    Ok(())
}

mod grid {
    use ndarray::Array2;

    /// `g × g` grid over the bounding box of the rows of `x`, padded by `margin`.
    pub fn grid_points(x: &Array2<f64>, g: usize, margin: f64) -> Vec<[f64; 2]> {
        let lo = |c: usize| x.column(c).iter().copied().fold(f64::INFINITY, f64::min) - margin;
        let hi = |c: usize| x.column(c).iter().copied().fold(f64::NEG_INFINITY, f64::max) + margin;
        let (x0, x1, y0, y1) = (lo(0), hi(0), lo(1), hi(1));
        let step = |a: f64, b: f64, i: usize| a + (b - a) * i as f64 / (g - 1) as f64;
        let mut out = Vec::with_capacity(g * g);
        for j in 0..g {
            for i in 0..g {
                out.push([step(x0, x1, i), step(y0, y1, j)]);
            }
        }
        out
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Eval(a) => cmd_eval(a),
        Command::BoundaryGrid(a) => cmd_boundary_grid(a),
        Command::Scale(a) => cmd_scale(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
