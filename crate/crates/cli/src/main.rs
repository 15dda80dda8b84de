use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use corrector::data::{load_dataset, load_features, save_dataset};
use corrector::ensemble::{
    fit_ensemble, iterate, load_model, save_model, Algorithm, CorrectingAction, EnsembleConfig,
};
use corrector::eval::{
    corrected_curve, curve, gamma_grid, load_predictions, save_curve, save_predictions, split_indices,
};
use corrector::preprocess::Retention;
use corrector::synth::{calibrate_noise, generate_casestudy, save_casestudy, SynthSpec};
use corrector::theory::{
    bounds_table, caps_table, mc_table, write_bounds_csv, write_caps_csv, write_mc_csv,
};
use corrector::RngSpec;

/// Build, apply and evaluate correcting ensembles, and tabulate the
/// separation bounds behind them.
#[derive(Debug, Parser)]
#[command(name = "corrector", version)]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit an ensemble on a labelled feature file and print the build report.
    Fit(FitArgs),
    /// Report which rows of a feature file the ensemble fires on.
    Apply(ApplyArgs),
    /// TPR and misclassification-rate curve, optionally with a model in front.
    Eval(EvalArgs),
    /// Stratified train/test split of a feature file and its predictions.
    Split(SplitArgs),
    /// Generate a synthetic case study.
    Synth(SynthArgs),
    /// Separation bounds and Monte Carlo checks.
    Theory {
        #[command(subcommand)]
        command: TheoryCommand,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Alg1,
    Alg2,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ActionArg {
    FlagError,
    SuppressOutput,
    Relabel,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Number of error clusters.
    #[arg(long)]
    clusters: usize,
    #[arg(long, default_value_t = 0.2)]
    theta: f64,
    #[arg(long, value_enum, default_value = "alg1")]
    algorithm: AlgorithmArg,
    /// Project whitened vectors onto the unit sphere.
    #[arg(long)]
    project: bool,
    /// Keep principal components up to this eigenvalue ratio instead of the
    /// Kaiser-Guttman rule.
    #[arg(long)]
    max_condition: Option<f64>,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 300)]
    max_iters: usize,
    /// Perceptron epochs for the second stage of cascaded pairs.
    #[arg(long, default_value_t = 1000)]
    max_epochs: usize,
    #[arg(long, value_enum, default_value = "flag-error")]
    action: ActionArg,
    #[arg(long)]
    relabel_target: Option<usize>,
    /// Append a new stage to this model instead of starting afresh.
    #[arg(long)]
    extend: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ApplyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    predictions: PathBuf,
    /// Number of evenly spaced thresholds in [0, 1].
    #[arg(long, default_value_t = 101)]
    grid: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    fraction: f64,
    /// Output directory for train.csv, test.csv and their predictions.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 1000)]
    per_class: usize,
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Calibrate the noise scale to this legacy error rate.
    #[arg(long)]
    target_error: Option<f64>,
    #[arg(long, default_value_t = 0.005)]
    tolerance: f64,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
}

#[derive(Debug, Subcommand)]
enum TheoryCommand {
    /// One-element and cascade bounds for the uniform cube.
    Bounds(BoundsArgs),
    /// Monte Carlo separation frequencies next to the bound.
    Mc(McArgs),
    /// Spherical cap volume bounds with optional Monte Carlo estimates.
    Caps(CapsArgs),
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Dimensions as `a:b:step`, a comma list, or a single value.
    #[arg(long, alias = "n", default_value = "100:2000:100")]
    n_grid: String,
    #[arg(long, default_value_t = 0.2)]
    eps: f64,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Background points.
    #[arg(long = "M", default_value_t = 10_000)]
    background: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct McArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Points per set, the separated one included.
    #[arg(long = "M", default_value_t = 10_000)]
    points: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CapsArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Monte Carlo samples per dimension; 0 skips the estimate.
    #[arg(long, default_value_t = 0)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
}

/// A failure with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let io = error.chain().any(|cause| {
            cause.downcast_ref::<std::io::Error>().is_some()
                || cause.downcast_ref::<corrector::Error>().is_some_and(corrector::Error::is_io)
        });
        Failure {
            code: if io { 1 } else { 2 },
            error,
        }
    }
}

impl From<corrector::Error> for Failure {
    fn from(error: corrector::Error) -> Self {
        anyhow::Error::from(error).into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(anyhow::anyhow!("--threads must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")
            .map_err(|e| Failure { code: 2, error: e })?;
    }
    let rng = RngSpec::from_seed(cli.seed);
    match cli.command {
        Command::Fit(args) => fit(args, rng),
        Command::Apply(args) => apply(args),
        Command::Eval(args) => eval(args, rng),
        Command::Split(args) => split(args, rng),
        Command::Synth(args) => synth(args, cli.seed),
        Command::Theory { command } => theory(command, rng),
    }
}

fn fit(args: FitArgs, rng: RngSpec) -> Result<(), Failure> {
    if !(args.theta.is_finite()) {
        return Err(anyhow::anyhow!("--theta must be finite").into());
    }
    let action = match (args.action, args.relabel_target) {
        (ActionArg::FlagError, None) => CorrectingAction::FlagError,
        (ActionArg::SuppressOutput, None) => CorrectingAction::SuppressOutput,
        (ActionArg::Relabel, Some(t)) => CorrectingAction::Relabel(t),
        (ActionArg::Relabel, None) => return Err(anyhow::anyhow!("--action relabel needs --relabel-target").into()),
        (_, Some(_)) => return Err(anyhow::anyhow!("--relabel-target only applies to --action relabel").into()),
    };
    let retention = match args.max_condition {
        None => Retention::KaiserGuttman,
        Some(r) if r >= 1.0 && r.is_finite() => Retention::ConditionBound(r),
        Some(r) => return Err(anyhow::anyhow!("--max-condition must be at least 1, got {r}").into()),
    };
    let config = EnsembleConfig {
        theta: args.theta,
        algorithm: match args.algorithm {
            AlgorithmArg::Alg1 => Algorithm::Alg1,
            AlgorithmArg::Alg2 => Algorithm::Alg2,
        },
        project_to_sphere: args.project,
        retention,
        restarts: args.restarts,
        max_iters: args.max_iters,
        max_epochs: args.max_epochs,
        action,
        rng,
        ..EnsembleConfig::new(args.clusters)
    };
    let data = load_dataset(&args.data)?;
    let (ensemble, report) = match &args.extend {
        None => fit_ensemble(&data, &config)?,
        Some(prev) => {
            let prev = load_model(prev)?;
            iterate(&prev, &data, &config)?
        }
    };
    save_model(&ensemble, &args.out)?;
    let text = serde_json::to_string_pretty(&report).context("serialising the build report")?;
    println!("{text}");
    Ok(())
}

fn apply(args: ApplyArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let features = load_features(&args.features)?;
    let fired = model.fires_rows(&features)?;
    let mut out = create(&args.out)?;
    let action = model.action();
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "row,fired,action")?;
        for (i, f) in fired.iter().enumerate() {
            let kind = if *f { action.kind() } else { "pass" };
            writeln!(out, "{i},{},{kind}", u8::from(*f))?;
        }
        out.flush()
    };
    write().with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

fn eval(args: EvalArgs, rng: RngSpec) -> Result<(), Failure> {
    let grid = gamma_grid(args.grid)?;
    let preds = load_predictions(&args.predictions)?;
    let curve = match (&args.model, &args.features) {
        (None, _) => curve(&preds, &grid, rng)?,
        (Some(model), Some(features)) => {
            let model = load_model(model)?;
            let features = load_features(features)?;
            corrected_curve(&model, &features, &preds, &grid, rng)?
        }
        (Some(_), None) => return Err(anyhow::anyhow!("--model needs --features").into()),
    };
    save_curve(&curve, &args.out)?;
    Ok(())
}

fn split(args: SplitArgs, rng: RngSpec) -> Result<(), Failure> {
    let data = load_dataset(&args.data)?;
    let preds = args.predictions.as_ref().map(load_predictions).transpose()?;
    if let Some(p) = &preds {
        if p.len() != data.len() {
            return Err(corrector::Error::DimensionMismatch {
                expected: data.len(),
                got: p.len(),
            }
            .into());
        }
    }
    let (train, test) = split_indices(data.labels(), args.fraction, rng)?;
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    for (name, idx) in [("train", &train), ("test", &test)] {
        save_dataset(&data.select(idx), args.out_dir.join(format!("{name}.csv")))?;
        if let Some(p) = &preds {
            let part: Vec<_> = idx.iter().map(|&i| p[i].clone()).collect();
            save_predictions(&part, args.out_dir.join(format!("{name}_predictions.csv")))?;
        }
    }
    println!("train {} ({} errors), test {} ({} errors)", train.len(), count_errors(&data, &train), test.len(), count_errors(&data, &test));
    Ok(())
}

fn count_errors(data: &corrector::LabeledDataset, idx: &[usize]) -> usize {
    idx.iter().filter(|&&i| data.labels()[i] == corrector::Label::Error).count()
}

fn synth(args: SynthArgs, seed: u64) -> Result<(), Failure> {
    let mut spec = SynthSpec {
        n: args.n,
        classes: args.classes,
        per_class: args.per_class,
        class_separation: args.separation,
        noise_scale: args.noise,
        seed,
    };
    if let Some(target) = args.target_error {
        spec = calibrate_noise(&spec, target, args.tolerance)?;
    }
    let study = generate_casestudy(&spec)?;
    save_casestudy(&study, &args.features, &args.predictions)?;
    println!("noise_scale {:e}, legacy error rate {:.4}", spec.noise_scale, study.error_rate());
    Ok(())
}

fn theory(command: TheoryCommand, rng: RngSpec) -> Result<(), Failure> {
    match command {
        TheoryCommand::Bounds(a) => {
            let rows = bounds_table(&parse_grid(&a.grid.n_grid)?, a.grid.eps, a.background)?;
            write_csv(&a.out, |w| write_bounds_csv(&rows, w))
        }
        TheoryCommand::Mc(a) => {
            let rows = mc_table(&parse_grid(&a.grid.n_grid)?, a.points, a.trials, a.grid.eps, rng)?;
            write_csv(&a.out, |w| write_mc_csv(&rows, w))
        }
        TheoryCommand::Caps(a) => {
            let rows = caps_table(&parse_grid(&a.grid.n_grid)?, a.grid.eps, a.samples, rng)?;
            write_csv(&a.out, |w| write_caps_csv(&rows, w))
        }
    }
}

fn parse_grid(text: &str) -> Result<Vec<usize>> {
    let num = |s: &str| -> Result<usize> {
        s.trim().parse().with_context(|| format!("`{s}` is not a dimension"))
    };
    let grid: Vec<usize> = if let Some((a, rest)) = text.split_once(':') {
        let (b, step) = rest.split_once(':').unwrap_or((rest, "1"));
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if step == 0 || a > b {
            bail!("grid `{text}` must satisfy start <= stop and step >= 1");
        }
        (a..=b).step_by(step).collect()
    } else {
        text.split(',').map(num).collect::<Result<_>>()?
    };
    if grid.contains(&0) {
        bail!("dimensions must be at least 1");
    }
    Ok(grid)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_csv(path: &Path, write: impl FnOnce(BufWriter<File>) -> std::io::Result<()>) -> Result<(), Failure> {
    let out = create(path)?;
    write(out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
