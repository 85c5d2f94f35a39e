//! Command-line front end: `train`, `eval`, `gradcheck`, `ablate`, `synth`.
//!
//! Exit codes: 0 success, 1 gradient check failed, 2 configuration error,
//! 3 data or I/O error.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

pub use config::{DataConfig, DataSource, OutputConfig, RunConfig, Splits};

use crate::data::{generate_synthetic, load_manifest, write_manifest, Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, Aggregation, ModelConfig, Task};
use crate::training::{check_compatible, evaluate, gradient_check, train_with, EvalMetrics};

pub const EXIT_OK: i32 = 0;
pub const EXIT_GRADCHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pointseq", version, about = "Point-cloud sequence-to-sequence networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by commands that read a run configuration.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.lr=0.002`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training seed (overrides `train.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl RunArgs {
    pub fn load(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("train.seed={seed}"));
        }
        let mut cfg = RunConfig::load(self.config.as_deref(), &overrides)?;
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Classification,
    Segmentation,
}

/// Hyperparameter swept by `ablate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// Number of centroids.
    M,
    /// Number of scales, keeping the largest ones.
    T,
    /// LSTM hidden width.
    RnnHidden,
    /// Sequence aggregation variant.
    Aggregation,
    /// Learning rate.
    Lr,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoints and the metrics log.
    Train(RunArgs),
    /// Evaluate a checkpoint.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest; defaults to the configured data.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Compare analytic and finite-difference gradients on tiny models.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Train one model per value of a hyperparameter and tabulate accuracy.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values; each axis has defaults.
        #[arg(long)]
        values: Option<String>,
    },
    /// Write a synthetic dataset as point files plus a manifest.
    Synth {
        #[arg(long, value_enum, default_value = "classification")]
        task: TaskArg,
        #[arg(long, default_value_t = 1024)]
        points: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training clouds per class (per set for segmentation).
        #[arg(long, default_value_t = 20)]
        train_count: usize,
        #[arg(long, default_value_t = 10)]
        test_count: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command.
/// Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_CONFIG;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_DATA
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn echo_config(out: &mut dyn Write, cfg: &RunConfig) -> Result<()> {
    let text = format!("# effective configuration\n{}", cfg.to_toml());
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))?;
    writeln!(out).map_err(io_err(Path::new("<stdout>")))
}

fn say(out: &mut dyn Write, text: &str) -> Result<()> {
    writeln!(out, "{text}").map_err(io_err(Path::new("<stdout>")))
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Train(args) => cmd_train(&args.load()?, out).map(|_| EXIT_OK),
        Command::Eval {
            run,
            checkpoint,
            manifest,
            split,
        } => cmd_eval(&run, &checkpoint, manifest.as_deref(), split.into(), out).map(|_| EXIT_OK),
        Command::Gradcheck { tolerance } => cmd_gradcheck(tolerance, out),
        Command::Ablate { run, axis, values } => {
            let cfg = run.load()?;
            echo_config(out, &cfg)?;
            let values = match values {
                Some(v) => parse_values(axis, &v)?,
                None => default_values(axis),
            };
            let rows = ablate(&cfg, axis, &values, |row| {
                let _ = writeln!(out, "# {} = {}: {:.2}", axis_label(axis), row.value, 100.0 * row.test);
            })?;
            say(out, &ablation_table(axis, &rows))?;
            Ok(EXIT_OK)
        }
        Command::Synth {
            task,
            points,
            noise,
            seed,
            train_count,
            test_count,
            out: dir,
        } => {
            let make = |s| match task {
                TaskArg::Classification => SyntheticSpec::classification(points, noise, s),
                TaskArg::Segmentation => SyntheticSpec::segmentation(points, noise, s),
            };
            let path = cmd_synth(&make(seed), &make(seed.wrapping_add(1)), train_count, test_count, &dir)?;
            say(out, &format!("wrote {}", path.display()))?;
            Ok(EXIT_OK)
        }
    }
}

/// Files written by `train`.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub config: PathBuf,
    pub metrics: PathBuf,
    pub best: PathBuf,
    pub last: PathBuf,
}

/// Trains with `cfg` and writes `config.toml`, `metrics.log`, `best.ckpt`
/// and `last.ckpt` into `cfg.output.dir`.
pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainArtifacts> {
    echo_config(out, cfg)?;
    let splits = cfg.load_data()?;
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let artifacts = TrainArtifacts {
        config: dir.join("config.toml"),
        metrics: dir.join("metrics.log"),
        best: dir.join("best.ckpt"),
        last: dir.join("last.ckpt"),
    };
    fs::write(&artifacts.config, cfg.to_toml()).map_err(io_err(&artifacts.config))?;

    let validation = Some(&splits.validation).filter(|v| !v.is_empty());
    let outcome = train_with(&cfg.model, &cfg.train, &splits.train, validation, |r| {
        let _ = writeln!(out, "{}", r.to_line());
    })?;
    fs::write(&artifacts.metrics, outcome.report.to_log()).map_err(io_err(&artifacts.metrics))?;
    save_checkpoint(&outcome.best, &artifacts.best)?;
    save_checkpoint(&outcome.last, &artifacts.last)?;

    say(out, &outcome.report.summary_table())?;
    if !splits.test.is_empty() {
        let m = evaluate(&outcome.best, &splits.test)?;
        say(out, &format!("test (best epoch {})", outcome.report.best_epoch))?;
        say(out, &m.table())?;
    }
    Ok(artifacts)
}

/// Evaluates a checkpoint on a split of the manifest, or of the configured
/// data when no manifest is given.
pub fn cmd_eval(
    args: &RunArgs,
    checkpoint: &Path,
    manifest: Option<&Path>,
    split: Split,
    out: &mut dyn Write,
) -> Result<EvalMetrics> {
    let params = load_checkpoint(checkpoint)?;
    let mut cfg = args.load()?;
    cfg.model = params.config.clone();
    echo_config(out, &cfg)?;
    let dataset = match manifest {
        Some(p) => load_manifest(p)?.split(split).clone(),
        None => {
            let s = cfg.load_data()?;
            match split {
                Split::Train => s.train,
                Split::Validation => s.validation,
                Split::Test => s.test,
            }
        }
    };
    check_compatible(&params.config, &dataset)?;
    if dataset.is_empty() {
        return Err(Error::Data(format!("split {} is empty", split.as_str())));
    }
    let m = evaluate(&params, &dataset)?;
    say(out, &format!("{} split, {} clouds", split.as_str(), dataset.len()))?;
    say(out, &m.table())?;
    Ok(m)
}

/// Runs the gradient check on the tiny classification and segmentation
/// configurations. Returns [`EXIT_GRADCHECK`] when either fails.
pub fn cmd_gradcheck(tolerance: f64, out: &mut dyn Write) -> Result<i32> {
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(Error::Config(format!("tolerance must be positive, got {tolerance}")));
    }
    let mut ok = true;
    for task in [Task::Classification, Task::Segmentation] {
        let report = gradient_check(&ModelConfig::tiny(task), tolerance)?;
        say(out, &format!("{task:?}"))?;
        say(out, &report.table())?;
        ok &= report.passed();
    }
    say(out, if ok { "gradient check passed" } else { "gradient check FAILED" })?;
    Ok(if ok { EXIT_OK } else { EXIT_GRADCHECK })
}

/// Materializes a synthetic train set (and test set when `test_count > 0`)
/// under `dir`. Returns the manifest path.
pub fn cmd_synth(
    train: &SyntheticSpec,
    test: &SyntheticSpec,
    train_count: usize,
    test_count: usize,
    dir: &Path,
) -> Result<PathBuf> {
    train.validate()?;
    test.validate()?;
    let train = generate_synthetic(train, train_count)?;
    let test = generate_synthetic(test, test_count)?;
    let mut splits = vec![(Split::Train, &train)];
    if test_count > 0 {
        splits.push((Split::Test, &test));
    }
    write_manifest(dir, &splits)
}

/// One value of a hyperparameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum AxisValue {
    Count(usize),
    Rate(f64),
    Variant(Aggregation),
}

impl std::fmt::Display for AxisValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AxisValue::Count(n) => write!(f, "{n}"),
            AxisValue::Rate(r) => write!(f, "{r}"),
            AxisValue::Variant(a) => f.write_str(a.label()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub value: AxisValue,
    /// Primary metric on the training set at the retained epoch.
    pub train: f64,
    /// Primary metric on the test split (the training set when there is none).
    pub test: f64,
}

pub fn default_values(axis: Axis) -> Vec<AxisValue> {
    match axis {
        Axis::M => [128, 256, 384, 512].map(AxisValue::Count).to_vec(),
        Axis::T => [1, 2, 3, 4].map(AxisValue::Count).to_vec(),
        Axis::RnnHidden => [64, 128, 256].map(AxisValue::Count).to_vec(),
        Axis::Aggregation => Aggregation::ALL.map(AxisValue::Variant).to_vec(),
        Axis::Lr => [0.0005, 0.001, 0.002].map(AxisValue::Rate).to_vec(),
    }
}

pub fn parse_values(axis: Axis, text: &str) -> Result<Vec<AxisValue>> {
    let bad = |v: &str| Error::Config(format!("bad value {v:?} for axis {}", axis_label(axis)));
    text.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| match axis {
            Axis::M | Axis::T | Axis::RnnHidden => {
                v.parse().map(AxisValue::Count).map_err(|_| bad(v))
            }
            Axis::Lr => v.parse().map(AxisValue::Rate).map_err(|_| bad(v)),
            Axis::Aggregation => Aggregation::ALL
                .into_iter()
                .find(|a| {
                    let kebab = toml::Value::try_from(a).ok();
                    a.label().eq_ignore_ascii_case(v)
                        || kebab.as_ref().and_then(|k| k.as_str()) == Some(v)
                })
                .map(AxisValue::Variant)
                .ok_or_else(|| bad(v)),
        })
        .collect()
}

fn axis_label(axis: Axis) -> &'static str {
    match axis {
        Axis::M => "M",
        Axis::T => "T",
        Axis::RnnHidden => "h",
        Axis::Aggregation => "aggregation",
        Axis::Lr => "lr",
    }
}

/// Trains one model per value and reports the primary metric of the
/// retained parameters. `on_row` sees each row as it completes.
pub fn ablate(
    base: &RunConfig,
    axis: Axis,
    values: &[AxisValue],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let splits = base.load_data()?;
    let validation = Some(&splits.validation).filter(|v| !v.is_empty());
    let test = if splits.test.is_empty() { &splits.train } else { &splits.test };
    let mut rows = Vec::new();
    for value in values {
        let mut cfg = base.clone();
        match (axis, value) {
            (Axis::M, AxisValue::Count(m)) => cfg.model.centroids = *m,
            (Axis::T, AxisValue::Count(t)) => {
                cfg.model.scales = base.model.scales.keep_largest(*t)?
            }
            (Axis::RnnHidden, AxisValue::Count(h)) => cfg.model.hidden_dim = *h,
            (Axis::Lr, AxisValue::Rate(lr)) => cfg.train.lr = *lr,
            (Axis::Aggregation, AxisValue::Variant(a)) => cfg.model.aggregation = *a,
            _ => {
                return Err(Error::Config(format!(
                    "value {value} does not fit axis {}",
                    axis_label(axis)
                )))
            }
        }
        cfg.validate()?;
        let outcome = train_with(&cfg.model, &cfg.train, &splits.train, validation, |_| {})?;
        let row = AblationRow {
            value: value.clone(),
            train: outcome.report.best().map_or(0.0, |r| r.train.primary()),
            test: evaluate(&outcome.best, test)?.primary(),
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Values across, metrics down, in percent.
pub fn ablation_table(axis: Axis, rows: &[AblationRow]) -> String {
    let mut header = format!("{:<12}", axis_label(axis));
    let mut train = format!("{:<12}", "train");
    let mut test = format!("{:<12}", "test");
    for r in rows {
        header.push_str(&format!("{:>9}", r.value.to_string()));
        train.push_str(&format!("{:>9.2}", 100.0 * r.train));
        test.push_str(&format!("{:>9.2}", 100.0 * r.test));
    }
    format!("{header}\n{train}\n{test}")
}
