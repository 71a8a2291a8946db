//! The `phmm` command line.
//!
//! Exit codes: 0 on success, 2 for usage, configuration and input errors,
//! 3 when training or inference hits a non-finite value.

mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::data::{ForecastInput, ForecastTarget};
use crate::model::{ModelError, StrideMode};
use crate::tensor::TensorError;
use crate::train::TrainError;
use config::{Format, HeadChoice, Overrides, ScaleChoice};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => EXIT_USAGE,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            TrainError::Model(m) => m.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(TensorError::NonFinite { .. }) => CliError::Numeric(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

macro_rules! usage_from {
    ($($t:ty),*) => {
        $( impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Usage(e.to_string())
            }
        } )*
    };
}

usage_from!(crate::data::DataError, crate::metrics::MetricsError, crate::checkpoint::CheckpointError);

#[derive(Debug, Parser)]
#[command(name = "phmm", version, about = "Pyramidal hidden Markov models for multivariate time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write its checkpoint and training log.
    Train(TrainCmd),
    /// Score a checkpoint on a dataset split.
    Eval(EvalCmd),
    /// Forecast the continuation of every series with a predictor checkpoint.
    Forecast(ForecastCmd),
    /// Train one model per (k, m) cell and report the test metric grid.
    Ablate(AblateCmd),
    /// Average ranks, wins and significance tests over a results grid.
    Stats(StatsCmd),
    /// Generate a synthetic dataset with known regimes.
    Synth(SynthCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TieChoice {
    Dense,
    Average,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset file (.ts or .csv).
    #[arg(long)]
    pub data: PathBuf,
    /// Separate test file; its series form the test split.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    /// Input format; inferred from the extension when absent.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub id_col: Option<String>,
    /// Time column; pass an empty string to use row order.
    #[arg(long)]
    pub time_col: Option<String>,
    /// Comma-separated value columns; default is every other column.
    #[arg(long, value_delimiter = ',')]
    pub value_cols: Option<Vec<String>>,
    #[arg(long)]
    pub label_col: Option<String>,
    #[arg(long)]
    pub split_col: Option<String>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Timestep ratio between adjacent layers.
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of layers.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub attn_dim: Option<usize>,
    #[arg(long)]
    pub stride_mode: Option<StrideMode>,
    #[arg(long, value_enum)]
    pub head: Option<HeadChoice>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// JSON file of settings; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// KL weight.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ramp the KL weight up over the first tenth of training.
    #[arg(long)]
    pub kl_warmup: bool,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long, value_enum)]
    pub scale: Option<ScaleChoice>,
    /// Forecast this many steps; makes the run a forecasting run.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Context length in steps; default is everything before the horizon.
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long)]
    pub forecast_input: Option<ForecastInput>,
    #[arg(long)]
    pub forecast_target: Option<ForecastTarget>,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory, created atomically.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace a non-empty output directory.
    #[arg(long)]
    pub overwrite: bool,
    /// Record wall-clock times; outputs are then no longer reproducible.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitChoice,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ForecastCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Context length; default is the checkpoint's, else the whole series.
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitChoice,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct AblateCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub k_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub m_list: Vec<usize>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct StatsCmd {
    /// CSV grid: a dataset column followed by one column per method.
    #[arg(long)]
    pub results: PathBuf,
    /// Method compared against every other; default PHMM, else the last column.
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long, value_enum, default_value = "dense")]
    pub tie_rule: TieChoice,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    /// Built-in spec: planted or stocklike.
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    pub preset: Option<String>,
    /// JSON spec file.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutArgs,
}

impl ModelArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            k: self.k,
            m: self.m,
            hidden_dim: self.hidden,
            attn_dim: self.attn_dim,
            stride_mode: self.stride_mode,
            head: self.head,
            ..Overrides::default()
        }
    }
}

impl FitArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            epochs: self.epochs,
            learning_rate: self.lr,
            kl_weight: self.beta,
            kl_warmup: self.kl_warmup.then_some(true),
            batch_size: self.batch_size,
            grad_clip_norm: self.grad_clip,
            mc_samples: self.mc_samples,
            seed: self.seed,
            scale: self.scale,
            horizon: self.horizon,
            context: self.context,
            forecast_input: self.forecast_input,
            forecast_target: self.forecast_target,
            ..Overrides::default()
        }
    }
}

impl DataArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            format: self.format,
            id_col: self.id_col.clone(),
            time_col: self.time_col.clone(),
            value_cols: self.value_cols.clone(),
            label_col: self.label_col.clone(),
            split_col: self.split_col.clone(),
            ..Overrides::default()
        }
    }
}

/// Defaults, then the config file, then the flags.
fn merged(data: &DataArgs, model: &ModelArgs, fit: &FitArgs) -> Result<config::RunConfig, CliError> {
    let file = match &fit.config {
        Some(p) => Overrides::from_file(p)?,
        None => Overrides::default(),
    };
    let flags = file.layered(&data.overrides()).layered(&model.overrides()).layered(&fit.overrides());
    config::RunConfig::resolve(&flags)
}

/// Parse `args` (program name first), run the command and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let argv = output::reproducible_argv(&argv);
    let result = match &cli.command {
        Command::Train(c) => merged(&c.data, &c.model, &c.fit).and_then(|cfg| commands::train(c, cfg, &argv)),
        Command::Eval(c) => commands::eval(c, &argv),
        Command::Forecast(c) => commands::forecast(c, &argv),
        Command::Ablate(c) => merged(&c.data, &c.model, &c.fit).and_then(|cfg| commands::ablate(c, cfg, &argv)),
        Command::Stats(c) => commands::stats(c, &argv),
        Command::Synth(c) => commands::synth(c, &argv),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("phmm: {e}");
            e.exit_code()
        }
    }
}
