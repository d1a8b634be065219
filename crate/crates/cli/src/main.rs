//! `shiftscope`: reproducible NAS-detection experiments from the command line.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<shiftscope::Error> for CliError {
    fn from(e: shiftscope::Error) -> Self {
        match e {
            shiftscope::Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "shiftscope", version, about = "NAS detection experiments on dense classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic ID set and shifted sets as CSV files.
    GenData(GenDataArgs),
    /// Train a classifier and write the model plus a per-epoch log.
    Train(TrainArgs),
    /// Score ID and shifted sets and write a JSON report.
    Eval(EvalArgs),
    /// Select the entropy-loss weights by grid search.
    Sweep(SweepArgs),
    /// Aggregate eval reports across seeds into CSV tables and curves.
    Report(ReportArgs),
    /// Evaluate a scorer over a 2D grid of inputs.
    Landscape(LandscapeArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArg {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
struct NetArgs {
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
}

impl NetArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(h) = &self.hidden {
            cfg.net.hidden = h.clone();
        }
        if let Some(a) = &self.activation {
            cfg.net.activation = a.clone();
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.train.learning_rate = lr;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(w) = self.weight_decay {
            cfg.train.weight_decay = w;
        }
    }
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Shift category (1, 2 or 3).
    #[arg(long)]
    category: Option<u8>,
    /// Shift degrees, comma separated.
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write an independent ID test set `id_test.csv` drawn with this seed.
    #[arg(long)]
    test_seed: Option<u64>,
    #[arg(long)]
    side: Option<f64>,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    n_per_class: Option<usize>,
    #[arg(long)]
    n_nas: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LossArgs {
    /// ce, ce+dist, ce+entropy or full.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    w_dist: Option<f64>,
    /// Weight of the inverse-variance term.
    #[arg(long, allow_negative_numbers = true)]
    l2: Option<f64>,
    /// Weight of the correlation term.
    #[arg(long, allow_negative_numbers = true)]
    l3: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Training CSV.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    loss: LossArgs,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Train one model per seed; `--out` is then a directory.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Model file (or directory with `--seeds`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training log; defaults to the model path with extension `log.json`.
    #[arg(long, conflicts_with = "seeds")]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    model: PathBuf,
    /// ID training data, needed by the Mahalanobis and gram scorers.
    #[arg(long)]
    train: Option<PathBuf>,
    /// ID evaluation data.
    #[arg(long)]
    id: PathBuf,
    /// Shifted sets; a `_d<delta>` suffix in the file stem sets the shift degree.
    #[arg(long, num_args = 1.., required = true)]
    nas: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    scorers: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    #[arg(long)]
    odin_temperature: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    odin_epsilon: Option<f64>,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// ID training data.
    #[arg(long)]
    data: PathBuf,
    /// ID data for the accuracy check; defaults to the training data.
    #[arg(long)]
    eval: Option<PathBuf>,
    /// Variance-term weights, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    l2: Option<Vec<f64>>,
    /// Correlation-term weights, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    l3: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    w_dist: Option<f64>,
    /// Tolerated accuracy drop versus the CE-only model.
    #[arg(long, allow_negative_numbers = true)]
    accuracy_floor: Option<f64>,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for `trail.jsonl` and `sweep.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    eval_jsons: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LandscapeArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    model: PathBuf,
    /// ID training data, needed by the Mahalanobis and gram scorers.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    scorer: String,
    /// x_min,x_max,y_min,y_max
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-10,10,-10,10")]
    bounds: Vec<f64>,
    #[arg(long, default_value_t = 101)]
    nx: usize,
    #[arg(long, default_value_t = 101)]
    ny: usize,
    /// CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("SHIFTSCOPE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("SHIFTSCOPE_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Report(a) => commands::report(a),
        Command::Landscape(a) => commands::landscape(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
