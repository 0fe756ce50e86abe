mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::ModelType;

pub const DEFAULT_ILPD_URL: &str =
    "https://archive.ics.uci.edu/ml/machine-learning-databases/00225/Indian%20Liver%20Patient%20Dataset%20(ILPD).csv";

#[derive(Parser, Debug)]
#[command(name = "twinscope", version, about = "Liver-risk digital twin: data, models, explanations, rules")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Plain output without ANSI colour (also enabled by NO_COLOR).
    #[arg(long, global = true)]
    pub no_color: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Download the UCI ILPD CSV and check that it parses.
    FetchData {
        #[arg(long, default_value = DEFAULT_ILPD_URL)]
        url: String,
        #[arg(long, default_value = "data/ilpd.csv")]
        out: PathBuf,
    },
    /// Write a synthetic dataset.
    GenData(GenDataArgs),
    /// Train a model and report validation metrics.
    Train(TrainArgs),
    /// Learning-curve CSV: train_size,train_accuracy,validation_accuracy.
    Curve(CurveArgs),
    /// Explain one prediction with a local surrogate.
    Explain(ExplainArgs),
    /// Partial-dependence curve CSV for one feature.
    Pdp(PdpArgs),
    /// Parse, validate and evaluate rule tables.
    Rules {
        #[command(subcommand)]
        command: RulesCommand,
    },
    /// Compare rule bounds with the model's learned boundaries.
    Reconcile(ReconcileArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    /// 583 records in the UCI layout with ILPD-like marginals.
    IlpdLike,
    /// Labels planted by a single threshold rule such as `alp>175`.
    Threshold,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Layout {
    Ilpd,
    Canonical,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, value_enum, default_value = "threshold")]
    pub kind: GenKind,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value = "alp>175")]
    pub rule: String,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output layout; defaults to `ilpd` for ilpd-like data and `canonical`
    /// otherwise.
    #[arg(long, value_enum)]
    pub layout: Option<Layout>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Label polarity of UCI-layout input: standard or inverted.
    #[arg(long)]
    pub polarity: Option<String>,
}

#[derive(Args, Debug)]
pub struct ForestArgs {
    #[arg(long)]
    pub n_trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
    #[arg(long)]
    pub features_per_split: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the evaluation report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model_type: Option<ModelType>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
}

#[derive(Args, Debug)]
pub struct CurveArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0")]
    pub fractions: Vec<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Feature values as a JSON object.
    #[arg(long, conflicts_with_all = ["data", "row"])]
    pub features: Option<String>,
    /// Dataset to take the instance from, with --row.
    #[arg(long, requires = "row")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub row: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub kernel_width: Option<f64>,
    #[arg(long)]
    pub discretize: bool,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct PdpArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub feature: String,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Subcommand, Debug)]
pub enum RulesCommand {
    /// Validate a table and print its canonical form.
    Check { file: PathBuf },
    /// Evaluate a table on one patient and print the trace.
    Eval {
        file: PathBuf,
        /// Feature values as a JSON object.
        #[arg(long)]
        features: String,
        /// Print the decision as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Debug)]
pub struct ReconcileArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Rule table; defaults to the built-in liver table.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub min_relative_shift: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long, env = "TWINSCOPE_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Reference dataset for PDPs and revision proposals.
    #[arg(long)]
    pub background: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let plain = output::plain(cli.no_color);
    let default_level = if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level))
        .write_style(if plain { env_logger::WriteStyle::Never } else { env_logger::WriteStyle::Auto })
        .init();
    match commands::run(cli, plain) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
