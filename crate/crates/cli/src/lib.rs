//! Command-line front end: `train`, `benchmark`, `sweep` and `gradcheck`.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use mdaml_core::data::LabelColumn;
use mdaml_core::{Error, ErrorKind};

use config::{Overrides, RunConfig, SweepParam};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_CHECK: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("check failed: {0}")]
    Check(String),
    #[error("{failed} sweep value(s) failed; first: {first}")]
    Sweep { failed: usize, first: Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        let by_kind = |e: &Error| match e.kind() {
            ErrorKind::Config => EXIT_CONFIG,
            ErrorKind::Data => EXIT_DATA,
            ErrorKind::Numeric => EXIT_NUMERIC,
        };
        match self {
            CliError::Core(e) => by_kind(e),
            CliError::Sweep { first, .. } => by_kind(first),
            CliError::Check(_) => EXIT_CHECK,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.exit_code() {
            EXIT_CONFIG => "config",
            EXIT_DATA => "data",
            EXIT_NUMERIC => "numeric",
            _ => "check",
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "error": self.kind_name(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mdaml",
    version,
    about = "Multimodal-aware Mahalanobis metric learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit on a labelled CSV and write model.json.
    Train(CommonArgs),
    /// Repeated train/test trials against the Euclidean baseline.
    Benchmark(BenchmarkArgs),
    /// Benchmark once per value of one hyper-parameter.
    Sweep(SweepArgs),
    /// Finite-difference gradient and manifold self-checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Label column, by zero-based index or header name.
    #[arg(long)]
    pub label: Option<LabelColumn>,
    /// The CSV has no header row.
    #[arg(long)]
    pub no_header: bool,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Freeze triplet weights at 1 (train), or add the fixed-weight ablation (benchmark, sweep).
    #[arg(long)]
    pub fixed_weights: bool,
    /// Pair every similar partner with every dissimilar one.
    #[arg(long)]
    pub cross_product_triplets: bool,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Tune K and lambda1 on trial 0 over the default grids.
    #[arg(long)]
    pub tune: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub param: Option<SweepParam>,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub instances: Option<usize>,
    /// Scale the analytic gradient before comparing (negative control).
    #[arg(long, hide = true)]
    pub corrupt_gradient: Option<f64>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            data: self.data.clone(),
            label: self.label.clone(),
            no_header: self.no_header,
            out: self.out.clone(),
            workers: self.workers,
            k: self.k,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            eta: self.eta,
            trials: self.trials,
            seed: self.seed,
            fixed_weights: self.fixed_weights,
            cross_product_triplets: self.cross_product_triplets,
            ..Overrides::default()
        }
    }

    fn resolve(&self, extra: impl FnOnce(&mut Overrides)) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let mut o = self.overrides();
        extra(&mut o);
        cfg.apply(o);
        Ok(cfg)
    }
}

/// Executes a parsed command.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => commands::train(&a.resolve(|_| {})?),
        Command::Benchmark(a) => {
            commands::benchmark(&a.common.resolve(|o| o.tune = a.tune)?).map(|_| ())
        }
        Command::Sweep(a) => commands::sweep(&a.common.resolve(|o| {
            o.sweep_param = a.param;
            o.sweep_values = a.values.clone();
        })?)
        .map(|_| ()),
        Command::Gradcheck(a) => {
            let mut cfg = a.common.resolve(|_| {})?;
            if let Some(n) = a.instances {
                cfg.gradcheck.instances = n;
            }
            commands::gradcheck(&cfg, a.corrupt_gradient).map(|_| ())
        }
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.exit_code()
        }
    }
}
