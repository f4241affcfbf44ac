mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Opinion-graph survey service and analysis tools.
#[derive(Parser, Debug)]
#[command(name = "opingraph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the survey HTTP service.
    Serve(ServeArgs),
    /// Fit every q in a range and write error curves, flows and labels.
    Sweep(SweepArgs),
    /// Compare two label files.
    Compare(CompareArgs),
    /// Turn an edge list plus vertex table into a graph file.
    Convert(ConvertArgs),
    /// Sample a planted-partition graph.
    Generate(GenerateArgs),
    /// Measure planted-partition recovery across structure strengths.
    Recovery(RecoveryArgs),
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, env = "OPINGRAPH_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "OPINGRAPH_BIND", default_value = "127.0.0.1")]
    pub bind: String,
    #[arg(long, env = "OPINGRAPH_DATA_DIR")]
    pub data_dir: PathBuf,
    /// Seed of the per-request sampling generators.
    #[arg(long, env = "OPINGRAPH_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "OPINGRAPH_SNAPSHOT_EVERY", default_value_t = 1000)]
    pub snapshot_every: u64,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long, env = "OPINGRAPH_RESTARTS", default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, env = "OPINGRAPH_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Use the degree-corrected model.
    #[arg(long, env = "OPINGRAPH_DC")]
    pub dc: bool,
    #[arg(long, env = "OPINGRAPH_MAX_EM_ITERS", default_value_t = 200)]
    pub max_em_iters: usize,
    #[arg(long, env = "OPINGRAPH_TYPICAL", default_value_t = 0.9)]
    pub typical_threshold: f64,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, env = "OPINGRAPH_GRAPH")]
    pub graph: PathBuf,
    #[arg(long, env = "OPINGRAPH_QMIN", default_value_t = 1)]
    pub qmin: usize,
    #[arg(long, env = "OPINGRAPH_QMAX", default_value_t = 6)]
    pub qmax: usize,
    #[arg(long, env = "OPINGRAPH_OUT")]
    pub out: PathBuf,
    /// Balance the labels first by turning excess negative edges neutral.
    #[arg(long)]
    pub neutralize: bool,
    /// Leave seed responses out of the label files.
    #[arg(long)]
    pub exclude_seeds: bool,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// Graph for agreement scores of both labellings.
    #[arg(long, env = "OPINGRAPH_GRAPH")]
    pub graph: Option<PathBuf>,
    #[arg(long, env = "OPINGRAPH_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Shuffles behind the adjusted agreement score.
    #[arg(long, default_value_t = 1000)]
    pub shuffles: usize,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// `src dst label` per line.
    #[arg(long)]
    pub edges: PathBuf,
    /// Tab-separated table with `id` and `text` columns.
    #[arg(long)]
    pub vertices: PathBuf,
    #[arg(long, default_value = "")]
    pub question: String,
    #[arg(long, env = "OPINGRAPH_OUT")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub q: usize,
    #[arg(long, default_value_t = 7.0)]
    pub mean_pos: f64,
    #[arg(long, default_value_t = 5.0)]
    pub mean_neg: f64,
    /// 0 is no structure, 1 puts positive edges only inside groups.
    #[arg(long, default_value_t = 0.9)]
    pub strength: f64,
    #[arg(long, env = "OPINGRAPH_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "OPINGRAPH_OUT")]
    pub out: PathBuf,
    /// Also write the planted labels here.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RecoveryArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub q: usize,
    #[arg(long, default_value_t = 7.0)]
    pub mean_pos: f64,
    #[arg(long, default_value_t = 5.0)]
    pub mean_neg: f64,
    /// Comma-separated strengths in [0, 1].
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1")]
    pub strengths: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, env = "OPINGRAPH_OUT")]
    pub out: PathBuf,
    #[command(flatten)]
    pub fit: FitArgs,
}

/// Exit status classes.
#[derive(Debug)]
pub enum Failure {
    /// Bad input data or failed validation.
    Data(anyhow::Error),
    /// Anything else that went wrong while running.
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Data(e) | Failure::Runtime(e) => e,
        }
    }
}

pub fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

pub fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Serve(args) => commands::serve(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Compare(args) => commands::compare(args),
        Command::Convert(args) => commands::convert(args),
        Command::Generate(args) => commands::generate(args),
        Command::Recovery(args) => commands::recovery(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
    }
}
