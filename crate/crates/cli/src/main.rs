//! `tmnlab`: generate data, train, evaluate, gradient-check and inspect tree
//! matching networks.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tmnlab::model::Mode;

#[derive(Debug, Parser)]
#[command(name = "tmnlab", version, about = "Tree matching networks over dependency trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic three-class pair file.
    Synth(SynthArgs),
    /// Run one or more training phases from a config file.
    Train(TrainArgs),
    /// Score a checkpoint on a pair file.
    Eval(EvalArgs),
    /// Compare backpropagated and finite-difference gradients on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Summarize a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 16)]
    pub node_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub edge_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub max_nodes: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Phases to run, in order (default 1,2,3).
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=3))]
    pub phase: Vec<u8>,
    /// Continue the first phase from this mid-phase checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Start a later phase from scratch when the earlier phase was never run.
    #[arg(long)]
    pub skip_pretrain: bool,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Cap on epochs for every phase run.
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Lower and upper cosine thresholds.
    #[arg(long, default_value = "-0.33,0.33", allow_hyphen_values = true, value_parser = parse_thresholds)]
    pub thresholds: (f64, f64),
    /// Also write the report as JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub strictness: u8,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub node_state_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub edge_state_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub prop_layers: usize,
    #[arg(long, value_parser = parse_mode, default_value = "matching")]
    pub mode: Mode,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    /// Scale the backward rule of one op kind by 1.5 (negative control).
    #[arg(long, hide = true)]
    pub corrupt_backward: Option<String>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub checkpoint: PathBuf,
    /// Print the checkpoint header as JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "matching" => Ok(Mode::Matching),
        "embedding" => Ok(Mode::Embedding),
        _ => Err(format!("expected 'matching' or 'embedding', got '{s}'")),
    }
}

fn parse_thresholds(s: &str) -> Result<(f64, f64), String> {
    let (low, high) = s
        .split_once(',')
        .ok_or_else(|| "expected LOW,HIGH".to_string())?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    let (low, high) = (parse(low)?, parse(high)?);
    if low.partial_cmp(&high) != Some(std::cmp::Ordering::Less) {
        return Err(format!("need LOW < HIGH, got {low},{high}"));
    }
    Ok((low, high))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Inspect(a) => commands::inspect(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
