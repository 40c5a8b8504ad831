//! `vstp`: synthetic corpora, codec checks, training, inference and evaluation.
//!
//! Exit codes: 0 success, 1 check or metric failure, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vstp_core::Task;

#[derive(Debug, Parser)]
#[command(name = "vstp", version, about = "Visually-situated text parsing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic annotated corpus as JSONL.
    Synth(SynthArgs),
    /// Build and re-parse the sequences of every sample in a corpus.
    CodecCheck(CodecCheckArgs),
    /// Write the vocabulary of a task as JSON.
    Vocab(VocabArgs),
    /// Train a model on a corpus and write a checkpoint and loss curve.
    Train(TrainArgs),
    /// Run two-stage inference and write predictions as JSONL.
    Infer(InferArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// TEDS between two HTML tables.
    Teds(TedsArgs),
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: vstp_core::Error| e.to_string())
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_parser = parse_task)]
    task: Task,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    out: PathBuf,
    /// Generator settings as JSON.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CodecCheckArgs {
    #[arg(short, long = "in")]
    input: PathBuf,
    /// Only accept samples of this task.
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
}

#[derive(Debug, Args)]
struct VocabArgs {
    #[arg(long, value_parser = parse_task)]
    task: Task,
    /// Entity class, repeatable.
    #[arg(long = "entity")]
    entities: Vec<String>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(short, long = "in")]
    input: PathBuf,
    /// Checkpoint path.
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    #[arg(long)]
    seed: Option<u64>,
    /// `{"model": {...}, "train": {...}}` overrides as JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Loss curve path; defaults to the checkpoint path with a `.loss.csv` extension.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(short, long = "in")]
    input: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// Also write one `<id>.html` per table sample here.
    #[arg(long)]
    html_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    None,
    Full,
    Strong,
    Weak,
    Generic,
    Teds,
    Steds,
    F1,
    Nted,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_parser = parse_task)]
    task: Task,
    /// Defaults to `none` for spotting and hiertext, `f1` for KIE and `teds` for tables.
    #[arg(long, value_enum)]
    mode: Option<EvalMode>,
    /// Predictions JSONL.
    #[arg(short, long = "in")]
    input: PathBuf,
    /// Ground-truth JSONL.
    #[arg(long)]
    gt: PathBuf,
    /// Report JSON path.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Largest edit distance accepted by lexicon correction.
    #[arg(long)]
    max_edit_distance: Option<usize>,
    /// Lexicons JSON; built from the ground-truth words when absent.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Same as `--mode steds` for tables.
    #[arg(long)]
    structure_only: bool,
}

#[derive(Debug, Args)]
struct TedsArgs {
    pred: PathBuf,
    gt: PathBuf,
    #[arg(long)]
    structure_only: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::CodecCheck(a) => commands::codec_check(a),
        Command::Vocab(a) => commands::vocab(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Teds(a) => commands::teds(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
