mod checks;
mod dataset;
mod failure;
mod infer;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "tumorgrade", version, about = "Brain MRI tumour classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest class-folder sources into one deduplicated manifest.
    Curate(dataset::CurateArgs),
    /// Assign a stratified train/test split.
    Split(dataset::SplitArgs),
    /// Write a contact sheet of augmented variants.
    PreviewAugment(checks::PreviewArgs),
    /// Train a model, writing checkpoints and curves.csv.
    Train(train::TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(infer::EvalArgs),
    /// Classify individual images.
    Predict(infer::PredictArgs),
    /// Finite-difference gradient checks.
    Gradcheck(checks::GradcheckArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Curate(a) => dataset::cmd_curate(a),
        Command::Split(a) => dataset::cmd_split(a),
        Command::PreviewAugment(a) => checks::cmd_preview(a),
        Command::Train(a) => train::cmd_train(a),
        Command::Eval(a) => infer::cmd_eval(a),
        Command::Predict(a) => infer::cmd_predict(a),
        Command::Gradcheck(a) => checks::cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.exit)
        }
    }
}
