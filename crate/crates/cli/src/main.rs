//! `physioattn`: synthetic data, level planning, training and sweeps.
//!
//! Exit codes: 0 success, 2 usage/config/data error, 3 a training run diverged.

mod checkpoint;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use physioattn::attention::AttentionKind;
use physioattn::backbones::{BackboneFamily, Counting, Task};
use physioattn::datapipe::{BsaFormula, DEFAULT_ARTIFACT_RATE, DEFAULT_PREVALENCE};

use commands::{GenArgs, LevelArgs, Outcome};
use config::ExperimentArgs;

const EXIT_ERROR: u8 = 2;
const EXIT_ABORTED: u8 = 3;

#[derive(Parser)]
#[command(name = "physioattn", version, about = "Attention blocks on 1D CNN backbones for physiological waveforms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ECG/PPG dataset (PSD1 file plus `.manifest`).
    GenSynthetic {
        #[arg(long, default_value = "cls")]
        task: Task,
        #[arg(long, default_value_t = 125)]
        cases: usize,
        #[arg(long, default_value_t = 20)]
        per_case: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        difficulty: f64,
        #[arg(long, default_value_t = DEFAULT_PREVALENCE)]
        prevalence: f64,
        #[arg(long, default_value_t = DEFAULT_ARTIFACT_RATE)]
        artifact_rate: f64,
        #[arg(long, default_value = "dubois")]
        bsa: BsaFormula,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the segment filter to a PSD1 file.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-level parameter counts, threshold, selected level and trend.
    CountParams(LevelOpts),
    /// Print only the selected backbone level.
    SelectLevel(LevelOpts),
    /// Train one model; writes history.jsonl, result.json, checkpoint.json, wall_clock.log.
    Train(ExperimentArgs),
    /// Score a checkpoint on the configured test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Multi-seed sweep; writes report.csv, runs.jsonl, wall_clock.log.
    Sweep(ExperimentArgs),
}

#[derive(clap::Args)]
struct LevelOpts {
    #[arg(long)]
    family: BackboneFamily,
    /// Adds a full-model column with these blocks placed.
    #[arg(long, default_value = "none")]
    attention: AttentionKind,
    #[arg(long, default_value_t = 0)]
    fraction: u32,
    /// Table driving threshold, selection and trend: published | computed.
    #[arg(long, default_value = "published", value_parser = ["published", "computed"])]
    table: String,
    /// What the computed column counts: backbone | full.
    #[arg(long, default_value = "backbone")]
    counting: Counting,
}

impl LevelOpts {
    fn args(&self) -> LevelArgs {
        LevelArgs {
            family: self.family,
            attention: self.attention,
            fraction: self.fraction,
            published: self.table == "published",
            counting: self.counting,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::GenSynthetic {
            task,
            cases,
            per_case,
            seed,
            difficulty,
            prevalence,
            artifact_rate,
            bsa,
            out,
        } => commands::gen_synthetic(&GenArgs {
            task,
            cases,
            per_case,
            seed,
            difficulty,
            prevalence,
            artifact_rate,
            bsa,
            out,
        }),
        Command::Preprocess { input, out } => commands::preprocess(&input, &out),
        Command::CountParams(o) => commands::count_params(&o.args()),
        Command::SelectLevel(o) => commands::select_level_cmd(&o.args()),
        Command::Train(exp) => commands::train_cmd(&exp.resolve()?),
        Command::Evaluate { checkpoint, exp } => commands::evaluate_cmd(&checkpoint, &exp.resolve()?),
        Command::Sweep(exp) => commands::sweep_cmd(&exp.resolve()?),
    }
}

fn main() -> ExitCode {
    physioattn::harness::tune_allocator();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Aborted) => ExitCode::from(EXIT_ABORTED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
