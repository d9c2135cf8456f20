//! `ctd`: one binary per pipeline stage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ctd_core::ErrorKind;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "ctd", version, about = "Controllable trajectory diffusion pipeline")]
struct Cli {
    /// Seed for every random stream of the subcommand; overrides the
    /// config's `seed` (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// TOML config; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    GenData(commands::GenData),
    /// Import ETH/UCY annotation files into a corpus.
    ImportEthucy(commands::ImportEthucy),
    /// Label candidate future pairs for one constraint.
    MakePairs(commands::MakePairs),
    /// Train a constraint scorer (and the shared encoder).
    TrainScore(commands::TrainScore),
    /// Score every trajectory of a corpus with each scorer.
    ScoreCorpus(commands::ScoreCorpus),
    /// Train the score-conditioned denoiser.
    TrainDiffusion(commands::TrainDiffusion),
    /// Sample futures for chosen histories at fixed scores.
    Predict(commands::Predict),
    /// Best-of-N minADE/minFDE on the test split.
    Eval(commands::Eval),
    /// Ablation, adherence or two-constraint grid sweeps.
    Sweep(commands::Sweep),
}

fn fail(kind: ErrorKind, msg: &str) -> ExitCode {
    eprintln!("ctd-error {}: {}", kind.code(), msg.replace('\n', " "));
    ExitCode::from(kind.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("bad usage");
            return fail(ErrorKind::Usage, first.trim_start_matches("error: "));
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
