use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vulngame::cli::{self, CliError, Invocation, Verb};
use vulngame::config::ExperimentConfig;
use vulngame::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(name = "vulngame", version, about = "Path-based vulnerability detection trained as a detector/calibrator game")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (flat TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Experiment directory holding every artifact.
    #[arg(long, short)]
    dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the corpus and write the normalised copy.
    Ingest(Common),
    /// Write the identifier-substituted corpus and its mappings.
    Anonymize(Common),
    /// Write the selected execution paths of every sample.
    ExtractPaths(Common),
    /// Partition the corpus for the configured setting.
    Split(Common),
    /// Train the detector/calibrator game.
    Train {
        #[command(flatten)]
        common: Common,
        /// Retrain even when the config and inputs are unchanged.
        #[arg(long)]
        force: bool,
    },
    /// Score the trained detector on the test partition.
    Evaluate(Common),
    /// Batch size x lambda grid, one report per cell.
    Sweep(Common),
    /// Render every report as a table plus loss-curve data.
    Report(Common),
    /// Ingest through report in one go.
    All(Common),
    /// Write the constructed toy corpus.
    Synth {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 150)]
        pairs: usize,
        #[arg(long, default_value_t = 300)]
        unchanged: usize,
    },
}

fn invoke(verb: Verb, common: Common, force: bool) -> Result<String, CliError> {
    let config = cli::load_config(&common.config)?;
    cli::run(&Invocation { verb, config, dir: common.dir, force })
}

fn dispatch(command: Command) -> Result<String, CliError> {
    match command {
        Command::Ingest(c) => invoke(Verb::Ingest, c, false),
        Command::Anonymize(c) => invoke(Verb::Anonymize, c, false),
        Command::ExtractPaths(c) => invoke(Verb::ExtractPaths, c, false),
        Command::Split(c) => invoke(Verb::Split, c, false),
        Command::Train { common, force } => invoke(Verb::Train, common, force),
        Command::Evaluate(c) => invoke(Verb::Evaluate, c, false),
        Command::Sweep(c) => invoke(Verb::Sweep, c, false),
        Command::Report(c) => invoke(Verb::Report, c, false),
        Command::All(c) => {
            let config: ExperimentConfig = cli::load_config(&c.config)?;
            cli::run_all(&config, &c.dir)?;
            Ok(format!("pipeline complete in {}", c.dir.display()))
        }
        Command::Synth { out, seed, pairs, unchanged } => {
            let corpus = generate(&SynthConfig { n_pairs: pairs, n_unchanged: unchanged, seed, split_seed: seed, ..Default::default() });
            cli::write_corpus(&out, &corpus)?;
            Ok(format!("wrote {} samples to {}", corpus.len(), out.display()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
