//! `wavesurrogate`: collect episodes, train the latent surrogate, evaluate it
//! and run closed-loop control.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wavesurrogate::Error;

#[derive(Parser)]
#[command(
    name = "wavesurrogate",
    version,
    about = "Latent wave surrogate for acoustic scattering control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Record random-policy episodes into a dataset directory.
    Collect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train a surrogate on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Train without the latent absorbing layer.
        #[arg(long)]
        no_pml: bool,
    },
    /// Prediction error against horizon length, 20 to 200 actions.
    EvalHorizon {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        no_pml: bool,
    },
    /// Predicted against measured scattered energy over a whole episode.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Episode index within the dataset.
        #[arg(long, default_value_t = 0)]
        episode: usize,
        #[arg(long)]
        no_pml: bool,
    },
    /// MPC against random actions on paired seeds.
    Control {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Space-time map of the latent scattered field squared.
    LatentField {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        episode: usize,
        #[arg(long, default_value_t = 100)]
        actions: usize,
        /// Keep every n-th integration step.
        #[arg(long, default_value_t = 10)]
        every: usize,
        #[arg(long)]
        no_pml: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::ConfigMismatch { .. } => 2,
        e if e.is_blow_up() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Collect { common, episodes } => commands::collect(&common, episodes),
        Command::Train {
            common,
            data,
            no_pml,
        } => commands::train(&common, &data, no_pml),
        Command::EvalHorizon {
            common,
            checkpoint,
            data,
            no_pml,
        } => commands::eval_horizon(&common, &checkpoint, &data, no_pml),
        Command::Predict {
            common,
            checkpoint,
            data,
            episode,
            no_pml,
        } => commands::predict(&common, &checkpoint, &data, episode, no_pml),
        Command::Control {
            common,
            checkpoint,
            episodes,
        } => commands::control(&common, &checkpoint, episodes),
        Command::LatentField {
            common,
            checkpoint,
            data,
            episode,
            actions,
            every,
            no_pml,
        } => commands::latent_field(&common, &checkpoint, &data, episode, actions, every, no_pml),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
