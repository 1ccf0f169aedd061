mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::{CommonArgs, Settings};

/// Temporal voxel fusion toolkit: synthetic scenes, pose forecasting,
/// depth warping, block visibility fusion and SSC evaluation.
#[derive(Parser, Debug)]
#[command(name = "tempovox", version)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a scene and render a frame sequence into the output directory.
    Synth,
    /// Forecast the next pose from a KITTI pose file.
    Forecast {
        #[arg(long)]
        poses: PathBuf,
        /// Pose file whose first line is the true next pose.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Use the last sampled pose as ground truth instead of history.
        #[arg(long)]
        holdout: bool,
    },
    /// Warp the past and current frames of a sequence onto a target pose.
    Warp {
        #[arg(long)]
        input: PathBuf,
        /// Pose file whose first line is the target; defaults to the forecast.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Block visibility and feature fusion over a sequence.
    Fuse {
        #[arg(long)]
        input: PathBuf,
    },
    /// Compare a predicted grid with a ground-truth grid.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Also write the CSV here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Finite-difference check of the SSC loss gradients.
    GradCheck {
        #[arg(long, default_value_t = 50)]
        volumes: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Scene, forecast, pseudo-future, fusion and oracle-assisted completion in one run.
    Demo,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tempovox_core::Error),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config(_) => "config",
            CliError::CheckFailed(_) => "check-failed",
        }
    }
}

fn fail(kind: &str, msg: &str) -> ExitCode {
    let msg = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error kind={kind} msg={msg}");
    ExitCode::from(1)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let s = Settings::resolve(&cli.common)?;
    match cli.command {
        Command::Synth => commands::synth(&s),
        Command::Forecast { poses, gt, holdout } => commands::forecast(&s, &poses, gt.as_deref(), holdout),
        Command::Warp { input, target } => commands::warp(&s, &input, target.as_deref()),
        Command::Fuse { input } => commands::fuse(&s, &input),
        Command::Eval { pred, gt, output } => commands::eval(&s, &pred, &gt, output.as_deref()),
        Command::GradCheck { volumes, output } => commands::grad_check(&s, volumes, output.as_deref()),
        Command::Demo => commands::demo(&s),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return fail("usage", first.trim_start_matches("error: "));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
