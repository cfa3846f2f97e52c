//! `gasfm` command line: synthetic data, training, inference, bundle
//! adjustment, evaluation and export. Every command writes `manifest.json`
//! into its `--out` directory.

mod commands;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gasfm::camera::Mode;

use commands::{Common, TrainArgs};
use failure::{Failure, EXIT_VALIDATION};
use manifest::{RunManifest, Status};

#[derive(Parser)]
#[command(name = "gasfm", version, about = "Graph-attention structure-from-motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Euclidean,
    Projective,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Euclidean => Mode::Euclidean,
            ModeArg::Projective => Mode::Projective,
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

impl CommonArgs {
    fn resolve(&self) -> Common {
        Common {
            config: self.config.clone(),
            seed: self.seed,
            mode: self.mode.map(Mode::from),
            out: self.out.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of scenes; scene i uses seed + i.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Train a network, from scratch, from given weights or from a checkpoint.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Validation scenes.
        #[arg(long = "val")]
        val: Vec<PathBuf>,
        /// Continue a stored run.
        #[arg(long, conflicts_with = "init")]
        resume: Option<PathBuf>,
        /// Start from the weights of a checkpoint with fresh optimizer state.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Stop after this many iterations.
        #[arg(long)]
        max_iters: Option<u64>,
        /// Training scenes.
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
    },
    /// Run the network on a scene.
    Infer {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Replace the predicted points by DLT triangulation from the
        /// predicted cameras.
        #[arg(long)]
        triangulate: bool,
    },
    /// Refine a reconstruction by bundle adjustment.
    Ba {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        recon: PathBuf,
    },
    /// Score a reconstruction against a scene.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        recon: PathBuf,
    },
    /// Write the points of a reconstruction as PLY.
    Export {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        recon: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Ba { .. } => "ba",
            Command::Eval { .. } => "eval",
            Command::Export { .. } => "export",
        }
    }

    fn common(&self) -> &CommonArgs {
        match self {
            Command::Synth { common, .. }
            | Command::Train { common, .. }
            | Command::Infer { common, .. }
            | Command::Ba { common, .. }
            | Command::Eval { common, .. }
            | Command::Export { common, .. } => common,
        }
    }
}

fn dispatch(cmd: &Command, common: &Common, run: &mut RunManifest) -> Result<(), Failure> {
    std::fs::create_dir_all(&common.out)?;
    match cmd {
        Command::Synth { count, .. } => commands::synth(run, common, *count),
        Command::Train {
            val,
            resume,
            init,
            max_iters,
            scenes,
            ..
        } => commands::train(
            run,
            common,
            TrainArgs {
                scenes,
                val,
                resume: resume.as_deref(),
                init: init.as_deref(),
                max_iters: *max_iters,
            },
        ),
        Command::Infer {
            checkpoint,
            scene,
            triangulate,
            ..
        } => commands::infer(run, common, checkpoint, scene, *triangulate),
        Command::Ba { scene, recon, .. } => commands::ba(run, common, scene, recon),
        Command::Eval { scene, recon, .. } => commands::eval(run, common, scene, recon),
        Command::Export { recon, .. } => commands::export(run, common, recon),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = cli.command.common().resolve();
    let mut run = RunManifest::new(cli.command.name());
    let mut code = match dispatch(&cli.command, &common, &mut run) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            run.status = Status {
                exit_code: f.code,
                message: Some(f.message),
            };
            f.code
        }
    };
    if common.out.is_dir() {
        if let Err(e) = run.write(&common.out) {
            eprintln!("error: writing manifest: {e}");
            if code == 0 {
                code = EXIT_VALIDATION;
            }
        }
    }
    ExitCode::from(code)
}
