use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gcr::commands::{execute, replay, Invocation};
use gcr::config::{load, AnalyzeSettings, RansacSettings, SynthConfig, TrainSettings};
use gcr::error::CliResult;

#[derive(Parser)]
#[command(
    name = "gcr",
    version,
    about = "Synthetic two-view scenes, weighted RANSAC and toy pose training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads. Outputs do not depend on this.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes with depth maps and descriptor fields.
    Synth {
        #[arg(long)]
        count: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Run weighted RANSAC on every scene in a directory.
    Ransac {
        #[arg(long)]
        scenes: PathBuf,
        /// uniform, oracle or fusion:<params dir>
        #[arg(long, default_value = "uniform")]
        weights: String,
        /// gt or perturbed:<deg>
        #[arg(long, default_value = "gt")]
        prior: String,
        #[command(flatten)]
        common: Common,
    },
    /// Train the toy pose regressor and report held-out AUC.
    Train {
        #[arg(long)]
        scenes: PathBuf,
        /// Separate held-out scenes; otherwise the last scenes are held out.
        #[arg(long)]
        heldout: Option<PathBuf>,
        /// pose_only, pose+desc or full
        #[arg(long, default_value = "full")]
        mode: String,
        #[command(flatten)]
        common: Common,
    },
    /// Descriptor error maps under a given pose.
    Analyze {
        #[arg(long)]
        scenes: PathBuf,
        /// gt, file:<dir> or perturbed:<deg>
        #[arg(long, default_value = "gt")]
        pose: String,
        #[command(flatten)]
        common: Common,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        /// Defaults to the recorded output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn config_or_default<T: Default + for<'de> serde::Deserialize<'de>>(
    path: &Option<PathBuf>,
) -> CliResult<T> {
    path.as_deref()
        .map(load)
        .unwrap_or_else(|| Ok(T::default()))
}

fn run(cli: Cli) -> CliResult<()> {
    let (inv, common) = match cli.command {
        Command::Replay {
            manifest,
            out,
            jobs,
        } => {
            replay(&manifest, out.as_deref(), jobs)?;
            return Ok(());
        }
        Command::Synth { count, common } => {
            let config: SynthConfig = config_or_default(&common.config)?;
            (
                Invocation::Synth {
                    count,
                    seed: common.seed,
                    config,
                },
                common,
            )
        }
        Command::Ransac {
            scenes,
            weights,
            prior,
            common,
        } => {
            let config: RansacSettings = config_or_default(&common.config)?;
            (
                Invocation::Ransac {
                    scenes,
                    weights,
                    prior,
                    seed: common.seed,
                    config,
                },
                common,
            )
        }
        Command::Train {
            scenes,
            heldout,
            mode,
            common,
        } => {
            let config: TrainSettings = config_or_default(&common.config)?;
            (
                Invocation::Train {
                    scenes,
                    heldout,
                    mode,
                    seed: common.seed,
                    config,
                },
                common,
            )
        }
        Command::Analyze {
            scenes,
            pose,
            common,
        } => {
            let config: AnalyzeSettings = config_or_default(&common.config)?;
            (
                Invocation::Analyze {
                    scenes,
                    pose,
                    seed: common.seed,
                    config,
                },
                common,
            )
        }
    };
    execute(&inv, Path::new(&common.out), common.jobs)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gcr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
