use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "relightkit",
    version,
    about = "Video relighting with multi-plane light images"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,

    #[command(subcommand)]
    pub command: Command,
}

/// Flags accepted by every subcommand. Flags override the config file,
/// which overrides built-in defaults.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run seed. For `gen-dataset` this is the dataset seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Pipeline configuration (JSON); missing fields take defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,

    /// Worker threads; falls back to RELIGHTKIT_THREADS, then all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the paired dataset to disk.
    GenDataset {
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        trajectories: Option<usize>,
    },
    /// Build the MPLI sequence of a lighting script.
    RenderMpli {
        script: PathBuf,
        /// Camera trajectory; a static camera at the origin if omitted.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[command(flatten)]
        camera: CameraArgs,
    },
    /// Write an MPLI tensor as a PPM contact sheet.
    VizMpli { mpli: PathBuf },
    /// Stage one: train the base model without light input.
    Pretrain {
        /// Dataset directory from `gen-dataset`; rendered in memory if omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Stage two: relight finetuning from a base checkpoint.
    Finetune {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, value_enum, default_value_t = InitArg::Copy)]
        init: InitArg,
        #[arg(long)]
        data_fraction: Option<f64>,
    },
    /// Relight a source video under a lighting script.
    Relight {
        source: PathBuf,
        script: PathBuf,
        /// Relight checkpoint directory.
        #[arg(
            long,
            conflicts_with = "oracle_target",
            required_unless_present = "oracle_target"
        )]
        checkpoint: Option<PathBuf>,
        /// Use the constant velocity field towards this video instead of a model.
        #[arg(long)]
        oracle_target: Option<PathBuf>,
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        camera: CameraArgs,
    },
    /// Run the controllability suites on held-out scenes.
    Eval {
        #[arg(long, conflicts_with = "stub", required_unless_present = "stub")]
        checkpoint: Option<PathBuf>,
        /// Reference relighter instead of a model.
        #[arg(long, value_enum)]
        stub: Option<StubArg>,
        /// Also write PPM contact sheets.
        #[arg(long)]
        sheets: bool,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run one ablation.
    Ablate {
        #[arg(value_enum)]
        which: AblationArg,
        /// Base checkpoint (init, k1, third-data).
        #[arg(long)]
        base: Option<PathBuf>,
        /// Relight checkpoint (multilight).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset directory whose manifest proves single-light training (multilight).
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Print the shape and dtype of a tensor file.
    Inspect { file: PathBuf },
}

#[derive(Debug, Clone, Args)]
pub struct CameraArgs {
    /// Comma-separated plane depths.
    #[arg(long, value_delimiter = ',')]
    pub depths: Option<Vec<f64>>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub focal: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Copy,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StubArg {
    Oracle,
    Copy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationArg {
    Multilight,
    Init,
    K1,
    ThirdData,
}
