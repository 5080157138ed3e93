//! `slabrecon` command-line driver.
//!
//! Exit status: 0 on success, 1 on data or runtime errors, 2 on usage errors.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "slabrecon", version, about = "Reference-free 3D reconstruction of brain slab photographs")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "SLABRECON_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the built-in nested-ellipsoid phantom (labels and identity coordinates).
    Phantom(PhantomArgs),
    /// Generate a synthetic slab stack with ground truth from a label volume.
    Synth(SynthArgs),
    /// Write coordinate-map predictions for every slab of a stack.
    Predict(PredictArgs),
    /// Fit the global and per-slab transforms and assemble a volume.
    Reconstruct(ReconstructArgs),
    /// Project atlas labels onto one photograph through its coordinate map.
    Segment(SegmentArgs),
    /// Compare coordinate maps or volumes.
    #[command(subcommand)]
    Evaluate(EvaluateCommand),
    /// Run the phantom experiment tables.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 96)]
    dim: usize,
    /// Voxel size in mm.
    #[arg(long, default_value_t = 2.0)]
    spacing: f64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Label volume (`.nii` or raw `.hdr`); the built-in phantom if omitted.
    #[arg(long, requires = "coords")]
    labels: Option<PathBuf>,
    /// Atlas coordinate field matching `--labels`.
    #[arg(long, requires = "labels")]
    coords: Option<PathBuf>,
    /// Phantom size when no volumes are given.
    #[arg(long, default_value_t = 96)]
    phantom_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ablation preset (baseline, A-E) used as the starting configuration.
    #[arg(long)]
    preset: Option<String>,
    /// Synthesis config file (`key = value`); overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "case")]
    name: String,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    stack: PathBuf,
    /// `oracle:<sigma>` or a coordinate-map path template.
    #[arg(long)]
    coords: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[arg(long)]
    stack: PathBuf,
    /// `oracle:<sigma>` or a coordinate-map path template with `{k}`, `{k:03}`, `{case}`.
    #[arg(long)]
    coords: String,
    #[arg(long)]
    out: PathBuf,
    /// Reconstruction config file (`key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output volume size per axis.
    #[arg(long, default_value_t = 96)]
    grid: usize,
    /// Slab thickness in normalized units; median plane spacing if omitted.
    #[arg(long)]
    thickness: Option<f64>,
    /// Skip volume assembly.
    #[arg(long)]
    no_volume: bool,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    /// Photograph (PGM).
    #[arg(long)]
    photo: PathBuf,
    /// Coordinate map (raw `.hdr`).
    #[arg(long)]
    coords: PathBuf,
    /// Atlas label volume.
    #[arg(long)]
    atlas: PathBuf,
    /// Output label image (PGM).
    #[arg(long)]
    out: PathBuf,
    /// Foreground mask (PGM); valid coordinates if omitted.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Colour overlay (PPM), written next to `--out`.
    #[arg(long)]
    overlay: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum EvaluateCommand {
    /// Masked MAE/MSE between predicted and ground-truth coordinate maps.
    Coords(EvalCoordsArgs),
    /// MSE and SSIM between volumes, plus Dice and volume differences for labels.
    Volume(EvalVolumeArgs),
}

#[derive(Args, Debug)]
pub struct EvalCoordsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Millimetres per normalized unit on each axis.
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"])]
    mm_per_unit: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalVolumeArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Table {
    Silver,
    Partial,
    Ablation,
    All,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Table::All)]
    table: Table,
    #[arg(long, default_value_t = 96)]
    dim: usize,
    #[arg(long, default_value_t = 2.0)]
    spacing: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Seeds for the partial-stack table.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Training stacks per preset for the ablation proxy.
    #[arg(long, default_value_t = 4)]
    train_cases: usize,
    /// Held-out stacks for the ablation proxy.
    #[arg(long, default_value_t = 2)]
    test_cases: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Phantom(a) => commands::phantom(a),
        Command::Synth(a) => commands::synth(a),
        Command::Predict(a) => commands::predict(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Segment(a) => commands::segment(a),
        Command::Evaluate(EvaluateCommand::Coords(a)) => commands::evaluate_coords(a),
        Command::Evaluate(EvaluateCommand::Volume(a)) => commands::evaluate_volume(a),
        Command::Experiment(a) => commands::experiment(a),
    }
}
