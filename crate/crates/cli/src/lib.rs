//! The `slat` command line: voxelization, feature aggregation, toy flow
//! training and sampling, two-stage generation, decoding, rendering,
//! editing and metrics. Every command writes a run manifest next to its
//! outputs.

pub mod assets;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub use error::{CliError, CliResult};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "slat", version, about = "Structured 3D latent tools")]
pub struct Cli {
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file with one section per command, or a run manifest to replay.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a randomly initialised checkpoint.
    Init(InitArgs),
    /// Mark the voxels a mesh surface passes through.
    Voxelize(VoxelizeArgs),
    /// Average multiview feature maps onto active voxels.
    Aggregate(AggregateArgs),
    /// Train a small flow model on a toy dataset.
    FlowTrain(FlowTrainArgs),
    /// Draw samples from a trained toy flow model.
    FlowSample(FlowSampleArgs),
    /// Two-stage generation of structured latents.
    Generate(GenerateArgs),
    /// Decode latents into Gaussians, a radiance field or a mesh.
    Decode(DecodeArgs),
    /// Render an asset from a camera.
    Render(RenderArgs),
    /// Detail variation or region repainting of generated latents.
    Edit(EditArgs),
    /// Compare a prediction against a reference.
    Metrics(MetricsArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Init(_) => "init",
            Self::Voxelize(_) => "voxelize",
            Self::Aggregate(_) => "aggregate",
            Self::FlowTrain(_) => "flow-train",
            Self::FlowSample(_) => "flow-sample",
            Self::Generate(_) => "generate",
            Self::Decode(_) => "decode",
            Self::Render(_) => "render",
            Self::Edit(_) => "edit",
            Self::Metrics(_) => "metrics",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    FlowMlp,
    StructureVae,
    GaussianHead,
    CpHead,
    MeshDecoder,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long, value_enum)]
    pub kind: Option<ModelKind>,
    /// Checkpoint directory name under the output directory.
    #[arg(long)]
    pub name: Option<String>,
    /// Latent channels the head consumes.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Gaussians per voxel.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub data_dim: Option<usize>,
    #[arg(long)]
    pub aux_dim: Option<usize>,
    #[arg(long)]
    pub cond_dim: Option<usize>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct VoxelizeArgs {
    /// OBJ or PLY mesh.
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub resolution: Option<u32>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub grid: PathBuf,
    /// View JSON `{"camera": {...}, "features": "map.dnse"}`; repeatable.
    #[arg(long = "view", required = true)]
    pub views: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub interpolation: Option<InterpArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InterpArg {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Euler,
    Heun,
}

#[derive(Debug, Args, Default)]
pub struct SamplerArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub cfg_strength: Option<f64>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
}

#[derive(Debug, Args)]
pub struct FlowTrainArgs {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FlowSampleArgs {
    /// Flow checkpoint directory.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub cond: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub structure_model: PathBuf,
    /// Structure VAE checkpoint or `pixel-shuffle:N`.
    #[arg(long)]
    pub decoder: Option<String>,
    #[arg(long)]
    pub latent_model: PathBuf,
    #[arg(long)]
    pub cond: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeFormat {
    Gs,
    Rf,
    Mesh,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub latents: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<DecodeFormat>,
    /// Decoder checkpoint; mesh decoding of ready-made parameters needs none.
    #[arg(long)]
    pub head: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Gaussian PLY, mesh OBJ/PLY, or radiance field `.slat`.
    #[arg(long)]
    pub asset: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    /// Background colour `r,g,b`.
    #[arg(long, value_delimiter = ',')]
    pub bg: Option<Vec<f64>>,
    /// Ray-marching step for radiance fields.
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditMode {
    Variation,
    Repaint,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub latents: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<EditMode>,
    /// Half-open voxel box `x0,y0,z0,x1,y1,z1`.
    #[arg(long, value_delimiter = ',')]
    pub bbox: Option<Vec<u32>>,
    /// Stage-one latent the latents were generated from.
    #[arg(long)]
    pub structure_latent: Option<PathBuf>,
    #[arg(long)]
    pub structure_model: Option<PathBuf>,
    #[arg(long)]
    pub decoder: Option<String>,
    #[arg(long)]
    pub latent_model: PathBuf,
    #[arg(long)]
    pub cond: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Comma separated subset of chamfer, fscore, l1, psnr, ssim.
    #[arg(long, value_delimiter = ',')]
    pub which: Option<Vec<String>>,
    #[arg(long)]
    pub radius: Option<f64>,
}

/// Runs one parsed command line and returns its manifest.
pub fn run(cli: &Cli) -> CliResult<RunManifest> {
    std::fs::create_dir_all(&cli.out_dir)?;
    let file = config::ConfigFile::load(cli.config.as_deref())?;
    let ctx = commands::Context {
        seed: cli.seed.or(file.seed()?).unwrap_or(0),
        section: file.section(cli.command.name())?,
        out_dir: cli.out_dir.clone(),
    };
    match &cli.command {
        Command::Init(a) => commands::cmd_init(&ctx, a),
        Command::Voxelize(a) => commands::cmd_voxelize(&ctx, a),
        Command::Aggregate(a) => commands::cmd_aggregate(&ctx, a),
        Command::FlowTrain(a) => commands::cmd_flow_train(&ctx, a),
        Command::FlowSample(a) => commands::cmd_flow_sample(&ctx, a),
        Command::Generate(a) => commands::cmd_generate(&ctx, a),
        Command::Decode(a) => commands::cmd_decode(&ctx, a),
        Command::Render(a) => commands::cmd_render(&ctx, a),
        Command::Edit(a) => commands::cmd_edit(&ctx, a),
        Command::Metrics(a) => commands::cmd_metrics(&ctx, a),
    }
}
