//! One function per subcommand. Each resolves its config (flag, then
//! config file section, then default), does its work, and writes the
//! manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use slat_core::decoders::{
    assemble_field, decode_gaussians, decode_mesh_params, decode_radiance, densify, flexicubes_extract, CpHead,
    FlexiGrid, GaussianHead, MeshDecoder, FLEXI_CHANNELS,
};
use slat_core::defaults::{FSCORE_RADIUS, FPS_POINTS, GAUSSIANS_PER_VOXEL, GRID_RESOLUTION};
use slat_core::flow::datasets::two_moons;
use slat_core::flow::{
    gaussian_noise, ode_sample, repaint_edit, train_toy_flow, two_stage_generate, variation, DataItem, Generated,
    Method, MlpShape, SamplerConfig, TinyMlp, TrainConfig, VoxelBox,
};
use slat_core::io::{write_gaussians_ply, write_mesh_ply, write_obj};
use slat_core::metrics::{chamfer, farthest_point_sample, fscore, surface_point_cloud, MetricReport, SurfaceSampling};
use slat_core::multiview::{aggregate_features, Camera, FeatureView, Interpolation};
use slat_core::nn::{ConvUnet3d, UnetConfig};
use slat_core::render::{
    image_l1, image_psnr, image_ssim, raymarch_field, rasterize_mesh, splat_gaussians, write_pfm, write_ppm,
    RenderedImage, DEFAULT_BACKGROUND, DEFAULT_STEP,
};
use slat_core::voxelize::voxelize_mesh;
use slat_core::DenseTensor;

use crate::assets::{self, Asset};
use crate::config::resolve;
use crate::error::{CliError, CliResult};
use crate::manifest::{Recorder, RunManifest};
use crate::*;

pub struct Context {
    pub seed: u64,
    /// This command's section of the config file.
    pub section: Value,
    pub out_dir: PathBuf,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn to_value(c: &impl Serialize) -> CliResult<Value> {
    Ok(serde_json::to_value(c)?)
}

fn write_file(rec: &mut Recorder, path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
    rec.output(path)
}

fn write_tensor(rec: &mut Recorder, path: &Path, t: &DenseTensor) -> CliResult<()> {
    let mut buf = Vec::new();
    t.write_to(&mut buf)?;
    write_file(rec, path, &buf)
}

fn write_grid(rec: &mut Recorder, path: &Path, g: &slat_core::SparseGrid) -> CliResult<()> {
    let mut buf = Vec::new();
    g.write_to(&mut buf)?;
    write_file(rec, path, &buf)
}

fn sampler_flags(a: &SamplerArgs) -> Value {
    json!({
        "steps": a.steps,
        "cfg_strength": a.cfg_strength,
        "method": a.method.map(|m| match m {
            MethodArg::Euler => Method::Euler,
            MethodArg::Heun => Method::Heun,
        }),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub kind: ModelKind,
    pub name: Option<String>,
    pub channels: usize,
    pub k: usize,
    pub mlp: MlpShape,
    pub unet: UnetConfig,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::FlowMlp,
            name: None,
            channels: 8,
            k: GAUSSIANS_PER_VOXEL,
            mlp: MlpShape { data_dim: 2, aux_dim: 0, cond_dim: 0, hidden: vec![64, 64, 64] },
            unet: UnetConfig::standard(),
        }
    }
}

pub fn cmd_init(ctx: &Context, a: &InitArgs) -> CliResult<RunManifest> {
    let flags = json!({
        "kind": a.kind, "name": a.name, "channels": a.channels, "k": a.k,
        "mlp": {"data_dim": a.data_dim, "aux_dim": a.aux_dim, "cond_dim": a.cond_dim, "hidden": a.hidden},
    });
    let cfg: InitConfig = resolve(ctx.section.clone(), flags)?;
    let mut rec = Recorder::new("init", ctx.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let archive = match cfg.kind {
        ModelKind::FlowMlp => TinyMlp::init(cfg.mlp.clone(), &mut rng)?.to_archive()?,
        ModelKind::StructureVae => ConvUnet3d::init(cfg.unet.clone(), &mut rng)?.to_archive(),
        ModelKind::GaussianHead => GaussianHead::init(cfg.channels, cfg.k, &mut rng)?.to_archive(),
        ModelKind::CpHead => CpHead::init(cfg.channels, &mut rng).to_archive(),
        ModelKind::MeshDecoder => MeshDecoder::init(cfg.channels, &mut rng).to_archive(),
    };
    let default_name = serde_json::to_value(cfg.kind)?.as_str().unwrap_or("model").to_string();
    let dir = ctx.path(cfg.name.as_deref().unwrap_or(&default_name));
    archive.save(&dir)?;
    rec.output(&dir)?;
    rec.finish(&ctx.out_dir, to_value(&cfg)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct VoxelizeConfig {
    pub resolution: u32,
}

impl Default for VoxelizeConfig {
    fn default() -> Self {
        Self { resolution: GRID_RESOLUTION }
    }
}

pub fn cmd_voxelize(ctx: &Context, a: &VoxelizeArgs) -> CliResult<RunManifest> {
    let cfg: VoxelizeConfig = resolve(ctx.section.clone(), json!({ "resolution": a.resolution }))?;
    let mut rec = Recorder::new("voxelize", ctx.seed);
    let mesh = assets::load_mesh(&a.mesh)?;
    rec.input(&a.mesh)?;
    let grid = voxelize_mesh(&mesh, cfg.resolution)?;
    write_grid(&mut rec, &ctx.path("structure.slat"), &grid)?;
    rec.finish(&ctx.out_dir, to_value(&cfg)?)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregateConfig {
    pub interpolation: Interpolation,
}

#[derive(Deserialize)]
struct ViewFile {
    camera: Camera,
    /// Relative paths are taken from the view file's directory.
    features: PathBuf,
}

fn load_view(path: &Path) -> CliResult<(FeatureView, PathBuf)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read view {}: {e}", path.display())))?;
    let v: ViewFile =
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("bad view {}: {e}", path.display())))?;
    let map_path = path.parent().unwrap_or(Path::new(".")).join(&v.features);
    let map = assets::load_tensor(&map_path)?;
    Ok((FeatureView::new(v.camera, map)?, map_path))
}

pub fn cmd_aggregate(ctx: &Context, a: &AggregateArgs) -> CliResult<RunManifest> {
    let interp = a.interpolation.map(|i| match i {
        InterpArg::Nearest => Interpolation::Nearest,
        InterpArg::Bilinear => Interpolation::Bilinear,
    });
    let cfg: AggregateConfig = resolve(ctx.section.clone(), json!({ "interpolation": interp }))?;
    let mut rec = Recorder::new("aggregate", ctx.seed);
    let grid = assets::load_grid(&a.grid)?;
    rec.input(&a.grid)?;
    let mut views = Vec::with_capacity(a.views.len());
    for p in &a.views {
        let (view, map) = load_view(p)?;
        rec.input(p)?;
        rec.input(&map)?;
        views.push(view);
    }
    let agg = aggregate_features(&grid, &views, cfg.interpolation)?;
    write_grid(&mut rec, &ctx.path("features.slat"), &agg.grid)?;
    let mut echo = to_value(&cfg)?;
    echo["views"] = json!(a.views.iter().map(|p| p.display().to_string()).collect::<Vec<_>>());
    echo["unseen_voxels"] = json!(agg.unseen_count());
    rec.finish(&ctx.out_dir, echo)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    TwoMoons,
    SinglePoint,
    Gaussian,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub n: usize,
    /// Isotropic noise of two-moons points.
    pub noise: f64,
    pub point: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { kind: DatasetKind::TwoMoons, n: 4000, noise: 0.0, point: vec![0.5, -0.25], mean: vec![0.0, 0.0], std: 0.5 }
    }
}

impl DatasetConfig {
    pub fn build(&self, rng: &mut ChaCha8Rng) -> CliResult<Vec<DataItem>> {
        if self.n == 0 {
            return Err(CliError::input("dataset size must be positive"));
        }
        let points: Vec<Vec<f64>> = match self.kind {
            DatasetKind::TwoMoons => two_moons(self.n, self.noise, rng).into_iter().map(|p| p.to_vec()).collect(),
            DatasetKind::SinglePoint => vec![self.point.clone(); self.n],
            DatasetKind::Gaussian => slat_core::flow::datasets::gaussian_points(self.n, &self.mean, self.std, rng),
        };
        if points[0].is_empty() {
            return Err(CliError::input("dataset points have no coordinates"));
        }
        Ok(points.into_iter().map(DataItem::point).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowTrainConfig {
    pub dataset: DatasetConfig,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self { dataset: DatasetConfig::default(), hidden: vec![64, 64, 64], train: TrainConfig::default() }
    }
}

/// Data come from `seed`, initial weights from `seed + 1`, and the training
/// stream from `train.seed`, which the global seed sets.
pub fn cmd_flow_train(ctx: &Context, a: &FlowTrainArgs) -> CliResult<RunManifest> {
    let flags = json!({"train": {"iterations": a.iterations, "lr": a.lr, "batch": a.batch, "seed": ctx.seed}});
    let cfg: FlowTrainConfig = resolve(ctx.section.clone(), flags)?;
    let mut rec = Recorder::new("flow-train", ctx.seed);
    let data = cfg.dataset.build(&mut ChaCha8Rng::seed_from_u64(ctx.seed))?;
    let shape = MlpShape { data_dim: data[0].x0.len(), aux_dim: 0, cond_dim: 0, hidden: cfg.hidden.clone() };
    let net = TinyMlp::init(shape, &mut ChaCha8Rng::seed_from_u64(ctx.seed.wrapping_add(1)))?;
    let res = train_toy_flow(&data, net, &cfg.train)?;
    let dir = ctx.path("flow");
    res.model.to_archive()?.save(&dir)?;
    rec.output(&dir)?;
    write_file(&mut rec, &ctx.path("losses.json"), serde_json::to_string(&res.losses)?.as_bytes())?;
    rec.finish(&ctx.out_dir, to_value(&cfg)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowSampleConfig {
    pub n: usize,
    pub sampler: SamplerConfig,
}

impl Default for FlowSampleConfig {
    fn default() -> Self {
        Self { n: 1000, sampler: SamplerConfig::default() }
    }
}

/// Samples are `[n, d]`; sample `i` starts from the `i`-th noise draw.
pub fn cmd_flow_sample(ctx: &Context, a: &FlowSampleArgs) -> CliResult<RunManifest> {
    let flags = json!({"n": a.n, "sampler": sampler_flags(&a.sampler)});
    let cfg: FlowSampleConfig = resolve(ctx.section.clone(), flags)?;
    let mut rec = Recorder::new("flow-sample", ctx.seed);
    let model = assets::load_mlp(&a.model)?;
    rec.input(&a.model)?;
    let cond = assets::load_cond(a.cond.as_deref())?;
    if let Some(p) = &a.cond {
        rec.input(p)?;
    }
    let d = model.shape.data_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let noise: Vec<Vec<f64>> = (0..cfg.n).map(|_| gaussian_noise(d, &mut rng)).collect();
    let rows = noise
        .par_iter()
        .map(|x| ode_sample(&model, x, cond.as_ref(), &cfg.sampler))
        .collect::<Result<Vec<_>, _>>()?;
    let t = DenseTensor::new(vec![cfg.n, d], rows.concat())?;
    write_tensor(&mut rec, &ctx.path("samples.dnse"), &t)?;
    rec.finish(&ctx.out_dir, to_value(&cfg)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub decoder: String,
    pub sampler: SamplerConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { decoder: format!("pixel-shuffle:{GRID_RESOLUTION}"), sampler: SamplerConfig::default() }
    }
}

fn record_decoder(rec: &mut Recorder, decoder: &str) -> CliResult<()> {
    if Path::new(decoder).is_dir() {
        rec.input(Path::new(decoder))?;
    }
    Ok(())
}

fn write_generated(ctx: &Context, rec: &mut Recorder, g: &Generated) -> CliResult<()> {
    write_grid(rec, &ctx.path("latents.slat"), &g.latents)?;
    write_tensor(rec, &ctx.path("structure_latent.dnse"), &g.structure_latent)
}

pub fn cmd_generate(ctx: &Context, a: &GenerateArgs) -> CliResult<RunManifest> {
    let flags = json!({"decoder": a.decoder, "sampler": sampler_flags(&a.sampler)});
    let cfg: GenerateConfig = resolve(ctx.section.clone(), flags)?;
    let mut rec = Recorder::new("generate", ctx.seed);
    let structure_model = assets::load_mlp(&a.structure_model)?;
    let latent_model = assets::load_mlp(&a.latent_model)?;
    let decoder = assets::load_structure_decoder(&cfg.decoder)?;
    let cond = assets::load_cond(a.cond.as_deref())?;
    rec.input(&a.structure_model)?;
    rec.input(&a.latent_model)?;
    record_decoder(&mut rec, &cfg.decoder)?;
    if let Some(p) = &a.cond {
        rec.input(p)?;
    }
    let g = two_stage_generate(&structure_model, decoder.as_ref(), &latent_model, cond.as_ref(), &cfg.sampler, ctx.seed)?;
    write_generated(ctx, &mut rec, &g)?;
    rec.finish(&ctx.out_dir, to_value(&cfg)?)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub format: Option<DecodeFormat>,
}

pub fn cmd_decode(ctx: &Context, a: &DecodeArgs) -> CliResult<RunManifest> {
    let cfg: DecodeConfig = resolve(ctx.section.clone(), json!({ "format": a.format }))?;
    let format = cfg.format.ok_or_else(|| CliError::usage("decode needs --format gs|rf|mesh"))?;
    let mut rec = Recorder::new("decode", ctx.seed);
    let latents = assets::load_grid(&a.latents)?;
    rec.input(&a.latents)?;
    let head = match &a.head {
        Some(dir) => {
            rec.input(dir)?;
            Some(assets::load_archive(dir)?)
        }
        None => None,
    };
    let need_head = || CliError::usage(format!("--format {} needs --head", to_value(&format).unwrap_or_default()));
    match format {
        DecodeFormat::Gs => {
            let head = GaussianHead::from_archive(&head.ok_or_else(need_head)?)?;
            let set = decode_gaussians(&latents, &head)?;
            let mut buf = Vec::new();
            write_gaussians_ply(&set, &mut buf)?;
            write_file(&mut rec, &ctx.path("gaussians.ply"), &buf)?;
        }
        DecodeFormat::Rf => {
            let head = CpHead::from_archive(&head.ok_or_else(need_head)?)?;
            let cells = decode_radiance(&latents, &head)?;
            assemble_field(&cells)?;
            write_grid(&mut rec, &ctx.path("field.slat"), &cells)?;
        }
        DecodeFormat::Mesh => {
            let grid = match head {
                Some(h) => decode_mesh_params(&latents, &MeshDecoder::from_archive(&h)?)?,
                None if latents.channels() == FLEXI_CHANNELS => FlexiGrid::new(latents)?,
                None => return Err(need_head()),
            };
            let ex = flexicubes_extract(&densify(&grid))?;
            let mut obj = Vec::new();
            write_obj(&ex.mesh, &mut obj)?;
            write_file(&mut rec, &ctx.path("mesh.obj"), &obj)?;
            let mut ply = Vec::new();
            write_mesh_ply(&ex.mesh, &mut ply)?;
            write_file(&mut rec, &ctx.path("mesh.ply"), &ply)?;
        }
    }
    rec.finish(&ctx.out_dir, to_value(&cfg)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub background: [f64; 3],
    pub step: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { background: DEFAULT_BACKGROUND, step: DEFAULT_STEP }
    }
}

fn ppm_bytes(img: &RenderedImage) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_ppm(img, &mut buf)?;
    Ok(buf)
}

pub fn cmd_render(ctx: &Context, a: &RenderArgs) -> CliResult<RunManifest> {
    if a.bg.as_ref().is_some_and(|b| b.len() != 3) {
        return Err(CliError::usage("--bg takes r,g,b"));
    }
    let cfg: RenderConfig = resolve(ctx.section.clone(), json!({ "background": a.bg, "step": a.step }))?;
    let mut rec = Recorder::new("render", ctx.seed);
    let text = fs::read_to_string(&a.camera)
        .map_err(|e| CliError::input(format!("cannot read camera {}: {e}", a.camera.display())))?;
    let camera =
        Camera::from_json(&text).map_err(|e| CliError::input(format!("camera {}: {e}", a.camera.display())))?;
    let asset = assets::load_asset(&a.asset)?;
    rec.input(&a.asset)?;
    rec.input(&a.camera)?;
    let img = match &asset {
        Asset::Gaussians(set) => splat_gaussians(set, &camera, cfg.background),
        Asset::Mesh(mesh) => rasterize_mesh(mesh, &camera, cfg.background)?,
        Asset::Field(cells) => raymarch_field(&assemble_field(cells)?, &camera, cfg.step, cfg.background)?,
        Asset::Points(_) | Asset::Image(_) => {
            return Err(CliError::input(format!("{} is not a renderable asset", a.asset.display())))
        }
    };
    write_file(&mut rec, &ctx.path("image.ppm"), &ppm_bytes(&img)?)?;
    write_tensor(&mut rec, &ctx.path("planes.dnse"), &img.planes())?;
    if let Some(depth) = &img.depth {
        let mut buf = Vec::new();
        write_pfm(img.width, img.height, 1, depth, &mut buf)?;
        write_file(&mut rec, &ctx.path("depth.pfm"), &buf)?;
    }
    rec.finish(&ctx.out_dir, to_value(&cfg)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EditConfig {
    pub mode: EditMode,
    pub bbox: Option<VoxelBox>,
    pub decoder: String,
    pub sampler: SamplerConfig,
}

impl Default for EditConfig {
    fn default() -> Self {
        let g = GenerateConfig::default();
        Self { mode: EditMode::Variation, bbox: None, decoder: g.decoder, sampler: g.sampler }
    }
}

/// Variation keeps the structure (and the stage-one latent) and resamples
/// stage two. Repaint regenerates whatever meets the box in both stages.
pub fn cmd_edit(ctx: &Context, a: &EditArgs) -> CliResult<RunManifest> {
    if a.bbox.as_ref().is_some_and(|b| b.len() != 6) {
        return Err(CliError::usage("--bbox takes x0,y0,z0,x1,y1,z1"));
    }
    let bbox = a.bbox.as_ref().map(|b| VoxelBox { lo: [b[0], b[1], b[2]], hi: [b[3], b[4], b[5]] });
    let flags = json!({"mode": a.mode, "bbox": bbox, "decoder": a.decoder, "sampler": sampler_flags(&a.sampler)});
    let cfg: EditConfig = resolve(ctx.section.clone(), flags)?;
    let mut rec = Recorder::new("edit", ctx.seed);
    let latents = assets::load_grid(&a.latents)?;
    let latent_model = assets::load_mlp(&a.latent_model)?;
    let cond = assets::load_cond(a.cond.as_deref())?;
    rec.input(&a.latents)?;
    rec.input(&a.latent_model)?;
    if let Some(p) = &a.cond {
        rec.input(p)?;
    }
    let structure_latent = match &a.structure_latent {
        Some(p) => {
            rec.input(p)?;
            Some(assets::load_tensor(p)?)
        }
        None => None,
    };
    let out = match cfg.mode {
        EditMode::Variation => {
            let l = variation(&latent_model, &latents, cond.as_ref(), &cfg.sampler, ctx.seed)?;
            Generated { structure_latent: structure_latent.unwrap_or_else(|| DenseTensor::zeros(vec![0])), latents: l }
        }
        EditMode::Repaint => {
            let bbox = cfg.bbox.ok_or_else(|| CliError::usage("repaint needs --bbox"))?;
            let sm = a.structure_model.as_ref().ok_or_else(|| CliError::usage("repaint needs --structure-model"))?;
            let structure_latent =
                structure_latent.ok_or_else(|| CliError::usage("repaint needs --structure-latent"))?;
            let structure_model = assets::load_mlp(sm)?;
            rec.input(sm)?;
            let decoder = assets::load_structure_decoder(&cfg.decoder)?;
            record_decoder(&mut rec, &cfg.decoder)?;
            let previous = Generated { structure_latent, latents };
            repaint_edit(
                &structure_model,
                decoder.as_ref(),
                &latent_model,
                &previous,
                bbox,
                cond.as_ref(),
                &cfg.sampler,
                ctx.seed,
            )?
        }
    };
    write_grid(&mut rec, &ctx.path("latents.slat"), &out.latents)?;
    if !out.structure_latent.is_empty() {
        write_tensor(&mut rec, &ctx.path("structure_latent.dnse"), &out.structure_latent)?;
    }
    rec.finish(&ctx.out_dir, to_value(&cfg)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub which: Vec<String>,
    pub radius: f64,
    /// Geometry is reduced to this many points by farthest point sampling.
    pub fps_points: usize,
    /// Surface sampling applied to meshes.
    pub sampling: SurfaceSampling,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            which: vec!["chamfer".into(), "fscore".into()],
            radius: FSCORE_RADIUS,
            fps_points: FPS_POINTS,
            sampling: SurfaceSampling::default(),
        }
    }
}

fn geometry_points(asset: Asset, path: &Path, cfg: &MetricsConfig, seed: u64) -> CliResult<Vec<[f64; 3]>> {
    let points = match asset {
        Asset::Points(p) => p,
        Asset::Mesh(m) => surface_point_cloud(&m, &cfg.sampling, seed)?.cloud.points,
        _ => return Err(CliError::input(format!("{} is not a point cloud or mesh", path.display()))),
    };
    if points.len() > cfg.fps_points {
        return Ok(farthest_point_sample(&points, cfg.fps_points, seed)?);
    }
    Ok(points)
}

pub fn cmd_metrics(ctx: &Context, a: &MetricsArgs) -> CliResult<RunManifest> {
    let cfg: MetricsConfig = resolve(ctx.section.clone(), json!({ "which": a.which, "radius": a.radius }))?;
    let mut rec = Recorder::new("metrics", ctx.seed);
    let pred = assets::load_asset(&a.pred)?;
    let reference = assets::load_asset(&a.reference)?;
    rec.input(&a.pred)?;
    rec.input(&a.reference)?;
    let images = match (&pred, &reference) {
        (Asset::Image(p), Asset::Image(r)) => Some((p.clone(), r.clone())),
        (Asset::Image(_), _) | (_, Asset::Image(_)) => {
            return Err(CliError::input("cannot compare an image with geometry"));
        }
        _ => None,
    };
    let geometry = match images {
        Some(_) => None,
        None => Some((
            geometry_points(pred, &a.pred, &cfg, ctx.seed)?,
            geometry_points(reference, &a.reference, &cfg, ctx.seed)?,
        )),
    };
    let mut reports = Vec::new();
    for m in &cfg.which {
        let r = match (m.as_str(), &geometry, &images) {
            ("chamfer", Some((p, r)), _) => {
                MetricReport::new("chamfer", chamfer(p, r)?, json!({"fps_points": cfg.fps_points}), ctx.seed)
            }
            ("fscore", Some((p, r)), _) => {
                MetricReport::new("fscore", fscore(p, r, cfg.radius)?, json!({"radius": cfg.radius}), ctx.seed)
            }
            ("l1", _, Some((p, r))) => MetricReport::new("l1", image_l1(p, r)?, json!({}), ctx.seed),
            ("psnr", _, Some((p, r))) => MetricReport::new("psnr", image_psnr(p, r)?, json!({}), ctx.seed),
            ("ssim", _, Some((p, r))) => MetricReport::new("ssim", image_ssim(p, r)?, json!({}), ctx.seed),
            ("chamfer" | "fscore" | "l1" | "psnr" | "ssim", _, _) => {
                return Err(CliError::input(format!("metric '{m}' does not apply to these inputs")));
            }
            _ => return Err(CliError::usage(format!("unknown metric '{m}'"))),
        };
        reports.push(r);
    }
    write_file(&mut rec, &ctx.path("metrics.json"), serde_json::to_string_pretty(&reports)?.as_bytes())?;
    rec.finish(&ctx.out_dir, to_value(&cfg)?)
}
