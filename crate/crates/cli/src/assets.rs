//! Loading of the file formats the commands consume.

use std::fs;
use std::path::Path;

use slat_core::decoders::{GaussianSet, TriMesh};
use slat_core::flow::{PixelShuffleDecoder, StructureDecoder, TinyMlp};
use slat_core::io::{read_gaussians_ply, read_mesh_ply, read_obj, read_points_ply};
use slat_core::nn::{ConvUnet3d, Mat, WeightArchive};
use slat_core::render::{read_ppm, RenderedImage};
use slat_core::{DenseTensor, SparseGrid};

use crate::error::{CliError, CliResult};

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

fn context(path: &Path) -> impl Fn(slat_core::SlatError) -> CliError + '_ {
    move |e| {
        let c = CliError::from(e);
        match c {
            CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
            other => other,
        }
    }
}

pub fn load_grid(path: &Path) -> CliResult<SparseGrid> {
    SparseGrid::read_from(&read_bytes(path)?[..]).map_err(context(path))
}

pub fn load_tensor(path: &Path) -> CliResult<DenseTensor> {
    DenseTensor::read_from(&read_bytes(path)?[..]).map_err(context(path))
}

pub fn load_archive(dir: &Path) -> CliResult<WeightArchive> {
    if !dir.is_dir() {
        return Err(CliError::input(format!("checkpoint {} is not a directory", dir.display())));
    }
    WeightArchive::load(dir).map_err(context(dir))
}

pub fn load_mlp(dir: &Path) -> CliResult<TinyMlp> {
    TinyMlp::from_archive(&load_archive(dir)?).map_err(context(dir))
}

/// `pixel-shuffle:N` or a structure VAE checkpoint directory.
pub fn load_structure_decoder(decoder: &str) -> CliResult<Box<dyn StructureDecoder>> {
    if let Some(n) = decoder.strip_prefix("pixel-shuffle:") {
        let resolution: u32 = n.parse().map_err(|_| CliError::input(format!("bad decoder resolution '{n}'")))?;
        if resolution < 2 || !resolution.is_multiple_of(2) {
            return Err(CliError::input("pixel-shuffle resolution must be even"));
        }
        return Ok(Box::new(PixelShuffleDecoder { resolution }));
    }
    let dir = Path::new(decoder);
    Ok(Box::new(ConvUnet3d::from_archive(&load_archive(dir)?).map_err(context(dir))?))
}

/// A condition file holds a single row.
pub fn load_cond(path: Option<&Path>) -> CliResult<Option<Mat>> {
    let Some(path) = path else { return Ok(None) };
    let t = load_tensor(path)?;
    Ok(Some(Mat::new(1, t.data.len(), t.data).map_err(context(path))?))
}

/// What a PLY file holds, judged from its header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyKind {
    Gaussians,
    Mesh,
    Points,
}

pub fn ply_kind(bytes: &[u8]) -> CliResult<PlyKind> {
    let end = bytes
        .windows(10)
        .position(|w| w == b"end_header")
        .ok_or_else(|| CliError::input("PLY header has no end_header"))?;
    let header = String::from_utf8_lossy(&bytes[..end]);
    if header.lines().any(|l| l.trim() == "property float f_dc_0") {
        return Ok(PlyKind::Gaussians);
    }
    let faces = header.lines().any(|l| {
        let mut it = l.split_whitespace();
        it.next() == Some("element") && it.next() == Some("face")
    });
    Ok(if faces { PlyKind::Mesh } else { PlyKind::Points })
}

fn extension(path: &Path) -> String {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase()).unwrap_or_default()
}

pub fn load_mesh(path: &Path) -> CliResult<TriMesh> {
    let bytes = read_bytes(path)?;
    let mesh = match extension(path).as_str() {
        "obj" => read_obj(&bytes[..]),
        "ply" => read_mesh_ply(&bytes[..]),
        e => return Err(CliError::input(format!("{}: unsupported mesh format '{e}'", path.display()))),
    };
    mesh.map_err(context(path))
}

/// Any asset the renderer or the metrics understand.
#[derive(Debug, Clone)]
pub enum Asset {
    Gaussians(GaussianSet),
    Mesh(TriMesh),
    Points(Vec<[f64; 3]>),
    Field(SparseGrid),
    Image(RenderedImage),
}

pub fn load_asset(path: &Path) -> CliResult<Asset> {
    let bytes = read_bytes(path)?;
    let ctx = context(path);
    Ok(match extension(path).as_str() {
        "obj" => Asset::Mesh(read_obj(&bytes[..]).map_err(ctx)?),
        "ply" => match ply_kind(&bytes)? {
            PlyKind::Gaussians => Asset::Gaussians(read_gaussians_ply(&bytes[..]).map_err(ctx)?),
            PlyKind::Mesh => Asset::Mesh(read_mesh_ply(&bytes[..]).map_err(ctx)?),
            PlyKind::Points => Asset::Points(read_points_ply(&bytes[..]).map_err(ctx)?.points),
        },
        "slat" => Asset::Field(SparseGrid::read_from(&bytes[..]).map_err(ctx)?),
        "ppm" => {
            let (w, h, rgb) = read_ppm(&bytes[..]).map_err(ctx)?;
            let mut img = RenderedImage::blank(w, h, [0.0; 3]);
            img.rgb = rgb;
            img.alpha = vec![1.0; img.pixel_count()];
            Asset::Image(img)
        }
        e => return Err(CliError::input(format!("{}: unsupported asset format '{e}'", path.display()))),
    })
}
