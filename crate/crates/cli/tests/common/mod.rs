#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use slat_core::decoders::{activate_flexi, corner_offset, FLEXI_CHANNELS};
use slat_core::flow::{MlpShape, TinyMlp};
use slat_core::{SparseGrid, VoxelCoord};

pub fn slat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slat")).args(args).output().expect("slat runs")
}

/// Runs and panics with stderr unless the exit code is zero.
pub fn slat_ok(args: &[&str]) -> Output {
    let out = slat(args);
    assert!(out.status.success(), "slat {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn sha(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

/// A flow MLP whose velocity is the constant `v`: every weight zero and the
/// output bias set to `v`.
pub fn constant_mlp(v: &[f64], aux_dim: usize, dir: &Path) -> PathBuf {
    let shape = MlpShape { data_dim: v.len(), aux_dim, cond_dim: 0, hidden: vec![4] };
    let mut net = TinyMlp::init(shape, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for l in &mut net.layers {
        l.weight.fill(0.0);
        l.bias.fill(0.0);
    }
    net.layers.last_mut().unwrap().bias = v.to_vec();
    net.to_archive().unwrap().save(dir).unwrap();
    dir.to_path_buf()
}

/// Activated FlexiCubes parameters of a sphere SDF on the narrow band of
/// voxels inside and just outside its surface.
pub fn sphere_flexi_grid(res: u32, radius: f64) -> SparseGrid {
    let n = res as f64;
    let sdf = |v: [u32; 3]| v.iter().map(|&c| (c as f64 / n - 0.5).powi(2)).sum::<f64>().sqrt() - radius;
    let mut coords = Vec::new();
    let mut feats = Vec::new();
    for x in 0..res {
        for y in 0..res {
            for z in 0..res {
                let center = [x, y, z].map(|c| (c as f64 + 0.5) / n - 0.5);
                let d = center.iter().map(|c| c * c).sum::<f64>().sqrt() - radius;
                if d > 2.0 / n {
                    continue;
                }
                let mut f = activate_flexi(&[0.0; FLEXI_CHANNELS]);
                f[..21].fill(1.0);
                for k in 0..8 {
                    let o = corner_offset(k);
                    f[45 + k] = sdf([x + o[0], y + o[1], z + o[2]]);
                }
                coords.push(VoxelCoord::new(x, y, z));
                feats.extend(f);
            }
        }
    }
    SparseGrid::from_unsorted(res, FLEXI_CHANNELS, coords, feats).unwrap()
}

pub const CAMERA_JSON: &str =
    r#"{"position": [1.2, 0.9, 1.6], "target": [0.0, 0.0, 0.0], "fov_y_deg": 40.0, "width": 48, "height": 40}"#;

/// Paths of the fixture chain: checkpoints, generated latents, decoded
/// Gaussians and the rendered image.
pub struct Chain {
    pub latents: PathBuf,
    pub structure_latent: PathBuf,
    pub gaussians: PathBuf,
    pub image: PathBuf,
}

/// init -> generate -> decode gs -> render, all under `root`.
pub fn run_chain(root: &Path) -> Chain {
    let ck = root.join("ckpt");
    slat_ok(&["init", "--kind", "flow-mlp", "--data-dim", "512", "--hidden", "32", "--name", "structure", "--seed", "1", "--out-dir", s(&ck)]);
    slat_ok(&["init", "--kind", "flow-mlp", "--data-dim", "8", "--aux-dim", "6", "--hidden", "32", "--name", "latent", "--seed", "2", "--out-dir", s(&ck)]);
    slat_ok(&["init", "--kind", "gaussian-head", "--channels", "8", "--k", "4", "--seed", "3", "--out-dir", s(&ck)]);
    let gen = root.join("gen");
    slat_ok(&[
        "generate",
        "--structure-model", s(&ck.join("structure")),
        "--latent-model", s(&ck.join("latent")),
        "--decoder", "pixel-shuffle:8",
        "--steps", "10",
        "--seed", "7",
        "--out-dir", s(&gen),
    ]);
    let dec = root.join("dec");
    slat_ok(&["decode", "--latents", s(&gen.join("latents.slat")), "--format", "gs", "--head", s(&ck.join("gaussian-head")), "--out-dir", s(&dec)]);
    let cam = root.join("camera.json");
    std::fs::write(&cam, CAMERA_JSON).unwrap();
    let ren = root.join("render");
    slat_ok(&["render", "--asset", s(&dec.join("gaussians.ply")), "--camera", s(&cam), "--out-dir", s(&ren)]);
    Chain {
        latents: gen.join("latents.slat"),
        structure_latent: gen.join("structure_latent.dnse"),
        gaussians: dec.join("gaussians.ply"),
        image: ren.join("image.ppm"),
    }
}

pub fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden.json")
}

/// Compares against the stored hashes; `SLAT_BLESS=1` rewrites them.
pub fn check_golden(entries: &[(&str, String)]) -> Result<(), String> {
    let path = golden_path();
    let mut stored: serde_json::Map<String, serde_json::Value> = std::fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    if std::env::var("SLAT_BLESS").is_ok_and(|v| v == "1") {
        for (k, v) in entries {
            stored.insert(k.to_string(), serde_json::Value::String(v.clone()));
        }
        std::fs::write(&path, serde_json::to_string_pretty(&stored).unwrap() + "\n").unwrap();
        return Ok(());
    }
    for (k, v) in entries {
        match stored.get(*k).and_then(|x| x.as_str()) {
            Some(g) if g == v => {}
            Some(g) => return Err(format!("{k}: hash {v} differs from golden {g}")),
            None => return Err(format!("{k}: no golden hash stored")),
        }
    }
    Ok(())
}
