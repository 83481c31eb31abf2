use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use slat_core::decoders::{
    activate_gaussian, assemble_field, flexicubes_extract, DenseSdf, GaussianSet, CP_CELL_CHANNELS, RAW_GAUSSIAN,
};
use slat_core::metrics::{chamfer, farthest_point_order};
use slat_core::multiview::Camera;
use slat_core::nn::{windowed_mhsa, AttentionWeights, Mat, WindowConfig};
use slat_core::render::{raymarch_field, splat_gaussians};
use slat_core::sparse::{sparse_conv3, ConvKernel};
use slat_core::{SparseGrid, VoxelCoord};

fn shell(res: u32, channels: usize, rng: &mut ChaCha8Rng) -> SparseGrid {
    let c = res as f64 / 2.0;
    let coords: Vec<VoxelCoord> = (0..(res * res * res) as usize)
        .map(|i| VoxelCoord::from_linear(i, res))
        .filter(|v| {
            let d = v.as_array().iter().map(|&x| (x as f64 + 0.5 - c).powi(2)).sum::<f64>().sqrt();
            (d - 0.35 * res as f64).abs() < 1.0
        })
        .collect();
    let feats = (0..coords.len() * channels).map(|_| rng.random_range(-1.0..1.0)).collect();
    SparseGrid::new(res, channels, coords, feats).unwrap()
}

fn sparse_ops(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let grid = shell(64, 16, &mut rng);
    let kernel = ConvKernel::new(16, 16, (0..27 * 256).map(|_| rng.random_range(-0.1..0.1)).collect(), vec![0.0; 16])
        .unwrap();
    c.bench_function("sparse_conv3 64^3 shell 16ch", |b| b.iter(|| sparse_conv3(black_box(&grid), &kernel).unwrap()));

    let w = AttentionWeights::init(64, 64, 4, &mut rng).unwrap();
    let x = Mat::new(grid.len(), 64, (0..grid.len() * 64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let cfg = WindowConfig::shifted(8);
    c.bench_function("windowed attention 64^3 shell dim 64", |b| {
        b.iter(|| windowed_mhsa(black_box(&x), grid.coords(), &w, &cfg).unwrap())
    });
}

fn decoders(c: &mut Criterion) {
    let sdf = DenseSdf::from_fn(64, |p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 0.3);
    c.bench_function("flexicubes sphere 64^3", |b| b.iter(|| flexicubes_extract(black_box(&sdf)).unwrap()));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cells = shell(32, CP_CELL_CHANNELS, &mut rng);
    let field = assemble_field(&cells).unwrap();
    let cam = Camera::new([0.0, 0.4, 2.0], 40.0, 64, 64).unwrap();
    c.bench_function("raymarch CP field 64x64", |b| b.iter(|| raymarch_field(&field, &cam, 1.0 / 128.0, [1.0; 3]).unwrap()));
}

fn render_and_metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = shell(32, 0, &mut rng);
    let gaussians = grid
        .coords()
        .iter()
        .flat_map(|&v| (0..4).map(move |_| v))
        .map(|v| {
            let raw: Vec<f64> = (0..RAW_GAUSSIAN).map(|_| rng.random_range(-1.0..1.0)).collect();
            activate_gaussian(&raw, v, 32)
        })
        .collect();
    let set = GaussianSet { resolution: 32, gaussians };
    let cam = Camera::new([1.2, 0.9, 1.6], 40.0, 128, 128).unwrap();
    c.bench_function("splat 128x128", |b| b.iter(|| splat_gaussians(black_box(&set), &cam, [1.0; 3])));

    let cloud = |rng: &mut ChaCha8Rng| -> Vec<[f64; 3]> {
        (0..20_000).map(|_| [0, 1, 2].map(|_| rng.random_range(-0.5..0.5))).collect()
    };
    let (x, y) = (cloud(&mut rng), cloud(&mut rng));
    c.bench_function("chamfer 20K x 20K", |b| b.iter(|| chamfer(black_box(&x), &y).unwrap()));
    c.bench_function("fps 4000 of 20K", |b| b.iter(|| farthest_point_order(black_box(&x), 4000, 0).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = sparse_ops, decoders, render_and_metrics
}
criterion_main!(benches);
