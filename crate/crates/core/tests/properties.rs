use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slat_core::decoders::{activate_gaussian, GaussianSet, RAW_GAUSSIAN};
use slat_core::flow::interpolate;
use slat_core::metrics::farthest_point_order;
use slat_core::multiview::{aggregate_features, Camera, FeatureView, Interpolation};
use slat_core::nn::{window_partition, windowed_mhsa, AttentionWeights, Mat, WindowConfig};
use slat_core::render::splat_gaussians;
use slat_core::sparse::{deserialize, from_dense, serialize, to_dense};
use slat_core::{DenseBinaryGrid, DenseTensor, SparseGrid, VoxelCoord};

fn random_grid(res: u32, channels: usize, density: f64, rng: &mut ChaCha8Rng) -> SparseGrid {
    let n = (res * res * res) as usize;
    let coords: Vec<VoxelCoord> =
        (0..n).filter(|_| rng.random_bool(density)).map(|i| VoxelCoord::from_linear(i, res)).collect();
    let feats = (0..coords.len() * channels).map(|_| rng.random_range(-1.0..1.0)).collect();
    SparseGrid::new(res, channels, coords, feats).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn serialization_roundtrips(res in 1u32..=16, density in 0.0f64..0.5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_grid(res, 3, density, &mut rng);
        let seq = serialize(&g);
        prop_assert_eq!(seq.len(), g.len());
        prop_assert_eq!(deserialize(&seq).unwrap(), g.clone());
        prop_assert_eq!(to_dense(&from_dense(&to_dense(&g), 1.0).unwrap()), to_dense(&g));
    }

    #[test]
    fn coords_stay_sorted(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coords: Vec<VoxelCoord> = (0..200).map(|i| VoxelCoord::from_linear(i * 7, 16)).collect();
        coords.shuffle(&mut rng);
        let g = SparseGrid::from_unsorted(16, 0, coords, vec![]).unwrap();
        prop_assert!(g.coords().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn window_partition_covers_each_token_once(
        seed in any::<u64>(),
        ws in prop::sample::select(vec![2u32, 4, 8]),
        s in 0u32..8,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_grid(16, 0, 0.2, &mut rng);
        let cfg = WindowConfig::new(ws, [s % ws, (s + 1) % ws, (s + 2) % ws]).unwrap();
        let groups = window_partition(g.coords(), &cfg);
        prop_assert_eq!(groups.iter().map(Vec::len).sum::<usize>(), g.len());
        let mut seen = vec![false; g.len()];
        for group in &groups {
            let w = cfg.window_of(g.coords()[group[0]]);
            for &i in group {
                prop_assert!(!seen[i]);
                seen[i] = true;
                prop_assert_eq!(cfg.window_of(g.coords()[i]), w);
            }
        }
    }

    #[test]
    fn attention_is_permutation_equivariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = AttentionWeights::init(8, 8, 2, &mut rng).unwrap();
        let g = random_grid(16, 0, 0.05, &mut rng);
        let n = g.len();
        let x: Vec<f64> = (0..n * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cfg = WindowConfig::shifted(8);
        let base = windowed_mhsa(&Mat::new(n, 8, x.clone()).unwrap(), g.coords(), &w, &cfg).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let px: Vec<f64> = perm.iter().flat_map(|&i| x[i * 8..(i + 1) * 8].to_vec()).collect();
        let pc: Vec<VoxelCoord> = perm.iter().map(|&i| g.coords()[i]).collect();
        let out = windowed_mhsa(&Mat::new(n, 8, px).unwrap(), &pc, &w, &cfg).unwrap();
        for (row, &i) in perm.iter().enumerate() {
            for c in 0..8 {
                prop_assert!((out.row(row)[c] - base.row(i)[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_activation_invariants(seed in any::<u64>(), scale in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let res = 64;
        let gaussians = (0..50)
            .map(|i| {
                let raw: Vec<f64> = (0..RAW_GAUSSIAN).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
                activate_gaussian(&raw, VoxelCoord::from_linear(i * 997, res), res)
            })
            .collect();
        let set = GaussianSet { resolution: res, gaussians };
        prop_assert!(set.check_invariants().is_ok(), "{:?}", set.check_invariants());
    }

    #[test]
    fn fps_distances_never_increase(seed in any::<u64>(), k in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 3]> = (0..60).map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0))).collect();
        let (order, dists) = farthest_point_order(&pts, k, 0).unwrap();
        prop_assert_eq!(order.len(), k);
        prop_assert!(dists[1..].windows(2).all(|w| w[0] >= w[1]));
        let mut uniq = order.clone();
        uniq.sort();
        uniq.dedup();
        prop_assert_eq!(uniq.len(), k);
    }

    #[test]
    fn interpolation_fixed_point(x in prop::collection::vec(-10.0f64..10.0, 1..8), t in 0.0f64..=1.0) {
        for (a, b) in interpolate(&x, &x, t).unwrap().iter().zip(&x) {
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs());
        }
    }

    #[test]
    fn splat_output_ranges(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let res = 16;
        let gaussians = (0..40)
            .map(|i| {
                let raw: Vec<f64> = (0..RAW_GAUSSIAN).map(|_| rng.random_range(-3.0..3.0)).collect();
                activate_gaussian(&raw, VoxelCoord::from_linear(i * 101, res), res)
            })
            .collect();
        let cam = Camera::new([1.0, 0.8, 1.5], 40.0, 24, 20).unwrap();
        let img = splat_gaussians(&GaussianSet { resolution: res, gaussians }, &cam, [0.3, 0.6, 0.9]);
        prop_assert!(img.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
        prop_assert!(img.rgb.iter().flatten().all(|c| (0.0..=1.0).contains(c)));
    }
}

fn views(maps: &[Vec<f64>], cams: &[Camera], d: usize) -> Vec<FeatureView> {
    maps.iter()
        .zip(cams)
        .map(|(m, c)| {
            let t = DenseTensor::new(vec![c.height as usize, c.width as usize, d], m.clone()).unwrap();
            FeatureView::new(c.clone(), t).unwrap()
        })
        .collect()
}

#[test]
fn aggregation_is_order_free_and_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut occ = DenseBinaryGrid::new(16);
    for _ in 0..80 {
        occ.set(VoxelCoord::new(rng.random_range(4..12), rng.random_range(4..12), rng.random_range(4..12)), true);
    }
    let structure = from_dense(&occ, 0.0).unwrap();
    let cams: Vec<Camera> = [[2.0, 0.3, 0.1], [-0.4, 2.0, 0.5], [0.2, -0.6, -2.0], [1.4, 1.4, 0.0]]
        .iter()
        .map(|&p| Camera::new(p, 40.0, 20, 16).unwrap())
        .collect();
    let d = 3;
    let map = |rng: &mut ChaCha8Rng| (0..20 * 16 * d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let a: Vec<Vec<f64>> = (0..4).map(|_| map(&mut rng)).collect();
    let b: Vec<Vec<f64>> = (0..4).map(|_| map(&mut rng)).collect();
    for interp in [Interpolation::Nearest, Interpolation::Bilinear] {
        let fa = aggregate_features(&structure, &views(&a, &cams, d), interp).unwrap();
        let fb = aggregate_features(&structure, &views(&b, &cams, d), interp).unwrap();

        let order = [2, 0, 3, 1];
        let pa: Vec<Vec<f64>> = order.iter().map(|&i| a[i].clone()).collect();
        let pc: Vec<Camera> = order.iter().map(|&i| cams[i].clone()).collect();
        let fp = aggregate_features(&structure, &views(&pa, &pc, d), interp).unwrap();
        assert_eq!(fp.grid, fa.grid);
        assert_eq!(fp.unseen, fa.unseen);

        let mix: Vec<Vec<f64>> =
            a.iter().zip(&b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| 2.0 * p - 0.5 * q).collect()).collect();
        let fm = aggregate_features(&structure, &views(&mix, &cams, d), interp).unwrap();
        for ((m, x), y) in fm.grid.features().iter().zip(fa.grid.features()).zip(fb.grid.features()) {
            assert!((m - (2.0 * x - 0.5 * y)).abs() < 1e-12);
        }
    }
}
