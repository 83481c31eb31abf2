//! Default hyper-parameters of the pipeline.

/// Side of the structured-latent grid.
pub const GRID_RESOLUTION: u32 = 64;
/// Gaussians decoded per active voxel.
pub const GAUSSIANS_PER_VOXEL: usize = 32;
/// Lower bound on every Gaussian scale component.
pub const MIN_GAUSSIAN_SCALE: f64 = 9e-4;
/// Variance (in pixels^2) added to projected Gaussian covariances.
pub const SCREEN_FILTER_VARIANCE: f64 = 0.1;
/// Rank of the per-voxel CP decomposition.
pub const CP_RANK: usize = 16;
/// Side of the local radiance volume owned by one voxel.
pub const CP_SIDE: usize = 8;
/// Radiance channels per texel: r, g, b, density.
pub const CP_CHANNELS: usize = 4;
/// Side of the mesh SDF grid after two 2x upsampling stages.
pub const MESH_RESOLUTION: u32 = 256;
/// Signed distance reported for vertices touched by no active voxel.
pub const INACTIVE_SDF: f64 = 1.0;
/// Classifier-free guidance strength.
pub const CFG_STRENGTH: f64 = 3.0;
/// ODE steps used by the samplers.
pub const SAMPLING_STEPS: usize = 50;
/// Logit-normal timestep distribution used in training.
pub const TIMESTEP_MU: f64 = 1.0;
pub const TIMESTEP_SIGMA: f64 = 1.0;
/// Probability of replacing the condition with the null token in training.
pub const COND_DROP_RATE: f64 = 0.1;
/// F-score distance threshold.
pub const FSCORE_RADIUS: f64 = 0.05;
/// Points kept by farthest point sampling for evaluation.
pub const FPS_POINTS: usize = 4000;
/// Views and points of the surface point-cloud protocol.
pub const EVAL_VIEWS: usize = 100;
pub const EVAL_POINTS: usize = 100_000;
/// Weights inside the training losses.
pub const SSIM_WEIGHT: f64 = 0.2;
pub const PERCEPTUAL_WEIGHT: f64 = 0.2;
pub const DEPTH_HUBER_WEIGHT: f64 = 10.0;
pub const TSDF_WEIGHT: f64 = 0.01;
pub const MESH_COLOR_WEIGHT: f64 = 0.1;
pub const HUBER_DELTA: f64 = 1.0;
