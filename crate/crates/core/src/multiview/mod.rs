//! Cameras, projection, and multiview feature aggregation onto voxels.

mod aggregate;
mod camera;

pub use aggregate::{aggregate_features, voxel_center, Aggregated, FeatureView, Interpolation};
pub use camera::{
    sample_sphere_cameras, unproject_depth, Camera, CameraFrame, Projection, Vec3,
    DEFAULT_ENCODE_VIEWS, EVAL_CAMERA_RADIUS, EVAL_FOV_DEG,
};
