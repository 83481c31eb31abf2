//! Rectified-flow generation: forward interpolation, the flow-matching
//! loss, timestep sampling, guided ODE samplers, masked resampling for
//! editing, a trainable MLP velocity model and closed-form oracle fields.

mod core;
pub mod datasets;
mod field;
mod generate;
mod mlp;
mod sampler;
mod train;

pub use self::core::{cfg_velocity, cfm_target, interpolate, sample_timestep, sample_timestep_from, velocity_mse, LogitNormal};
pub use field::{
    ConstantField, GaussianField, IgnoreLayout, LayoutVelocityModel, MixtureComponent, MixtureField, OnLayout,
    VelocityModel,
};
pub use generate::{
    box_fill_ratio, connected_components, is_box, repaint_edit, threshold_structure, two_stage_generate, variation,
    Generated, PixelShuffleDecoder, StructureDecoder, VoxelBox,
};
pub use mlp::{time_inputs, CfmExample, MlpShape, TinyMlp, ARCHIVE_KIND as MLP_ARCHIVE_KIND, TIME_INPUTS};
pub use sampler::{
    gaussian_noise, guided_velocity, ode_sample, repaint_sample, EditMask, FlowState, Method, SamplerConfig,
};
pub use train::{cfm_loss, moving_average, train_toy_flow, Adam, DataItem, TrainConfig, TrainResult};
