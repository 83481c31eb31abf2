//! Structured 3D latents on sparse voxel grids.
//!
//! The crate covers the full desk-scale pipeline: sparse grids and their
//! operators, multiview feature aggregation, transformer and convolution
//! building blocks, rectified-flow generation and editing, decoders to
//! Gaussians / radiance fields / meshes, CPU renderers, and the loss and
//! metric formulas used to train and evaluate them.

// Index loops mirror the math; `!(x >= 0.0)` style checks also reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod decoders;
pub mod defaults;
pub mod error;
pub mod flow;
pub mod io;
pub mod metrics;
pub mod multiview;
pub mod nn;
pub mod numeric;
pub mod render;
pub mod sparse;
pub mod tensor;
pub mod voxelize;

pub use error::{Result, SlatError};
pub use sparse::{DenseBinaryGrid, SparseGrid, VoxelCoord};
pub use tensor::DenseTensor;
