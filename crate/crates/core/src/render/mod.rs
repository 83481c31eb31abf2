//! CPU reference renderers and image comparisons.

mod image;
mod raster;
mod raymarch;
mod splat;

pub use image::*;
pub use raster::*;
pub use raymarch::*;
pub use splat::*;
