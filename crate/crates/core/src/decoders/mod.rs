//! Output-format heads: Gaussians, CP radiance cells, FlexiCubes meshes.

mod cp;
mod flexi;
mod flexicubes;
mod gaussians;
mod trimesh;

pub use cp::*;
pub use flexi::*;
pub use flexicubes::*;
pub use gaussians::*;
pub use trimesh::TriMesh;
pub(crate) use trimesh::{dot, normalize, sub};
