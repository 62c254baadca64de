//! Differentiable Gaussian-splat rendering.

pub mod geometry;
mod raster;
pub mod sh;

pub use geometry::{build_covariance, project_gaussian, Projection, BLUR_PX2, NEAR_PLANE};
pub use raster::{
    rasterize_backward, rasterize_forward, render, GradientSet, ProjectedSplat, RenderArtifacts,
    TileRect, ALPHA_MAX, ALPHA_MIN, TILE_SIZE, TRANSMITTANCE_MIN,
};
pub use sh::eval_sh;
