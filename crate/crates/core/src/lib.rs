//! Plant generation as Gaussian-splat scenes.
//!
//! The pipeline has two entry points that meet at a colored [`PointCloud`]:
//! procedural plants built from L-System grammars ([`lsystem`]) and captured
//! point clouds cleaned by [`pointcloud`]. The cloud seeds a
//! [`GaussianScene`], which [`optimizer::dream`] refines with score
//! distillation driven by a [`guidance::GuidanceSource`], anchored to the
//! depth of the frozen initial scene and periodically culled of oversized
//! splats.
//!
//! Data-parallel loops (tile rasterization, kNN queries, surface sampling,
//! voxel binning) run on rayon when the `parallel` feature is enabled (the
//! default) and fall back to plain iterators otherwise. Both paths produce
//! bit-identical results.

pub mod gaussians;
pub mod guidance;
pub mod lsystem;
pub mod mesh;
pub mod metrics;
pub mod optimizer;
pub mod par;
pub mod ply;
pub mod pointcloud;
pub mod renderer;
pub mod rng;

pub use gaussians::GaussianScene;
pub use mesh::{Label, PlantMesh};
pub use pointcloud::PointCloud;
pub use renderer::{Camera, ColorImage, DepthMap, Mask, RenderedImage};
