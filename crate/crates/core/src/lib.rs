//! Neural signed-distance mapping from posed range scans.
//!
//! Geometry is stored in three axis-aligned planar quadtrees whose deepest
//! levels hold learnable vertex features. A query point is projected onto the
//! XY, XZ and YZ planes, bilinearly interpolated on each, summed across planes
//! and concatenated across levels, then joined with a Gaussian Fourier
//! encoding and decoded by a small MLP into a signed distance. Meshes come out
//! of marching cubes and are scored against ground-truth clouds.
//!
//! Numeric modules are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix the 64-bit variants used for training.

pub mod decoder;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod feature_grid;
pub mod geometry;
pub mod io;
pub mod meshing;
pub mod model;
pub mod optim;
pub mod ply;
pub mod scalar;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Point3 = geometry::Point3<f64>;
pub type Pose = geometry::Pose<f64>;
pub type Ray = geometry::Ray<f64>;
pub type Extent = geometry::Extent<f64>;
pub type FeaturePlaneSet = feature_grid::FeaturePlaneSet<f64>;
pub type PositionalEncoder = encoding::PositionalEncoder<f64>;
pub type MlpDecoder = decoder::MlpDecoder<f64>;
pub type SdfModel = model::SdfModel<f64>;

pub type Point3f = geometry::Point3<f32>;
pub type FeaturePlaneSetF32 = feature_grid::FeaturePlaneSet<f32>;
pub type SdfModelF32 = model::SdfModel<f32>;
