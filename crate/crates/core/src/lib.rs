//! Geometry and optimization engine for visual localization against point-cloud submaps.
//!
//! The pipeline localizes a query image against a database of 3D submaps:
//! submap retrieval by global descriptor, removal of points invisible from a
//! reference view, coarse patch classification followed by fine per-pixel
//! matching for each 3D point, and weighted perspective-n-point pose
//! estimation with Levenberg-Marquardt refinement. Training-side losses and
//! evaluation metrics live here too, so the whole stack can be exercised and
//! verified against brute-force oracles on synthetic scenes.

pub mod geometry;
pub mod io;
pub mod raster;
pub mod submap;
pub mod feature;
pub mod matcher;
pub mod pnp;
pub mod losses;
pub mod metrics;
pub mod synth;
pub mod pipeline;

pub use geometry::{CameraModel, PointCloud, Pose, Projection};
