//! Submap construction from a global cloud and retrieval by global descriptor.
//!
//! A submap is the part of the global cloud a reference camera can see within
//! a fixed range, downsampled to a point budget. Retrieval is an exhaustive
//! scan over global descriptors with Euclidean distance; descriptors are
//! expected to be L2-normalized by whoever produced them.

use crate::geometry::{CameraModel, PointCloud, Pose};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SubmapError {
    #[error("no points fall inside the view frustum")]
    EmptySubmap,
    #[error("requested top-{k} but the index holds {available} entries")]
    KTooLarge { k: usize, available: usize },
    #[error("descriptor dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("descriptor contains a non-finite value")]
    NonFiniteDescriptor,
}

/// A reference view's point cloud cutout, tagged with the pose it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct Submap {
    pub id: u64,
    /// World-to-camera pose of the reference view.
    pub origin: Pose,
    pub points: PointCloud,
}

/// Provenance carried alongside an index; not part of the serialized format.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexMetadata {
    /// Point budget each submap was downsampled to.
    pub point_budget: u32,
    /// Frustum cut radius in meters.
    pub frustum_radius: f64,
    pub dataset_tag: String,
}

impl Default for IndexMetadata {
    fn default() -> Self {
        Self { point_budget: 65_536, frustum_radius: 10.0, dataset_tag: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: u64,
    pub descriptor: Vec<f32>,
}

/// Flat retrieval index: one global descriptor per submap.
#[derive(Debug, Clone, PartialEq)]
pub struct SubmapIndex {
    dim: usize,
    pub entries: Vec<IndexEntry>,
    pub metadata: IndexMetadata,
}

impl SubmapIndex {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::new(), metadata: IndexMetadata::default() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, id: u64, descriptor: Vec<f32>) -> Result<(), SubmapError> {
        if descriptor.len() != self.dim {
            return Err(SubmapError::DimensionMismatch { expected: self.dim, got: descriptor.len() });
        }
        if descriptor.iter().any(|v| !v.is_finite()) {
            return Err(SubmapError::NonFiniteDescriptor);
        }
        self.entries.push(IndexEntry { id, descriptor });
        Ok(())
    }
}

/// Indices of cloud points visible from `pose` with camera depth in `(0, radius]`.
pub fn cut_submap_indices(
    cloud: &PointCloud,
    pose: &Pose,
    camera: &CameraModel,
    radius: f64,
) -> Vec<usize> {
    cloud
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let proj = camera.project_world(pose, &p.coords);
            (proj.valid && proj.depth <= radius).then_some(i)
        })
        .collect()
}

/// Frustum cut: the points themselves. Errors when nothing is visible.
pub fn cut_submap(
    cloud: &PointCloud,
    pose: &Pose,
    camera: &CameraModel,
    radius: f64,
) -> Result<PointCloud, SubmapError> {
    let indices = cut_submap_indices(cloud, pose, camera, radius);
    if indices.is_empty() {
        return Err(SubmapError::EmptySubmap);
    }
    Ok(cloud.select(&indices))
}

/// Indices of a uniform random sample without replacement, ascending. Keeps
/// everything when `m >= len`. Deterministic for a fixed seed.
pub fn downsample_indices(len: usize, m: usize, seed: u64) -> Vec<usize> {
    if m >= len {
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, len, m).into_vec();
    picked.sort_unstable();
    picked
}

/// Uniform random downsample to at most `m` points, input order preserved.
pub fn downsample_uniform(cloud: &PointCloud, m: usize, seed: u64) -> PointCloud {
    cloud.select(&downsample_indices(cloud.len(), m, seed))
}

/// Voxel-grid thinning: keeps the first point of each occupied voxel, input
/// order preserved. Deterministic alternative to the uniform sampler when a
/// spatially even cover matters more than an exact budget.
pub fn downsample_voxel(cloud: &PointCloud, voxel_size: f64) -> PointCloud {
    assert!(voxel_size > 0.0, "voxel size must be positive");
    let mut first_in_voxel: BTreeMap<(i64, i64, i64), usize> = BTreeMap::new();
    for (i, p) in cloud.iter().enumerate() {
        let key = (
            (p.x / voxel_size).floor() as i64,
            (p.y / voxel_size).floor() as i64,
            (p.z / voxel_size).floor() as i64,
        );
        first_in_voxel.entry(key).or_insert(i);
    }
    let mut indices: Vec<usize> = first_in_voxel.into_values().collect();
    indices.sort_unstable();
    cloud.select(&indices)
}

/// Cut, then downsample to the point budget with the given seed.
pub fn build_submap(
    id: u64,
    cloud: &PointCloud,
    pose: &Pose,
    camera: &CameraModel,
    radius: f64,
    point_budget: usize,
    seed: u64,
) -> Result<Submap, SubmapError> {
    let cut = cut_submap(cloud, pose, camera, radius)?;
    Ok(Submap { id, origin: *pose, points: downsample_uniform(&cut, point_budget, seed) })
}

/// Ids of the `k` entries nearest to `query` in Euclidean distance, ascending
/// distance, ties broken toward the smaller id.
pub fn retrieve_topk(
    index: &SubmapIndex,
    query: &[f32],
    k: usize,
) -> Result<Vec<u64>, SubmapError> {
    if query.len() != index.dim() {
        return Err(SubmapError::DimensionMismatch { expected: index.dim(), got: query.len() });
    }
    if k > index.len() {
        return Err(SubmapError::KTooLarge { k, available: index.len() });
    }
    let mut scored: Vec<(f64, u64)> = index
        .entries
        .iter()
        .map(|e| (descriptor_distance_sq(query, &e.descriptor), e.id))
        .collect();
    scored.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, id)| id).collect())
}

/// Squared Euclidean distance accumulated in f64.
pub fn descriptor_distance_sq(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}
