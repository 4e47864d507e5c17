//! Geometry-derived descriptor provider for synthetic end-to-end runs.
//!
//! Descriptors carry no learned content: a point's descriptor is a fixed
//! seeded random projection of its homogeneous world coordinates, normalized
//! to unit length. A pixel inherits the descriptor of the nearest point that
//! rasterizes onto it, so a 3D point and its true pixel agree exactly, and
//! distinct 3D points never collide. Patch descriptors are normalized means
//! of their member pixels; global descriptors are seeded projections of
//! centroid and extent, so views of the same region land close together.

use super::{normalize, Descriptors, FeatureError, ImageFeatures, PatchGrid};
use crate::geometry::{CameraModel, PointCloud, Pose};
use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Marks pixels no point rasterized onto.
pub const NO_WINNER: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct OracleDescriptorModel {
    local_dim: usize,
    global_dim: usize,
    /// local_dim x 4 projection of homogeneous point coordinates.
    local_proj: Vec<f32>,
    /// global_dim x 8 projection of (centroid, extent, mean view depth, 1).
    global_proj: Vec<f32>,
}

impl OracleDescriptorModel {
    pub fn new(seed: u64) -> Self {
        Self::with_dims(super::LOCAL_DESCRIPTOR_DIM, super::GLOBAL_DESCRIPTOR_DIM, seed)
    }

    pub fn with_dims(local_dim: usize, global_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let local_proj = (0..local_dim * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let global_proj = (0..global_dim * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { local_dim, global_dim, local_proj, global_proj }
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    pub fn global_dim(&self) -> usize {
        self.global_dim
    }

    /// Unit descriptor of a world point: `normalize(A [x y z 1])`.
    pub fn point_descriptor(&self, p: &Point3<f64>) -> Vec<f32> {
        let hom = [p.x, p.y, p.z, 1.0];
        let mut d: Vec<f32> = (0..self.local_dim)
            .map(|r| {
                let row = &self.local_proj[r * 4..r * 4 + 4];
                let acc: f64 = row.iter().zip(&hom).map(|(w, v)| *w as f64 * v).sum();
                acc as f32
            })
            .collect();
        normalize(&mut d);
        d
    }

    pub fn point_descriptors(&self, cloud: &PointCloud) -> Descriptors {
        let mut out = Descriptors::with_capacity(self.local_dim, cloud.len());
        for p in cloud.iter() {
            out.push(&self.point_descriptor(p)).expect("uniform dim");
        }
        out
    }

    /// Unit descriptor of a view of a region: centroid and extent of the
    /// world points plus the mean camera-frame depth, so the same region seen
    /// from different distances still separates. The zero vector stands in
    /// for an empty view.
    pub fn global_descriptor(&self, cloud: &PointCloud, mean_view_depth: f64) -> Vec<f32> {
        if cloud.is_empty() {
            return vec![0.0; self.global_dim];
        }
        let n = cloud.len() as f64;
        let mut centroid = [0.0f64; 3];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in cloud.iter() {
            for a in 0..3 {
                let v = p.coords[a];
                centroid[a] += v;
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        let input = [
            centroid[0] / n,
            centroid[1] / n,
            centroid[2] / n,
            hi[0] - lo[0],
            hi[1] - lo[1],
            hi[2] - lo[2],
            mean_view_depth,
            1.0,
        ];
        let mut d: Vec<f32> = (0..self.global_dim)
            .map(|r| {
                let row = &self.global_proj[r * 8..r * 8 + 8];
                let acc: f64 = row.iter().zip(&input).map(|(w, v)| *w as f64 * v).sum();
                acc as f32
            })
            .collect();
        normalize(&mut d);
        d
    }

    /// Renders image-side features for a view of `cloud`: each pixel takes
    /// the descriptor of the nearest point rasterizing onto it, patches take
    /// normalized member means, and the global descriptor summarizes the set
    /// of visible (winning) points.
    pub fn image_features(
        &self,
        cloud: &PointCloud,
        pose: &Pose,
        camera: &CameraModel,
        g: u32,
    ) -> Result<OracleImageFeatures, FeatureError> {
        let grid = PatchGrid::new(camera.width(), camera.height(), g)?;
        let (w, h) = (camera.width() as usize, camera.height() as usize);
        let mut winners = vec![NO_WINNER; w * h];
        let mut depths = vec![f64::INFINITY; w * h];
        for (i, p) in cloud.iter().enumerate() {
            let proj = camera.project_world(pose, &p.coords);
            if !proj.valid {
                continue;
            }
            let idx = proj.pixel.y.floor() as usize * w + proj.pixel.x.floor() as usize;
            if proj.depth < depths[idx] {
                depths[idx] = proj.depth;
                winners[idx] = i;
            }
        }
        let zero = vec![0.0f32; self.local_dim];
        let mut pixels = Descriptors::with_capacity(self.local_dim, w * h);
        for &winner in &winners {
            if winner == NO_WINNER {
                pixels.push(&zero).expect("uniform dim");
            } else {
                pixels.push(&self.point_descriptor(&cloud.points()[winner])).expect("uniform dim");
            }
        }
        // Patch descriptors: normalized mean over member (non-empty) pixels.
        let mut patches = Descriptors::with_capacity(self.local_dim, grid.num_patches() as usize);
        for class in 1..=grid.num_patches() {
            let (ox, oy) = grid.patch_origin(class);
            let mut acc = vec![0.0f64; self.local_dim];
            let mut members = 0usize;
            for dv in 0..g {
                for du in 0..g {
                    let idx = (oy + dv) as usize * w + (ox + du) as usize;
                    if winners[idx] == NO_WINNER {
                        continue;
                    }
                    members += 1;
                    for (a, v) in acc.iter_mut().zip(pixels.row(idx)) {
                        *a += *v as f64;
                    }
                }
            }
            let mut desc: Vec<f32> = if members == 0 {
                vec![0.0; self.local_dim]
            } else {
                acc.iter().map(|v| (*v / members as f64) as f32).collect()
            };
            normalize(&mut desc);
            patches.push(&desc).expect("uniform dim");
        }
        // Global descriptor over the set of distinct visible points, plus the
        // mean depth of occupied pixels.
        let mut depth_sum = 0.0f64;
        let mut occupied = 0usize;
        for d in &depths {
            if d.is_finite() {
                depth_sum += d;
                occupied += 1;
            }
        }
        let mean_depth = if occupied == 0 { 0.0 } else { depth_sum / occupied as f64 };
        let mut visible: Vec<usize> = winners.iter().copied().filter(|w| *w != NO_WINNER).collect();
        visible.sort_unstable();
        visible.dedup();
        let global = self.global_descriptor(&cloud.select(&visible), mean_depth);
        Ok(OracleImageFeatures { grid, width: w, global, patches, pixels, winners })
    }
}

/// Materialized image features produced by [`OracleDescriptorModel::image_features`].
pub struct OracleImageFeatures {
    grid: PatchGrid,
    width: usize,
    global: Vec<f32>,
    patches: Descriptors,
    pixels: Descriptors,
    /// Per-pixel index of the nearest rasterized point ([`NO_WINNER`] if none).
    pub winners: Vec<usize>,
}

impl ImageFeatures for OracleImageFeatures {
    fn grid(&self) -> &PatchGrid {
        &self.grid
    }

    fn global_descriptor(&self) -> &[f32] {
        &self.global
    }

    fn patch_descriptor(&self, class: u32) -> &[f32] {
        self.patches.row(class as usize - 1)
    }

    fn pixel_feature(&self, class: u32, j: u32) -> &[f32] {
        let (ox, oy) = self.grid.patch_origin(class);
        let u = ox + j % self.grid.g();
        let v = oy + j / self.grid.g();
        self.pixels.row(v as usize * self.width + u as usize)
    }
}
