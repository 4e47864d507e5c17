//! Depth-map rasterization, separable min/max pooling, and removal of
//! occluded ("invisible") points from a cloud rendered into a reference view.
//!
//! The filter rasterizes the cloud into a nearest-depth map `D`, computes
//! `maxpool(minpool(D))` with an odd square kernel, and keeps a point only if
//! its pixel survives the pooling equality test and its own depth stays within
//! tolerance of the nearest depth at that pixel. Empty pixels hold `+inf`;
//! max pooling treats `+inf` as absent. Pooling is a pure selection, so the
//! separable implementation is bit-identical to naive 2D windows.

use crate::geometry::{CameraModel, PointCloud, Pose};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RasterError {
    #[error("pooling kernel must be odd and positive, got {0}")]
    EvenKernel(usize),
    #[error("expected {expected} values for a {width}x{height} map, got {got}")]
    SizeMismatch { width: usize, height: usize, expected: usize, got: usize },
    #[error("depth values must be positive or +inf, got {0}")]
    NonPositiveDepth(f64),
}

/// Row-major depth image. `+inf` marks pixels no point landed on; every
/// finite value is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    /// All-empty map (`+inf` everywhere).
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![f64::INFINITY; width * height] }
    }

    pub fn from_values(width: usize, height: usize, data: Vec<f64>) -> Result<Self, RasterError> {
        if data.len() != width * height {
            return Err(RasterError::SizeMismatch {
                width,
                height,
                expected: width * height,
                got: data.len(),
            });
        }
        if let Some(&bad) = data.iter().find(|v| !(**v > 0.0)) {
            return Err(RasterError::NonPositiveDepth(bad));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.data[v * self.width + u] = value;
    }

    /// Fraction of pixels holding a finite depth.
    pub fn occupancy(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().filter(|v| v.is_finite()).count() as f64 / self.data.len() as f64
    }
}

/// Integer pixel a point rasterizes to, along with its camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelHit {
    pub u: u32,
    pub v: u32,
    pub depth: f64,
}

/// Depth map plus the per-point pixel assignment (`None` for points behind
/// the camera or outside the frame).
#[derive(Debug, Clone)]
pub struct RasterOutput {
    pub depth: DepthMap,
    pub hits: Vec<Option<PixelHit>>,
}

/// Renders the cloud into a nearest-depth map under `pose` (world-to-camera).
/// A point lands on the integer pixel containing its continuous projection.
pub fn rasterize_depth(cloud: &PointCloud, pose: &Pose, camera: &CameraModel) -> RasterOutput {
    let mut depth = DepthMap::empty(camera.width() as usize, camera.height() as usize);
    let mut hits = Vec::with_capacity(cloud.len());
    for p in cloud.iter() {
        let proj = camera.project_world(pose, &p.coords);
        if !proj.valid {
            hits.push(None);
            continue;
        }
        let u = proj.pixel.x.floor() as u32;
        let v = proj.pixel.y.floor() as u32;
        hits.push(Some(PixelHit { u, v, depth: proj.depth }));
        let (ui, vi) = (u as usize, v as usize);
        if proj.depth < depth.get(ui, vi) {
            depth.set(ui, vi, proj.depth);
        }
    }
    RasterOutput { depth, hits }
}

fn check_kernel(kernel: usize) -> Result<usize, RasterError> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(RasterError::EvenKernel(kernel));
    }
    Ok(kernel / 2)
}

/// One separable pass along a row or column. `stride` walks the scanline,
/// `fold` picks min or max over the clamped window.
fn pool_line(src: &[f64], dst: &mut [f64], offset: usize, stride: usize, n: usize, radius: usize, fold: fn(f64, f64) -> f64) {
    for i in 0..n {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(n - 1);
        let mut acc = src[offset + lo * stride];
        for j in (lo + 1)..=hi {
            acc = fold(acc, src[offset + j * stride]);
        }
        dst[offset + i * stride] = acc;
    }
}

fn separable_pool(map: &DepthMap, kernel: usize, fold: fn(f64, f64) -> f64) -> Result<DepthMap, RasterError> {
    let radius = check_kernel(kernel)?;
    let (w, h) = (map.width, map.height);
    let mut rows = vec![0.0; w * h];
    for v in 0..h {
        pool_line(&map.data, &mut rows, v * w, 1, w, radius, fold);
    }
    let mut out = vec![0.0; w * h];
    for u in 0..w {
        pool_line(&rows, &mut out, u, w, h, radius, fold);
    }
    Ok(DepthMap { width: w, height: h, data: out })
}

#[inline]
fn min_fold(a: f64, b: f64) -> f64 {
    if b < a {
        b
    } else {
        a
    }
}

/// Max that treats `+inf` as "no sample": finite values always win, and the
/// result is `+inf` only when every window entry is `+inf`.
#[inline]
fn max_fold(a: f64, b: f64) -> f64 {
    if a == f64::INFINITY {
        return b;
    }
    if b == f64::INFINITY {
        return a;
    }
    if b > a {
        b
    } else {
        a
    }
}

/// Minimum over an odd square window with clamp-to-edge padding.
pub fn minpool(map: &DepthMap, kernel: usize) -> Result<DepthMap, RasterError> {
    separable_pool(map, kernel, min_fold)
}

/// Maximum over an odd square window with clamp-to-edge padding, ignoring
/// `+inf` entries (`+inf` only where the whole window is empty).
pub fn maxpool(map: &DepthMap, kernel: usize) -> Result<DepthMap, RasterError> {
    separable_pool(map, kernel, max_fold)
}

/// Configuration for invisible-point removal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IprConfig {
    /// Odd pooling kernel side length in pixels.
    pub kernel: usize,
    /// Relative depth tolerance against the nearest depth at the pixel.
    pub rel_tol: f64,
    /// Absolute depth tolerance in meters.
    pub abs_tol: f64,
}

impl Default for IprConfig {
    fn default() -> Self {
        Self { kernel: 9, rel_tol: 1e-2, abs_tol: 1e-3 }
    }
}

/// Result of invisible-point removal: surviving indices into the input cloud
/// plus the rasterization artifacts the decision was made from.
#[derive(Debug, Clone)]
pub struct IprOutput {
    pub kept: Vec<usize>,
    pub raster: RasterOutput,
    pub pooled: DepthMap,
}

/// Removes points occluded in the view: keeps index `i` iff its pixel `p`
/// satisfies `maxpool(minpool(D))[p] == D[p]` (exact equality; pooling is a
/// selection) and its depth is within `max(abs_tol, rel_tol * D[p])` of `D[p]`.
pub fn ipr(
    cloud: &PointCloud,
    pose: &Pose,
    camera: &CameraModel,
    config: &IprConfig,
) -> Result<IprOutput, RasterError> {
    let raster = rasterize_depth(cloud, pose, camera);
    let pooled = maxpool(&minpool(&raster.depth, config.kernel)?, config.kernel)?;
    let mut kept = Vec::new();
    for (i, hit) in raster.hits.iter().enumerate() {
        let Some(hit) = hit else { continue };
        let (u, v) = (hit.u as usize, hit.v as usize);
        let nearest = raster.depth.get(u, v);
        if pooled.get(u, v) != nearest {
            continue;
        }
        let tol = config.abs_tol.max(config.rel_tol * nearest);
        if hit.depth <= nearest + tol {
            kept.push(i);
        }
    }
    Ok(IprOutput { kept, raster, pooled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::oracles::{naive_maxpool, naive_minpool};
    use nalgebra::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam64() -> CameraModel {
        CameraModel::simple(32.0, 64, 64).unwrap()
    }

    fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize, empty_frac: f64) -> DepthMap {
        let data = (0..w * h)
            .map(|_| {
                if rng.random::<f64>() < empty_frac {
                    f64::INFINITY
                } else {
                    rng.random_range(0.1..50.0)
                }
            })
            .collect();
        DepthMap::from_values(w, h, data).unwrap()
    }

    #[test]
    fn kernel_must_be_odd() {
        let map = DepthMap::empty(4, 4);
        assert_eq!(minpool(&map, 2).unwrap_err(), RasterError::EvenKernel(2));
        assert_eq!(maxpool(&map, 0).unwrap_err(), RasterError::EvenKernel(0));
    }

    #[test]
    fn constant_map_is_a_fixed_point_of_both_pools() {
        let map = DepthMap::from_values(5, 3, vec![2.5; 15]).unwrap();
        assert_eq!(minpool(&map, 3).unwrap(), map);
        assert_eq!(maxpool(&map, 3).unwrap(), map);
    }

    #[test]
    fn empty_map_stays_empty_under_both_pools() {
        let map = DepthMap::empty(6, 4);
        assert!(minpool(&map, 5).unwrap().values().iter().all(|v| *v == f64::INFINITY));
        assert!(maxpool(&map, 5).unwrap().values().iter().all(|v| *v == f64::INFINITY));
    }

    #[test]
    fn single_finite_pixel_spreads_under_minpool() {
        let mut map = DepthMap::empty(9, 9);
        map.set(4, 4, 1.5);
        let pooled = minpool(&map, 3).unwrap();
        for v in 0..9 {
            for u in 0..9 {
                let inside = (3..=5).contains(&u) && (3..=5).contains(&v);
                let expect = if inside { 1.5 } else { f64::INFINITY };
                assert_eq!(pooled.get(u, v), expect, "at ({u},{v})");
            }
        }
    }

    #[test]
    fn maxpool_ignores_empty_pixels() {
        let mut map = DepthMap::empty(5, 5);
        map.set(2, 2, 7.0);
        map.set(0, 0, 3.0);
        let pooled = maxpool(&map, 3).unwrap();
        // Window around (1,1) sees both finite values; empties do not mask them.
        assert_eq!(pooled.get(1, 1), 7.0);
        // Entirely empty window stays empty.
        assert_eq!(pooled.get(4, 4), f64::INFINITY);
    }

    #[test]
    fn separable_matches_naive_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..60 {
            let w = rng.random_range(1..20);
            let h = rng.random_range(1..20);
            let s = *[1usize, 3, 5, 7, 9].get(rng.random_range(0..5)).unwrap();
            let empty = [0.0, 0.3, 0.9, 1.0][rng.random_range(0..4)];
            let map = random_map(&mut rng, w, h, empty);
            let fast_min = minpool(&map, s).unwrap();
            let naive_min = naive_minpool(&map, s);
            assert!(
                fast_min
                    .values()
                    .iter()
                    .zip(naive_min.values())
                    .all(|(a, b)| a.to_bits() == b.to_bits()),
                "minpool mismatch case {case} ({w}x{h}, s={s})"
            );
            let fast_max = maxpool(&map, s).unwrap();
            let naive_max = naive_maxpool(&map, s);
            assert!(
                fast_max
                    .values()
                    .iter()
                    .zip(naive_max.values())
                    .all(|(a, b)| a.to_bits() == b.to_bits()),
                "maxpool mismatch case {case} ({w}x{h}, s={s})"
            );
        }
    }

    #[test]
    fn pools_bracket_the_input_on_finite_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = random_map(&mut rng, 16, 12, 0.4);
        let lo = minpool(&map, 5).unwrap();
        let hi = maxpool(&map, 5).unwrap();
        for (i, &v) in map.values().iter().enumerate() {
            if v.is_finite() {
                assert!(lo.values()[i] <= v && v <= hi.values()[i]);
            }
        }
    }

    #[test]
    fn rasterize_empty_cloud_gives_all_empty_map() {
        let out = rasterize_depth(&PointCloud::empty(), &Pose::identity(), &cam64());
        assert!(out.depth.values().iter().all(|v| *v == f64::INFINITY));
        assert!(out.hits.is_empty());
        assert_eq!(out.depth.occupancy(), 0.0);
    }

    #[test]
    fn rasterize_single_point_records_camera_depth() {
        let cloud = PointCloud::new(vec![Point3::new(0.1, -0.2, 2.0)]).unwrap();
        let cam = cam64();
        let out = rasterize_depth(&cloud, &Pose::identity(), &cam);
        let hit = out.hits[0].unwrap();
        assert_eq!(hit.depth, 2.0);
        assert_eq!(out.depth.get(hit.u as usize, hit.v as usize), 2.0);
    }

    #[test]
    fn rasterize_keeps_nearest_of_coincident_pixels() {
        let cloud = PointCloud::new(vec![
            Point3::new(0.0, 0.0, 3.0),
            Point3::new(0.0, 0.0, 2.0),
        ])
        .unwrap();
        let out = rasterize_depth(&cloud, &Pose::identity(), &cam64());
        let hit = out.hits[0].unwrap();
        assert_eq!(out.depth.get(hit.u as usize, hit.v as usize), 2.0);
    }

    #[test]
    fn ipr_empty_cloud() {
        let out = ipr(&PointCloud::empty(), &Pose::identity(), &cam64(), &IprConfig::default())
            .unwrap();
        assert!(out.kept.is_empty());
        assert_eq!(out.raster.depth.occupancy(), 0.0);
    }

    #[test]
    fn ipr_keeps_near_point_and_drops_far_coincident_point() {
        let cloud = PointCloud::new(vec![
            Point3::new(0.0, 0.0, 2.0),
            Point3::new(0.0, 0.0, 3.0),
            Point3::new(0.0, 0.0, 2.015), // within 1% of 2.0
        ])
        .unwrap();
        let out = ipr(&cloud, &Pose::identity(), &cam64(), &IprConfig::default()).unwrap();
        assert_eq!(out.kept, vec![0, 2]);
    }

    #[test]
    fn ipr_removes_wall_behind_occluder() {
        // Fine grid on a far wall plus a dense near square occluding the center.
        let cam = CameraModel::simple(32.0, 64, 64).unwrap();
        let mut pts = Vec::new();
        let mut far_center = Vec::new();
        let mut far_rim = Vec::new();
        for gy in 0..160 {
            for gx in 0..160 {
                let x = -1.9 + 3.8 * gx as f64 / 159.0;
                let y = -1.9 + 3.8 * gy as f64 / 159.0;
                // Occluder spans +-4.8 px; center is fully shadowed, the rim
                // (beyond 10.4 px) clears the shadow plus the kernel radius.
                if x.abs() < 0.5 && y.abs() < 0.5 {
                    far_center.push(pts.len());
                } else if x.abs() > 1.3 || y.abs() > 1.3 {
                    far_rim.push(pts.len());
                }
                pts.push(Point3::new(x, y, 4.0));
            }
        }
        let near_start = pts.len();
        for gy in 0..120 {
            for gx in 0..120 {
                let x = -0.15 + 0.3 * gx as f64 / 119.0;
                let y = -0.15 + 0.3 * gy as f64 / 119.0;
                pts.push(Point3::new(x, y, 1.0));
            }
        }
        let cloud = PointCloud::new(pts).unwrap();
        let out = ipr(&cloud, &Pose::identity(), &cam, &IprConfig::default()).unwrap();
        let kept: std::collections::HashSet<_> = out.kept.iter().copied().collect();
        let center_kept = far_center.iter().filter(|i| kept.contains(i)).count();
        assert_eq!(center_kept, 0, "wall points behind the occluder must be removed");
        let rim_kept = far_rim.iter().filter(|i| kept.contains(i)).count();
        assert!(
            rim_kept as f64 > 0.9 * far_rim.len() as f64,
            "unoccluded wall rim should survive: {rim_kept}/{}",
            far_rim.len()
        );
        for i in near_start..cloud.len() {
            assert!(kept.contains(&i), "occluder point {i} should survive");
        }
    }

    #[test]
    fn ipr_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut pts = Vec::new();
        for _ in 0..4000 {
            pts.push(Point3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..6.0),
            ));
        }
        let cloud = PointCloud::new(pts).unwrap();
        let cam = cam64();
        let cfg = IprConfig::default();
        let first = ipr(&cloud, &Pose::identity(), &cam, &cfg).unwrap();
        let survivors = cloud.select(&first.kept);
        let second = ipr(&survivors, &Pose::identity(), &cam, &cfg).unwrap();
        assert_eq!(
            second.kept,
            (0..survivors.len()).collect::<Vec<_>>(),
            "second pass must keep every survivor"
        );
    }

    #[test]
    fn ipr_with_unit_kernel_reduces_to_depth_tolerance_test() {
        // With s=1 the pooling equality is vacuously true at every occupied
        // pixel, so the filter degenerates to the per-point depth tolerance
        // against the nearest depth at the point's own pixel.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut pts = Vec::new();
        for _ in 0..2000 {
            pts.push(Point3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..6.0),
            ));
        }
        let cloud = PointCloud::new(pts).unwrap();
        let cam = cam64();
        let cfg = IprConfig { kernel: 1, ..IprConfig::default() };
        let out = ipr(&cloud, &Pose::identity(), &cam, &cfg).unwrap();
        let expected: Vec<usize> = out
            .raster
            .hits
            .iter()
            .enumerate()
            .filter_map(|(i, hit)| {
                let hit = hit.as_ref()?;
                let near = out.raster.depth.get(hit.u as usize, hit.v as usize);
                let tol = cfg.abs_tol.max(cfg.rel_tol * near);
                (hit.depth <= near + tol).then_some(i)
            })
            .collect();
        assert_eq!(out.kept, expected);
        assert!(!out.kept.is_empty());
    }

    #[test]
    fn depth_map_validation() {
        assert!(matches!(
            DepthMap::from_values(2, 2, vec![1.0; 3]),
            Err(RasterError::SizeMismatch { .. })
        ));
        assert!(matches!(
            DepthMap::from_values(1, 2, vec![1.0, -3.0]),
            Err(RasterError::NonPositiveDepth(_))
        ));
        assert!(DepthMap::from_values(1, 2, vec![1.0, f64::INFINITY]).is_ok());
    }
}
