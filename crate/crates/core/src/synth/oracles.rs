//! Brute-force reference implementations used to verify the fast paths.
//!
//! Everything here trades speed for obviousness: naive 2D pooling windows,
//! a full-resolution z-buffer with disk footprints for visibility, and an
//! exhaustive frustum filter that projects through the homogeneous route.
//! None of it shares code with the implementations it checks.

use crate::geometry::{CameraModel, PointCloud, Pose};
use crate::raster::DepthMap;

/// Minimum over the full 2D window with clamp-to-edge padding. Reference for
/// the separable implementation.
pub fn naive_minpool(map: &DepthMap, kernel: usize) -> DepthMap {
    assert!(kernel % 2 == 1, "kernel must be odd");
    let r = kernel / 2;
    let (w, h) = (map.width(), map.height());
    let mut out = DepthMap::empty(w, h);
    for v in 0..h {
        for u in 0..w {
            let mut best = f64::INFINITY;
            for dv in v.saturating_sub(r)..=(v + r).min(h - 1) {
                for du in u.saturating_sub(r)..=(u + r).min(w - 1) {
                    let val = map.get(du, dv);
                    if val < best {
                        best = val;
                    }
                }
            }
            out.set(u, v, best);
        }
    }
    out
}

/// Maximum over the full 2D window, skipping `+inf` entries; `+inf` only when
/// the whole window is empty. Reference for the separable implementation.
pub fn naive_maxpool(map: &DepthMap, kernel: usize) -> DepthMap {
    assert!(kernel % 2 == 1, "kernel must be odd");
    let r = kernel / 2;
    let (w, h) = (map.width(), map.height());
    let mut out = DepthMap::empty(w, h);
    for v in 0..h {
        for u in 0..w {
            let mut best = f64::NEG_INFINITY;
            for dv in v.saturating_sub(r)..=(v + r).min(h - 1) {
                for du in u.saturating_sub(r)..=(u + r).min(w - 1) {
                    let val = map.get(du, dv);
                    if val.is_finite() && val > best {
                        best = val;
                    }
                }
            }
            out.set(u, v, if best == f64::NEG_INFINITY { f64::INFINITY } else { best });
        }
    }
    out
}

/// Footprint and depth tolerance for the brute-force visibility oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityOracleConfig {
    /// Disk radius in pixels each point covers in the z-buffer.
    pub footprint_radius_px: f64,
    /// Depth slack treating nearly coplanar samples as the same surface, meters.
    pub surface_eps: f64,
}

impl Default for VisibilityOracleConfig {
    fn default() -> Self {
        // Radius matches half of the default 9-pixel pooling kernel.
        Self { footprint_radius_px: 4.5, surface_eps: 1e-2 }
    }
}

/// Full-resolution z-buffer visibility: each point splats a disk of constant
/// depth; a point is visible iff nothing covers its own pixel more than
/// `surface_eps` closer. Points that do not project into the frame are
/// invisible. Returns one flag per input point.
pub fn oracle_visibility(
    cloud: &PointCloud,
    pose: &Pose,
    camera: &CameraModel,
    config: &VisibilityOracleConfig,
) -> Vec<bool> {
    let (w, h) = (camera.width() as usize, camera.height() as usize);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut projections = Vec::with_capacity(cloud.len());
    let r = config.footprint_radius_px;
    let r_sq = r * r;
    for p in cloud.iter() {
        let proj = camera.project_world(pose, &p.coords);
        if !proj.valid {
            projections.push(None);
            continue;
        }
        projections.push(Some(proj));
        let (cu, cv) = (proj.pixel.x, proj.pixel.y);
        // Integer pixels whose centers fall inside the disk.
        let u_lo = ((cu - r - 0.5).ceil().max(0.0)) as usize;
        let u_hi = ((cu + r - 0.5).floor()).min(w as f64 - 1.0) as isize;
        let v_lo = ((cv - r - 0.5).ceil().max(0.0)) as usize;
        let v_hi = ((cv + r - 0.5).floor()).min(h as f64 - 1.0) as isize;
        if u_hi < 0 || v_hi < 0 {
            continue;
        }
        for v in v_lo..=(v_hi as usize) {
            let dy = (v as f64 + 0.5) - cv;
            for u in u_lo..=(u_hi as usize) {
                let dx = (u as f64 + 0.5) - cu;
                if dx * dx + dy * dy <= r_sq {
                    let cell = &mut zbuf[v * w + u];
                    if proj.depth < *cell {
                        *cell = proj.depth;
                    }
                }
            }
        }
    }
    projections
        .iter()
        .map(|proj| {
            let Some(proj) = proj else { return false };
            let u = proj.pixel.x.floor() as usize;
            let v = proj.pixel.y.floor() as usize;
            proj.depth <= zbuf[v * w + u] + config.surface_eps
        })
        .collect()
}

/// Depth tolerance used by the point-level z-buffer test below; mirrors the
/// visibility filter's keep rule so both sides draw the line identically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthToleranceConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for DepthToleranceConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-2, abs_tol: 1e-3 }
    }
}

/// Point-level z-buffer visibility with no footprint and no pooling: rasters
/// every point to its own pixel, keeps the per-pixel minimum depth, and marks
/// a point visible iff its depth is within tolerance of that minimum. This is
/// the straightforward per-pixel depth test the windowed filter must agree
/// with on densely sampled scenes.
pub fn pixel_zbuffer_visibility(
    cloud: &PointCloud,
    pose: &Pose,
    camera: &CameraModel,
    config: &DepthToleranceConfig,
) -> Vec<bool> {
    let (w, h) = (camera.width() as usize, camera.height() as usize);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut projections = Vec::with_capacity(cloud.len());
    for p in cloud.iter() {
        let proj = camera.project_world(pose, &p.coords);
        if !proj.valid {
            projections.push(None);
            continue;
        }
        let idx = proj.pixel.y.floor() as usize * w + proj.pixel.x.floor() as usize;
        if proj.depth < zbuf[idx] {
            zbuf[idx] = proj.depth;
        }
        projections.push(Some((idx, proj.depth)));
    }
    projections
        .iter()
        .map(|entry| {
            let Some((idx, depth)) = entry else { return false };
            let nearest = zbuf[*idx];
            depth <= &(nearest + (config.rel_tol * nearest).max(config.abs_tol))
        })
        .collect()
}

/// Exhaustive frustum membership: indices of points with positive camera
/// depth at most `radius` whose homogeneous projection lands inside the frame.
/// Reference for the submap cut.
pub fn frustum_filter_oracle(
    cloud: &PointCloud,
    pose: &Pose,
    camera: &CameraModel,
    radius: f64,
) -> Vec<usize> {
    let k = camera.intrinsics();
    let mut kept = Vec::new();
    for (i, p) in cloud.iter().enumerate() {
        let cam_pt = pose.rotation() * p.coords + pose.translation();
        if !(cam_pt.z > 0.0 && cam_pt.z <= radius) {
            continue;
        }
        let hom = k * cam_pt;
        let u = hom.x / hom.z;
        let v = hom.y / hom.z;
        if u >= 0.0 && u < camera.width() as f64 && v >= 0.0 && v < camera.height() as f64 {
            kept.push(i);
        }
    }
    kept
}
