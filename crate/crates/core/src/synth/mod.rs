//! Seeded synthetic scenes with exact ground truth.
//!
//! Every generator takes an explicit seed and regenerates bit-identical
//! output, so tests can reference scenes by seed instead of shipping data.

pub mod oracles;

use crate::feature::PatchGrid;
use crate::geometry::{CameraModel, PointCloud, Pose};
use crate::matcher::Correspondence;
use nalgebra::{Matrix3, Point3, Vector2, Vector3};
use oracles::{oracle_visibility, VisibilityOracleConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniformly distributed random rotation (quaternion subgroup algorithm).
pub fn uniform_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let u1: f64 = rng.random_range(0.0..1.0);
    let u2: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let u3: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = nalgebra::Quaternion::new(b * u3.cos(), a * u2.sin(), a * u2.cos(), b * u3.sin());
    nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

/// World-to-camera pose looking from `eye` toward `target`, with camera +x
/// right, +y down, +z forward and world +z up.
pub fn look_at_pose(eye: &Point3<f64>, target: &Point3<f64>) -> Pose {
    let forward = (target - eye).normalize();
    let up = Vector3::new(0.0, 0.0, 1.0);
    let mut right = forward.cross(&up);
    if right.norm() < 1e-9 {
        // Looking straight up or down; any horizontal right axis works.
        right = Vector3::new(1.0, 0.0, 0.0);
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let translation = -rotation * eye.coords;
    Pose::new(rotation, translation).expect("constructed axes are orthonormal")
}

/// A generated map: one cloud, one camera, and the poses it was built around.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cloud: PointCloud,
    pub camera: CameraModel,
    pub poses: Vec<Pose>,
}

// ---- frontal occlusion scenes (visibility-filter validation) ----

/// Layered frontal-wall scene: a backdrop filling the frame, solid occluder
/// rectangles in front of it, and a sparse "parasitic" layer floating just
/// behind the backdrop surface so that keep/remove decisions near the depth
/// tolerance actually occur. Walls place one point at every covered pixel
/// center (no raster holes) plus uniform extras; each wall gets a small
/// random depth tilt.
#[derive(Debug, Clone)]
pub struct OcclusionSceneConfig {
    pub back_depth: (f64, f64),
    pub occluder_count: (usize, usize),
    /// Occluder depth as a fraction of the backdrop depth.
    pub occluder_depth_frac: (f64, f64),
    /// Occluder edge length as a fraction of the image's smaller dimension.
    pub occluder_size_frac: (f64, f64),
    /// Extra random points per pixel on top of the per-pixel grid.
    pub extra_density: f64,
    /// Depth slope magnitude per pixel, small relative to the keep tolerance.
    pub tilt_per_px: f64,
    /// Fraction of backdrop pixels that also get a parasitic point.
    pub parasitic_frac: f64,
    /// Parasitic depth offset, in multiples of the keep tolerance at the
    /// local depth (`max(0.001, 0.01 z)`); sampled uniformly from this range.
    pub parasitic_tol_range: (f64, f64),
}

impl Default for OcclusionSceneConfig {
    fn default() -> Self {
        Self {
            back_depth: (3.0, 6.0),
            occluder_count: (1, 4),
            occluder_depth_frac: (0.25, 0.7),
            occluder_size_frac: (0.15, 0.4),
            extra_density: 1.0,
            tilt_per_px: 2e-4,
            parasitic_frac: 0.02,
            parasitic_tol_range: (0.0, 3.0),
        }
    }
}

fn keep_tolerance(depth: f64) -> f64 {
    (0.01 * depth).max(1e-3)
}

/// Camera-frame point projecting to pixel `(u, v)` at `depth`.
fn backproject(camera: &CameraModel, u: f64, v: f64, depth: f64) -> Point3<f64> {
    Point3::new(
        (u - camera.cx()) * depth / camera.fx(),
        (v - camera.cy()) * depth / camera.fy(),
        depth,
    )
}

struct WallSpec {
    u0: u32,
    v0: u32,
    u1: u32,
    v1: u32,
    depth: f64,
    tilt_u: f64,
    tilt_v: f64,
}

impl WallSpec {
    fn depth_at(&self, u: f64, v: f64) -> f64 {
        let cu = (self.u0 + self.u1) as f64 * 0.5;
        let cv = (self.v0 + self.v1) as f64 * 0.5;
        self.depth + self.tilt_u * (u - cu) + self.tilt_v * (v - cv)
    }

    fn sample(&self, camera: &CameraModel, rng: &mut impl Rng, extra_density: f64) -> Vec<Point3<f64>> {
        let mut pts = Vec::new();
        for v in self.v0..self.v1 {
            for u in self.u0..self.u1 {
                let (uc, vc) = (u as f64 + 0.5, v as f64 + 0.5);
                pts.push(backproject(camera, uc, vc, self.depth_at(uc, vc)));
            }
        }
        let area = ((self.u1 - self.u0) * (self.v1 - self.v0)) as f64;
        for _ in 0..(area * extra_density).round() as usize {
            let u = rng.random_range(self.u0 as f64..self.u1 as f64);
            let v = rng.random_range(self.v0 as f64..self.v1 as f64);
            pts.push(backproject(camera, u, v, self.depth_at(u, v)));
        }
        pts
    }
}

/// Generates the cloud in camera coordinates: pair it with `Pose::identity()`.
pub fn occlusion_scene(
    camera: &CameraModel,
    cfg: &OcclusionSceneConfig,
    seed: u64,
) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (camera.width(), camera.height());
    let tilt = |rng: &mut ChaCha8Rng| {
        let m = cfg.tilt_per_px;
        rng.random_range(-m..m)
    };
    let back = WallSpec {
        u0: 0,
        v0: 0,
        u1: w,
        v1: h,
        depth: rng.random_range(cfg.back_depth.0..cfg.back_depth.1),
        tilt_u: tilt(&mut rng),
        tilt_v: tilt(&mut rng),
    };
    let mut points = back.sample(camera, &mut rng, cfg.extra_density);

    let occluders = rng.random_range(cfg.occluder_count.0..=cfg.occluder_count.1);
    let min_dim = w.min(h) as f64;
    for _ in 0..occluders {
        let size = rng.random_range(cfg.occluder_size_frac.0..cfg.occluder_size_frac.1) * min_dim;
        let su = size.round().max(2.0) as u32;
        let sv = su;
        let u0 = rng.random_range(0..=(w - su));
        let v0 = rng.random_range(0..=(h - sv));
        let wall = WallSpec {
            u0,
            v0,
            u1: u0 + su,
            v1: v0 + sv,
            depth: back.depth * rng.random_range(cfg.occluder_depth_frac.0..cfg.occluder_depth_frac.1),
            tilt_u: tilt(&mut rng),
            tilt_v: tilt(&mut rng),
        };
        points.extend(wall.sample(camera, &mut rng, cfg.extra_density));
    }

    // Parasitic layer: points floating just behind the backdrop surface, at
    // offsets spanning the keep tolerance.
    let parasites = ((w * h) as f64 * cfg.parasitic_frac).round() as usize;
    for _ in 0..parasites {
        let u = rng.random_range(0.0..w as f64);
        let v = rng.random_range(0.0..h as f64);
        let base = back.depth_at(u, v);
        let mult = rng.random_range(cfg.parasitic_tol_range.0..cfg.parasitic_tol_range.1);
        points.push(backproject(camera, u, v, base + mult * keep_tolerance(base)));
    }
    PointCloud::new(points).expect("all generated coordinates are finite")
}

// ---- visibility agreement scenes ----

/// Scene tailored for comparing the pooling-based visibility filter against
/// the disk-footprint z-buffer oracle point by point. A constant-depth wall
/// covers every pixel, so both methods share the same per-pixel reference
/// depth and the pooling mask is an exact identity; the only disagreements
/// possible come from the "parasitic" layer floating inside the two methods'
/// (deliberately different) depth-tolerance bands.
#[derive(Debug, Clone)]
pub struct AgreementSceneConfig {
    pub wall_depth: (f64, f64),
    /// Extra same-depth samples per pixel on top of the per-pixel grid.
    pub extra_density: f64,
    /// Fraction of pixels getting a point floating just behind the wall.
    pub parasitic_frac: f64,
    /// Parasitic offsets span `[0, mult * max(0.001, 0.01 z)]`.
    pub parasitic_tol_mult: f64,
    /// Fraction of pixels getting a far point well behind the wall.
    pub deep_frac: f64,
    pub deep_offset: (f64, f64),
    /// Fraction of points placed behind the camera (invisible for both).
    pub behind_frac: f64,
}

impl Default for AgreementSceneConfig {
    fn default() -> Self {
        Self {
            wall_depth: (2.0, 8.0),
            extra_density: 0.5,
            parasitic_frac: 0.02,
            parasitic_tol_mult: 3.0,
            deep_frac: 0.01,
            deep_offset: (0.5, 3.0),
            behind_frac: 0.005,
        }
    }
}

/// Cloud in camera coordinates; pair with `Pose::identity()`.
pub fn agreement_scene(
    camera: &CameraModel,
    cfg: &AgreementSceneConfig,
    seed: u64,
) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (camera.width(), camera.height());
    let z = rng.random_range(cfg.wall_depth.0..cfg.wall_depth.1);
    let mut points = Vec::new();
    for v in 0..h {
        for u in 0..w {
            points.push(backproject(camera, u as f64 + 0.5, v as f64 + 0.5, z));
        }
    }
    let pixels = (w * h) as f64;
    for _ in 0..(pixels * cfg.extra_density).round() as usize {
        let u = rng.random_range(0.0..w as f64);
        let v = rng.random_range(0.0..h as f64);
        points.push(backproject(camera, u, v, z));
    }
    for _ in 0..(pixels * cfg.parasitic_frac).round() as usize {
        let u = rng.random_range(0.0..w as f64);
        let v = rng.random_range(0.0..h as f64);
        let offset = rng.random_range(0.0..cfg.parasitic_tol_mult) * keep_tolerance(z);
        points.push(backproject(camera, u, v, z + offset));
    }
    for _ in 0..(pixels * cfg.deep_frac).round() as usize {
        let u = rng.random_range(0.0..w as f64);
        let v = rng.random_range(0.0..h as f64);
        let offset = rng.random_range(cfg.deep_offset.0..cfg.deep_offset.1);
        points.push(backproject(camera, u, v, z + offset));
    }
    for _ in 0..(pixels * cfg.behind_frac).round() as usize {
        points.push(Point3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            -rng.random_range(0.5..2.0),
        ));
    }
    PointCloud::new(points).expect("all generated coordinates are finite")
}

// ---- indoor room scenes ----

#[derive(Debug, Clone)]
pub struct RoomSceneConfig {
    /// Half extents of the box interior (world +z up).
    pub half_extents: Vector3<f64>,
    /// Surface sampling density, points per square meter, on walls and clutter.
    pub surface_density: f64,
    pub clutter_count: usize,
    /// Clutter box edge length range in meters.
    pub clutter_size: (f64, f64),
    pub pose_count: usize,
    /// Keep-out margin between camera positions and the walls.
    pub wall_margin: f64,
    /// Resample an orientation until at least this many pixels are covered.
    pub min_covered_pixels: usize,
}

impl Default for RoomSceneConfig {
    fn default() -> Self {
        Self {
            half_extents: Vector3::new(6.0, 6.0, 2.5),
            surface_density: 60.0,
            clutter_count: 8,
            clutter_size: (0.4, 1.4),
            pose_count: 64,
            wall_margin: 1.2,
            min_covered_pixels: 1500,
        }
    }
}

/// Samples points on all six faces of an axis-aligned box.
fn sample_box_surface(
    rng: &mut impl Rng,
    center: &Point3<f64>,
    half: &Vector3<f64>,
    density: f64,
    out: &mut Vec<Point3<f64>>,
) {
    for axis in 0..3 {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let area = 4.0 * half[a] * half[b];
        let count = (area * density).round() as usize;
        for side in [-1.0, 1.0] {
            for _ in 0..count {
                let mut p = center.coords;
                p[axis] += side * half[axis];
                p[a] += rng.random_range(-half[a]..half[a]);
                p[b] += rng.random_range(-half[b]..half[b]);
                out.push(Point3::from(p));
            }
        }
    }
}

fn covered_pixels(cloud: &PointCloud, pose: &Pose, camera: &CameraModel) -> usize {
    let mut occupied = vec![false; (camera.width() * camera.height()) as usize];
    let mut count = 0usize;
    for p in cloud.iter() {
        let proj = camera.project_world(pose, &p.coords);
        if !proj.valid {
            continue;
        }
        let idx = proj.pixel.y.floor() as usize * camera.width() as usize
            + proj.pixel.x.floor() as usize;
        if !occupied[idx] {
            occupied[idx] = true;
            count += 1;
        }
    }
    count
}

/// Box room with cluttered interior and seeded camera poses. Orientations
/// are uniform random, re-drawn (deterministically) until the view covers
/// enough pixels to be usable.
pub fn room_scene(camera: &CameraModel, cfg: &RoomSceneConfig, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    sample_box_surface(&mut rng, &Point3::origin(), &cfg.half_extents, cfg.surface_density, &mut points);
    for _ in 0..cfg.clutter_count {
        let edge = rng.random_range(cfg.clutter_size.0..cfg.clutter_size.1);
        let half = Vector3::new(edge, edge, edge) * 0.5;
        let margin = cfg.half_extents - half * 1.5;
        let center = Point3::new(
            rng.random_range(-margin.x..margin.x),
            rng.random_range(-margin.y..margin.y),
            rng.random_range(-margin.z..margin.z),
        );
        sample_box_surface(&mut rng, &center, &half, cfg.surface_density, &mut points);
    }
    let cloud = PointCloud::new(points).expect("finite room geometry");

    let inner = cfg.half_extents.map(|h| h - cfg.wall_margin);
    let mut poses = Vec::with_capacity(cfg.pose_count);
    while poses.len() < cfg.pose_count {
        let eye = Point3::new(
            rng.random_range(-inner.x..inner.x),
            rng.random_range(-inner.y..inner.y),
            rng.random_range(-inner.z..inner.z),
        );
        let rotation = uniform_rotation(&mut rng);
        let pose = Pose::new(rotation, -rotation * eye.coords).expect("rotation is orthonormal");
        if covered_pixels(&cloud, &pose, camera) >= cfg.min_covered_pixels {
            poses.push(pose);
        }
    }
    Scene { cloud, camera: *camera, poses }
}

// ---- outdoor road scenes ----

#[derive(Debug, Clone)]
pub struct RoadSceneConfig {
    pub length: f64,
    /// Facade distance from the road centerline.
    pub half_width: f64,
    pub facade_height: f64,
    pub surface_density: f64,
    /// Spacing between consecutive camera poses along the road.
    pub pose_spacing: f64,
    pub camera_height: f64,
    /// Uniform yaw jitter applied to the forward view direction, radians.
    pub yaw_jitter: f64,
}

impl Default for RoadSceneConfig {
    fn default() -> Self {
        Self {
            length: 120.0,
            half_width: 8.0,
            facade_height: 12.0,
            surface_density: 6.0,
            pose_spacing: 2.0,
            camera_height: 1.6,
            yaw_jitter: 0.15,
        }
    }
}

/// Straight road along +x: ground strip, two facades, poses every
/// `pose_spacing` meters looking roughly down the road.
pub fn road_scene(camera: &CameraModel, cfg: &RoadSceneConfig, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let ground_count = (cfg.length * 2.0 * cfg.half_width * cfg.surface_density).round() as usize;
    for _ in 0..ground_count {
        points.push(Point3::new(
            rng.random_range(0.0..cfg.length),
            rng.random_range(-cfg.half_width..cfg.half_width),
            0.0,
        ));
    }
    let facade_count = (cfg.length * cfg.facade_height * cfg.surface_density).round() as usize;
    for side in [-1.0, 1.0] {
        for _ in 0..facade_count {
            points.push(Point3::new(
                rng.random_range(0.0..cfg.length),
                side * cfg.half_width,
                rng.random_range(0.0..cfg.facade_height),
            ));
        }
    }
    let cloud = PointCloud::new(points).expect("finite road geometry");

    let mut poses = Vec::new();
    let mut x = 0.0;
    while x + cfg.pose_spacing < cfg.length {
        let eye = Point3::new(x, 0.0, cfg.camera_height);
        let yaw = rng.random_range(-cfg.yaw_jitter..cfg.yaw_jitter);
        let target = Point3::new(x + 10.0 * yaw.cos(), 10.0 * yaw.sin(), cfg.camera_height);
        poses.push(look_at_pose(&eye, &target));
        x += cfg.pose_spacing;
    }
    Scene { cloud, camera: *camera, poses }
}

// ---- ground truth extraction ----

/// Exact correspondences for the points visible from `pose`: continuous
/// projections, unit weights.
pub fn gt_correspondences(
    cloud: &PointCloud,
    pose: &Pose,
    camera: &CameraModel,
    vis: &VisibilityOracleConfig,
) -> Vec<Correspondence> {
    let visible = oracle_visibility(cloud, pose, camera, vis);
    let mut out = Vec::new();
    for (i, p) in cloud.iter().enumerate() {
        if !visible[i] {
            continue;
        }
        let proj = camera.project_world(pose, &p.coords);
        out.push(Correspondence {
            point_index: i,
            world: *p,
            pixel: proj.pixel,
            weight: Vector2::new(1.0, 1.0),
            score: 1.0,
        });
    }
    out
}

/// Ground-truth patch class per point: the patch its projection lands in, or
/// 0 when it is not visible from `pose`.
pub fn gt_classes(
    cloud: &PointCloud,
    pose: &Pose,
    camera: &CameraModel,
    grid: &PatchGrid,
    vis: &VisibilityOracleConfig,
) -> Vec<u32> {
    let visible = oracle_visibility(cloud, pose, camera, vis);
    cloud
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if !visible[i] {
                return 0;
            }
            let proj = camera.project_world(pose, &p.coords);
            if proj.valid {
                grid.patch_of(&proj.pixel)
            } else {
                0
            }
        })
        .collect()
}

// ---- direct pose-estimation problems ----

/// Random pose plus `n` exact correspondences built by back-projecting
/// uniform pixels at uniform depths, so every point is strictly in view.
pub fn random_pnp_problem(
    camera: &CameraModel,
    n: usize,
    depth_range: (f64, f64),
    seed: u64,
) -> (Pose, Vec<Correspondence>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotation = uniform_rotation(&mut rng);
    let translation = Vector3::new(
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
    );
    let pose = Pose::new(rotation, translation).expect("rotation is orthonormal");
    let inv = pose.inverse();
    let corrs = (0..n)
        .map(|i| {
            let u = rng.random_range(0.0..camera.width() as f64);
            let v = rng.random_range(0.0..camera.height() as f64);
            let depth = rng.random_range(depth_range.0..depth_range.1);
            let world = Point3::from(inv.transform_point(&backproject(camera, u, v, depth).coords));
            Correspondence {
                point_index: i,
                world,
                pixel: Vector2::new(u, v),
                weight: Vector2::new(1.0, 1.0),
                score: 1.0,
            }
        })
        .collect();
    (pose, corrs)
}

/// Adds pixel noise and replaces a fraction of matches with uniform random
/// pixels (gross outliers). The inlier/outlier split is returned alongside.
pub fn corrupt_correspondences(
    corrs: &[Correspondence],
    camera: &CameraModel,
    noise_px: f64,
    outlier_frac: f64,
    seed: u64,
) -> (Vec<Correspondence>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outliers = ((corrs.len() as f64) * outlier_frac).round() as usize;
    let flagged = rand::seq::index::sample(&mut rng, corrs.len(), outliers).into_vec();
    let mut is_outlier = vec![false; corrs.len()];
    for i in flagged {
        is_outlier[i] = true;
    }
    let noisy = corrs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut c = c.clone();
            if is_outlier[i] {
                c.pixel = Vector2::new(
                    rng.random_range(0.0..camera.width() as f64),
                    rng.random_range(0.0..camera.height() as f64),
                );
            } else if noise_px > 0.0 {
                use rand_distr::{Distribution, Normal};
                let normal = Normal::new(0.0, noise_px).expect("positive sigma");
                c.pixel.x += normal.sample(&mut rng);
                c.pixel.y += normal.sample(&mut rng);
            }
            c
        })
        .collect();
    (noisy, is_outlier)
}

/// Applies a small right-side jitter to a reference pose: the translation
/// vector moves by at most `max_shift` and the rotation by at most
/// `max_angle_rad`, so the translation distance to the reference is exactly
/// the sampled shift.
pub fn jitter_pose(pose: &Pose, max_shift: f64, max_angle_rad: f64, rng: &mut impl Rng) -> Pose {
    let dir = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let dir = if dir.norm() < 1e-9 { Vector3::x() } else { dir.normalize() };
    let shift = dir * rng.random_range(0.0..max_shift);
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let axis = if axis.norm() < 1e-9 { Vector3::z() } else { axis.normalize() };
    let angle = rng.random_range(0.0..max_angle_rad);
    let delta = crate::geometry::se3::exp_so3(&(axis * angle));
    Pose::new(delta * pose.rotation(), pose.translation() + shift)
        .expect("perturbed rotation stays orthonormal")
}
