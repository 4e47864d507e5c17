//! Rigid transforms, the pinhole camera model, and pose-error metrics.
//!
//! A [`Pose`] maps world coordinates into camera coordinates: `X_cam = R * X + t`.
//! Rotations are stored as plain 3x3 matrices; helpers restore orthonormality
//! after long composition chains via polar decomposition.

pub mod se3;

use nalgebra::{Matrix3, Point3, Vector2, Vector3};
use thiserror::Error;

/// Tolerance on `|R^T R - I|` and `|det R - 1|` accepted by validating constructors.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (deviation {deviation:.3e})")]
    NonOrthonormalRotation { deviation: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Rigid transform from world to camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Largest deviation of `r` from a proper rotation: entries of `R^T R - I` and `det R - 1`.
pub fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let mut dev: f64 = (r.determinant() - 1.0).abs();
    for v in gram.iter() {
        dev = dev.max(v.abs());
    }
    dev
}

impl Pose {
    /// Validates that `rotation` is a proper rotation within [`ROTATION_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if rotation.iter().any(|v| !v.is_finite()) || translation.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("pose"));
        }
        let deviation = rotation_deviation(&rotation);
        if deviation > ROTATION_TOL {
            return Err(GeometryError::NonOrthonormalRotation { deviation });
        }
        Ok(Self { rotation, translation })
    }

    /// Skips validation; for callers that construct rotations analytically.
    pub fn new_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Nearest proper rotation in Frobenius norm (polar decomposition via SVD),
    /// translation untouched. Use after long composition chains to stop drift.
    pub fn renormalized(&self) -> Pose {
        let svd = self.rotation.svd(true, true);
        let u = svd.u.expect("svd of 3x3 always yields u");
        let v_t = svd.v_t.expect("svd of 3x3 always yields v_t");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Pose { rotation: r, translation: self.translation }
    }
}

/// Translation error between two poses: Euclidean distance of the translation parts, meters.
pub fn rte(a: &Pose, b: &Pose) -> f64 {
    (a.translation - b.translation).norm()
}

/// Rotation error between two poses in degrees: angle of `R_a^T R_b`.
///
/// Computed as `atan2(|antisymmetric part| / 2, (trace - 1) / 2)`, i.e.
/// `atan2(sin, cos)` of the angle. Unlike the plain `arccos` form this stays
/// accurate near zero, where `arccos` of a trace one ulp under 3 would already
/// report ~1.2e-6 degrees.
pub fn rre_degrees(a: &Pose, b: &Pose) -> f64 {
    let rel = a.rotation.transpose() * b.rotation;
    let s = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    )
    .norm()
        * 0.5;
    let c = (rel.trace() - 1.0) * 0.5;
    s.atan2(c).to_degrees()
}

/// Result of projecting a camera-frame point through the intrinsics.
///
/// `pixel` is in continuous pixel coordinates where integer pixel `(u, v)`
/// covers `[u, u+1) x [v, v+1)` and has center `(u + 0.5, v + 0.5)`.
/// `valid` is false when the depth is non-positive or the pixel falls outside
/// `[0, W) x [0, H)`; `pixel` is still the raw quotient in that case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub depth: f64,
    pub valid: bool,
}

/// Pinhole camera: upper-triangular intrinsics plus image bounds in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    intrinsics: Matrix3<f64>,
    width: u32,
    height: u32,
}

impl CameraModel {
    pub fn new(intrinsics: Matrix3<f64>, width: u32, height: u32) -> Result<Self, GeometryError> {
        if intrinsics.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("intrinsics"));
        }
        let lower = [intrinsics[(1, 0)], intrinsics[(2, 0)], intrinsics[(2, 1)]];
        if lower.iter().any(|v| *v != 0.0) || intrinsics[(2, 2)] != 1.0 {
            return Err(GeometryError::InvalidIntrinsics(
                "expected upper-triangular matrix with 1 at (2,2)".into(),
            ));
        }
        if intrinsics[(0, 0)] <= 0.0 || intrinsics[(1, 1)] <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics("image bounds must be positive".into()));
        }
        let (cx, cy) = (intrinsics[(0, 2)], intrinsics[(1, 2)]);
        if cx < 0.0 || cx >= width as f64 || cy < 0.0 || cy >= height as f64 {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point must lie inside image bounds".into(),
            ));
        }
        Ok(Self { intrinsics, width, height })
    }

    /// Square-pixel pinhole with the principal point at the image center.
    pub fn simple(focal: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Matrix3::new(
            focal,
            0.0,
            width as f64 * 0.5,
            0.0,
            focal,
            height as f64 * 0.5,
            0.0,
            0.0,
            1.0,
        );
        Self::new(k, width, height)
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn fx(&self) -> f64 {
        self.intrinsics[(0, 0)]
    }

    pub fn fy(&self) -> f64 {
        self.intrinsics[(1, 1)]
    }

    pub fn skew(&self) -> f64 {
        self.intrinsics[(0, 1)]
    }

    pub fn cx(&self) -> f64 {
        self.intrinsics[(0, 2)]
    }

    pub fn cy(&self) -> f64 {
        self.intrinsics[(1, 2)]
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.x < self.width as f64
            && pixel.y >= 0.0
            && pixel.y < self.height as f64
    }

    /// Projects a camera-frame point. See [`Projection`] for the validity rule.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Projection {
        let z = p_cam.z;
        let u = (self.fx() * p_cam.x + self.skew() * p_cam.y) / z + self.cx();
        let v = self.fy() * p_cam.y / z + self.cy();
        let pixel = Vector2::new(u, v);
        Projection { pixel, depth: z, valid: z > 0.0 && self.contains(&pixel) }
    }

    /// Projects a world point through `pose` (world-to-camera).
    pub fn project_world(&self, pose: &Pose, p_world: &Vector3<f64>) -> Projection {
        self.project(&pose.transform_point(p_world))
    }
}

/// Collection of world-frame 3D points. All coordinates are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self, GeometryError> {
        if points.iter().any(|p| !p.coords.iter().all(|v| v.is_finite())) {
            return Err(GeometryError::NonFinite("point cloud"));
        }
        Ok(Self { points })
    }

    pub fn empty() -> Self {
        Self { points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = &Point3<f64>> {
        self.points.iter()
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud { points: indices.iter().map(|&i| self.points[i]).collect() }
    }
}

impl FromIterator<Point3<f64>> for PointCloud {
    fn from_iter<T: IntoIterator<Item = Point3<f64>>>(iter: T) -> Self {
        Self { points: iter.into_iter().collect() }
    }
}
