//! Weighted perspective-n-point pose estimation.
//!
//! Given 2D-3D correspondences with per-axis confidence weights, this module
//! estimates the world-to-camera pose in three stages: a closed-form
//! initialization ([`solve_epnp`]), an optional robust wrapper that rejects
//! outliers ([`solve_ransac`]), and damped Gauss-Newton refinement of the
//! weighted reprojection cost ([`refine_weighted`]). A sampling-based
//! divergence between the ground-truth pose and the soft pose distribution
//! induced by the weights ([`kl_loss`]) scores weight quality, and
//! [`fit_weights`] descends that score on log-weights.
//!
//! Poses map world points into the camera frame. The residual for pair `i` is
//! `f_i = w_i .* (project(R X_i + t) - x_i)` in pixels; the total cost is
//! `0.5 * sum ||f_i||^2`. Pose perturbations are left-multiplied twists
//! `exp(xi) * pose` with translation-first layout `xi = (v, w)`, matching
//! [`crate::geometry::se3`].

mod epnp;
mod kl;
mod lm;
mod p3p;
mod ransac;

pub use epnp::solve_epnp;
pub use kl::{fit_weights, kl_loss, FitConfig, FitTrace, KlConfig, KlEstimate};
pub use lm::{refine_weighted, RefineConfig, RefineResult};
pub use p3p::solve_p3p;
pub use ransac::{solve_ransac, RansacConfig, RansacResult};

use nalgebra::{Matrix2x6, Matrix3x6, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{se3, CameraModel, Pose};
use crate::matcher::Correspondence;

/// Camera-frame depths at or below this are treated as degenerate: the
/// projection Jacobian divides by depth, so residuals are undefined there.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PnpError {
    /// A correspondence with nonzero weight projected to depth <= [`MIN_DEPTH`].
    #[error("correspondence {index} has camera-frame depth {depth:.3e} <= {MIN_DEPTH:.0e}")]
    DegenerateDepth { index: usize, depth: f64 },
    /// The 3D points span too little of space for the solver (e.g. collinear).
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),
    /// Fewer correspondences than the solver needs.
    #[error("solver needs at least {needed} correspondences, got {got}")]
    NotEnoughPairs { needed: usize, got: usize },
    /// No RANSAC hypothesis reached the minimum consensus size.
    #[error("no consensus: best hypothesis had {best} inliers, need at least {needed}")]
    NoConsensus { best: usize, needed: usize },
}

/// Residual of one weighted correspondence at `pose`: `w .* (projection - observed)`.
///
/// Zero-weight pairs (both components exactly `0.0`) return a zero residual
/// without touching the projection, so they cannot raise
/// [`PnpError::DegenerateDepth`] and leave the optimization bitwise unchanged.
pub fn residual(
    corr: &Correspondence,
    pose: &Pose,
    camera: &CameraModel,
) -> Result<Vector2<f64>, PnpError> {
    if corr.weight.x == 0.0 && corr.weight.y == 0.0 {
        return Ok(Vector2::zeros());
    }
    let y = pose.transform_point(&corr.world.coords);
    if y.z <= MIN_DEPTH {
        return Err(PnpError::DegenerateDepth { index: corr.point_index, depth: y.z });
    }
    let proj = camera.project(&y);
    Ok(Vector2::new(
        corr.weight.x * (proj.pixel.x - corr.pixel.x),
        corr.weight.y * (proj.pixel.y - corr.pixel.y),
    ))
}

/// Residual and its 2x6 Jacobian with respect to a left-multiplied twist.
///
/// With `y = R X + t` and intrinsics `(fx, fy, s, cx, cy)`:
///
/// ```text
/// d(u,v)/dy = [ fx/z   s/z   -(fx y_x + s y_y)/z^2 ]
///             [ 0      fy/z  -fy y_y / z^2         ]
/// dy/dxi    = [ I_3 | -hat(y) ]
/// J         = diag(w) * d(u,v)/dy * dy/dxi
/// ```
pub fn residual_jacobian(
    corr: &Correspondence,
    pose: &Pose,
    camera: &CameraModel,
) -> Result<(Vector2<f64>, Matrix2x6<f64>), PnpError> {
    if corr.weight.x == 0.0 && corr.weight.y == 0.0 {
        return Ok((Vector2::zeros(), Matrix2x6::zeros()));
    }
    let y = pose.transform_point(&corr.world.coords);
    if y.z <= MIN_DEPTH {
        return Err(PnpError::DegenerateDepth { index: corr.point_index, depth: y.z });
    }
    let proj = camera.project(&y);
    let r = Vector2::new(
        corr.weight.x * (proj.pixel.x - corr.pixel.x),
        corr.weight.y * (proj.pixel.y - corr.pixel.y),
    );

    let (fx, fy, s) = (camera.fx(), camera.fy(), camera.skew());
    let z_inv = 1.0 / y.z;
    let z_inv_sq = z_inv * z_inv;
    let du = Vector3::new(fx * z_inv, s * z_inv, -(fx * y.x + s * y.y) * z_inv_sq);
    let dv = Vector3::new(0.0, fy * z_inv, -fy * y.y * z_inv_sq);

    let mut dy = Matrix3x6::zeros();
    dy.fixed_view_mut::<3, 3>(0, 0).copy_from(&nalgebra::Matrix3::identity());
    dy.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-se3::hat(&y)));

    let mut j = Matrix2x6::zeros();
    j.set_row(0, &((du.transpose() * dy) * corr.weight.x));
    j.set_row(1, &((dv.transpose() * dy) * corr.weight.y));
    Ok((r, j))
}

/// Total weighted reprojection cost `0.5 * sum ||f_i||^2` at `pose`.
pub fn total_cost(
    corrs: &[Correspondence],
    pose: &Pose,
    camera: &CameraModel,
) -> Result<f64, PnpError> {
    let mut cost = 0.0;
    for corr in corrs {
        let r = residual(corr, pose, camera)?;
        cost += 0.5 * r.norm_squared();
    }
    Ok(cost)
}

/// Like [`total_cost`] but treats behind-camera points as infinitely bad
/// instead of erroring. Used to reject trial steps and score pose samples.
pub(crate) fn cost_or_inf(corrs: &[Correspondence], pose: &Pose, camera: &CameraModel) -> f64 {
    match total_cost(corrs, pose, camera) {
        Ok(c) => c,
        Err(_) => f64::INFINITY,
    }
}
