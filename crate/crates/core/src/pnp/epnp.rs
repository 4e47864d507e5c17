//! Closed-form pose initialization from 2D-3D pairs via control points.
//!
//! Every world point is written as a barycentric combination of 4 control
//! points (3 when the cloud is planar). The projection equations then become
//! linear in the camera-frame control-point coordinates, solved as the null
//! space of a 2n x 3m system. Candidate reconstructions from the smallest
//! eigenvectors are scored by reprojection error and the best is aligned to
//! the world frame with a rigid Kabsch fit.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::geometry::{CameraModel, Pose};
use crate::matcher::Correspondence;

use super::PnpError;

/// Relative eigenvalue threshold below which the point cloud is treated as
/// planar (third principal axis) or degenerate (second).
const FLATNESS_REL: f64 = 1e-8;

/// Rigid alignment: the pose minimizing `sum ||R x_i + t - y_i||^2`.
/// Rotation from the SVD of the cross-covariance, det-corrected to stay proper.
pub(crate) fn kabsch(world: &[Vector3<f64>], cam: &[Vector3<f64>]) -> Pose {
    let n = world.len() as f64;
    let cw: Vector3<f64> = world.iter().sum::<Vector3<f64>>() / n;
    let cc: Vector3<f64> = cam.iter().sum::<Vector3<f64>>() / n;
    let mut cross = Matrix3::zeros();
    for (x, y) in world.iter().zip(cam) {
        cross += (y - cc) * (x - cw).transpose();
    }
    let svd = cross.svd(true, true);
    let u = svd.u.expect("3x3 svd yields u");
    let v_t = svd.v_t.expect("3x3 svd yields v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    Pose::new_unchecked(r, cc - r * cw)
}

/// Unweighted reprojection SSE in pixels; infinite when a point lands at or
/// behind the camera plane. Used to rank candidate solutions.
fn reprojection_sse(corrs: &[Correspondence], pose: &Pose, camera: &CameraModel) -> f64 {
    let mut sse = 0.0;
    for corr in corrs {
        let y = pose.transform_point(&corr.world.coords);
        if y.z <= super::MIN_DEPTH {
            return f64::INFINITY;
        }
        let proj = camera.project(&y);
        sse += (proj.pixel - corr.pixel).norm_squared();
    }
    sse
}

struct ControlFrame {
    /// Control points in world coordinates, 3 or 4 of them.
    controls: Vec<Vector3<f64>>,
    /// Barycentric coordinates per input point, `controls.len()` each.
    alphas: Vec<Vec<f64>>,
}

fn control_frame(points: &[Vector3<f64>]) -> Result<ControlFrame, PnpError> {
    let n = points.len() as f64;
    let centroid: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let axes: Vec<Vector3<f64>> = order.iter().map(|&i| eig.eigenvectors.column(i).into()).collect();

    if lambda[0] <= 0.0 {
        return Err(PnpError::DegenerateConfiguration("all points coincide"));
    }
    if lambda[1] <= lambda[0] * FLATNESS_REL {
        return Err(PnpError::DegenerateConfiguration("points are collinear"));
    }
    let planar = lambda[2] <= lambda[0] * FLATNESS_REL;

    let mut controls = vec![centroid];
    let spread = if planar { 2 } else { 3 };
    for k in 0..spread {
        controls.push(centroid + axes[k] * lambda[k].sqrt());
    }

    // Barycentric coordinates: solve [c_1-c_0 .. c_m-c_0] beta = X - c_0 and
    // set alpha = (1 - sum beta, beta). The planar basis is solved in the
    // least-squares sense, exact for in-plane points.
    let mut alphas = Vec::with_capacity(points.len());
    if planar {
        let b0 = controls[1] - controls[0];
        let b1 = controls[2] - controls[0];
        let g = nalgebra::Matrix2::new(b0.dot(&b0), b0.dot(&b1), b1.dot(&b0), b1.dot(&b1));
        let g_inv = g.try_inverse().ok_or(PnpError::DegenerateConfiguration(
            "planar control basis is singular",
        ))?;
        for p in points {
            let d = p - centroid;
            let beta = g_inv * nalgebra::Vector2::new(b0.dot(&d), b1.dot(&d));
            alphas.push(vec![1.0 - beta.x - beta.y, beta.x, beta.y]);
        }
    } else {
        let basis = Matrix3::from_columns(&[
            controls[1] - controls[0],
            controls[2] - controls[0],
            controls[3] - controls[0],
        ]);
        let basis_inv = basis.try_inverse().ok_or(PnpError::DegenerateConfiguration(
            "control basis is singular",
        ))?;
        for p in points {
            let beta = basis_inv * (p - centroid);
            alphas.push(vec![1.0 - beta.x - beta.y - beta.z, beta.x, beta.y, beta.z]);
        }
    }
    Ok(ControlFrame { controls, alphas })
}

/// Camera-frame control points from a null-space vector, scaled so that
/// inter-control distances match the world frame and depths are positive.
fn candidate_from_single(v: &DVector<f64>, frame: &ControlFrame) -> Option<Vec<Vector3<f64>>> {
    let m = frame.controls.len();
    let raw: Vec<Vector3<f64>> = (0..m).map(|j| Vector3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2])).collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..m {
        for k in (j + 1)..m {
            let dc = (raw[j] - raw[k]).norm();
            let dw = (frame.controls[j] - frame.controls[k]).norm();
            num += dc * dw;
            den += dc * dc;
        }
    }
    if den <= 0.0 {
        return None;
    }
    let beta = num / den;
    Some(raw.iter().map(|c| c * beta).collect())
}

/// Two-eigenvector candidate: solve the inter-control distance constraints
/// for (b1^2, b1 b2, b2^2) by least squares, then recover (b1, b2).
fn candidate_from_pair(
    va: &DVector<f64>,
    vb: &DVector<f64>,
    frame: &ControlFrame,
) -> Option<Vec<Vector3<f64>>> {
    let m = frame.controls.len();
    let ca: Vec<Vector3<f64>> = (0..m).map(|j| Vector3::new(va[3 * j], va[3 * j + 1], va[3 * j + 2])).collect();
    let cb: Vec<Vector3<f64>> = (0..m).map(|j| Vector3::new(vb[3 * j], vb[3 * j + 1], vb[3 * j + 2])).collect();

    let pairs = m * (m - 1) / 2;
    let mut l = DMatrix::zeros(pairs, 3);
    let mut rhs = DVector::zeros(pairs);
    let mut row = 0;
    for j in 0..m {
        for k in (j + 1)..m {
            let da = ca[j] - ca[k];
            let db = cb[j] - cb[k];
            l[(row, 0)] = da.norm_squared();
            l[(row, 1)] = 2.0 * da.dot(&db);
            l[(row, 2)] = db.norm_squared();
            rhs[row] = (frame.controls[j] - frame.controls[k]).norm_squared();
            row += 1;
        }
    }
    let svd = l.svd(true, true);
    let sol = svd.solve(&rhs, 1e-12).ok()?;
    let (b11, b12, b22) = (sol[0], sol[1], sol[2]);
    if b11 <= 0.0 && b22 <= 0.0 {
        return None;
    }
    // Recover magnitudes from the dominant square, sign of b2 from the cross term.
    let (b1, b2) = if b11 >= b22 {
        let b1 = b11.max(0.0).sqrt();
        (b1, if b1 > 0.0 { b12 / b1 } else { 0.0 })
    } else {
        let b2 = b22.max(0.0).sqrt();
        (if b2 > 0.0 { b12 / b2 } else { 0.0 }, b2)
    };
    Some((0..m).map(|j| ca[j] * b1 + cb[j] * b2).collect())
}

/// Rebuild per-point camera coordinates, fix the depth sign, and align.
fn pose_from_controls(
    mut cam_controls: Vec<Vector3<f64>>,
    frame: &ControlFrame,
    world: &[Vector3<f64>],
) -> Option<Pose> {
    let rebuild = |controls: &[Vector3<f64>]| -> Vec<Vector3<f64>> {
        frame
            .alphas
            .iter()
            .map(|a| {
                a.iter()
                    .zip(controls)
                    .map(|(&w, c)| c * w)
                    .sum::<Vector3<f64>>()
            })
            .collect()
    };
    let mut cam_points = rebuild(&cam_controls);
    let mean_z: f64 = cam_points.iter().map(|p| p.z).sum::<f64>() / cam_points.len() as f64;
    if mean_z < 0.0 {
        for c in &mut cam_controls {
            *c = -*c;
        }
        cam_points = rebuild(&cam_controls);
    }
    if cam_points.iter().all(|p| p.norm_squared() == 0.0) {
        return None;
    }
    Some(kabsch(world, &cam_points))
}

/// Closed-form pose from at least 4 correspondences (all weights ignored).
///
/// Planar clouds switch to a 3-control-point basis. Collinear or coincident
/// point sets are rejected. The returned rotation is orthonormal by
/// construction of the final rigid alignment.
pub fn solve_epnp(corrs: &[Correspondence], camera: &CameraModel) -> Result<Pose, PnpError> {
    if corrs.len() < 4 {
        return Err(PnpError::NotEnoughPairs { needed: 4, got: corrs.len() });
    }
    let world: Vec<Vector3<f64>> = corrs.iter().map(|c| c.world.coords).collect();
    let frame = control_frame(&world)?;
    let m = frame.controls.len();

    let mut mat = DMatrix::zeros(2 * corrs.len(), 3 * m);
    let (fx, fy, s, cx, cy) = (camera.fx(), camera.fy(), camera.skew(), camera.cx(), camera.cy());
    for (i, corr) in corrs.iter().enumerate() {
        for j in 0..m {
            let a = frame.alphas[i][j];
            mat[(2 * i, 3 * j)] = a * fx;
            mat[(2 * i, 3 * j + 1)] = a * s;
            mat[(2 * i, 3 * j + 2)] = a * (cx - corr.pixel.x);
            mat[(2 * i + 1, 3 * j + 1)] = a * fy;
            mat[(2 * i + 1, 3 * j + 2)] = a * (cy - corr.pixel.y);
        }
    }
    let mtm = mat.transpose() * &mat;
    let eig = mtm.symmetric_eigen();
    let mut order: Vec<usize> = (0..3 * m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let v_last: DVector<f64> = eig.eigenvectors.column(order[0]).into();
    let v_prev: DVector<f64> = eig.eigenvectors.column(order[1]).into();

    let mut best: Option<(f64, Pose)> = None;
    let mut consider = |controls: Option<Vec<Vector3<f64>>>| {
        if let Some(pose) = controls.and_then(|c| pose_from_controls(c, &frame, &world)) {
            let sse = reprojection_sse(corrs, &pose, camera);
            if sse.is_finite() && best.as_ref().map_or(true, |(b, _)| sse < *b) {
                best = Some((sse, pose));
            }
        }
    };
    consider(candidate_from_single(&v_last, &frame));
    consider(candidate_from_pair(&v_last, &v_prev, &frame));

    match best {
        Some((_, pose)) => Ok(pose),
        None => Err(PnpError::DegenerateConfiguration("no control-point candidate projects all points in front of the camera")),
    }
}

/// Convenience for tests and RANSAC refits: EPnP restricted to a subset.
pub(crate) fn solve_epnp_subset(
    corrs: &[Correspondence],
    subset: &[usize],
    camera: &CameraModel,
) -> Result<Pose, PnpError> {
    let picked: Vec<Correspondence> = subset.iter().map(|&i| corrs[i].clone()).collect();
    solve_epnp(&picked, camera)
}
