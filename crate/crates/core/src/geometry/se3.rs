//! Exponential and logarithm maps for so(3) and se(3).
//!
//! Twist layout is translation-first: `xi = (v, w)` packed as
//! `[v_x, v_y, v_z, w_x, w_y, w_z]`. Small angles switch to Taylor
//! expansions so the maps stay accurate near the identity.

use nalgebra::{Matrix3, Vector3, Vector6};

use super::Pose;

const EPS_ANGLE: f64 = 1e-8;

/// Skew-symmetric cross-product matrix of `w`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues rotation for the axis-angle vector `w`.
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = w.norm_squared();
    let wx = hat(w);
    if theta_sq < EPS_ANGLE * EPS_ANGLE {
        // sin t / t ~ 1 - t^2/6, (1 - cos t)/t^2 ~ 1/2 - t^2/24
        Matrix3::identity() + wx * (1.0 - theta_sq / 6.0) + wx * wx * (0.5 - theta_sq / 24.0)
    } else {
        let theta = theta_sq.sqrt();
        Matrix3::identity() + wx * (theta.sin() / theta) + wx * wx * ((1.0 - theta.cos()) / theta_sq)
    }
}

/// Axis-angle vector of a rotation matrix. Inverse of [`exp_so3`] for angles in `[0, pi]`.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = c.acos();
    let off = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < EPS_ANGLE {
        // off = 2 sin(theta) * axis; sin t ~ t near 0.
        return off * 0.5;
    }
    if theta > std::f64::consts::PI - 1e-6 {
        // Near pi the off-diagonal route degenerates; recover the axis from
        // the largest diagonal entry of R + I.
        let rp = r + Matrix3::identity();
        let k = (0..3).max_by(|&a, &b| rp[(a, a)].partial_cmp(&rp[(b, b)]).unwrap()).unwrap();
        let mut axis = Vector3::new(rp[(0, k)], rp[(1, k)], rp[(2, k)]);
        axis /= axis.norm();
        // Fix the sign so that exp matches (off-diagonals fix it away from exactly pi).
        let s = Vector3::new(off.x, off.y, off.z);
        if s.dot(&axis) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    off * (theta / (2.0 * theta.sin()))
}

/// Exponential map se(3) -> SE(3).
pub fn exp(xi: &Vector6<f64>) -> Pose {
    let v = Vector3::new(xi[0], xi[1], xi[2]);
    let w = Vector3::new(xi[3], xi[4], xi[5]);
    let theta_sq = w.norm_squared();
    let wx = hat(&w);
    let rotation = exp_so3(&w);
    let v_mat = if theta_sq < EPS_ANGLE * EPS_ANGLE {
        Matrix3::identity() + wx * (0.5 - theta_sq / 24.0) + wx * wx * (1.0 / 6.0 - theta_sq / 120.0)
    } else {
        let theta = theta_sq.sqrt();
        Matrix3::identity()
            + wx * ((1.0 - theta.cos()) / theta_sq)
            + wx * wx * ((theta - theta.sin()) / (theta_sq * theta))
    };
    Pose::new_unchecked(rotation, v_mat * v)
}

/// Logarithm map SE(3) -> se(3). Inverse of [`exp`] for rotation angles in `[0, pi)`.
pub fn log(pose: &Pose) -> Vector6<f64> {
    let w = log_so3(pose.rotation());
    let theta_sq = w.norm_squared();
    let wx = hat(&w);
    let v_inv = if theta_sq < EPS_ANGLE * EPS_ANGLE {
        Matrix3::identity() - wx * 0.5 + wx * wx * (1.0 / 12.0)
    } else {
        let theta = theta_sq.sqrt();
        let half = theta * 0.5;
        // V^-1 = I - W/2 + (1/theta^2 - cot(theta/2)/(2 theta)) W^2
        let coef = (1.0 / theta_sq) - half.cos() / (2.0 * theta * half.sin());
        Matrix3::identity() - wx * 0.5 + wx * wx * coef
    };
    let v = v_inv * pose.translation();
    Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z)
}
