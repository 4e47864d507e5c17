//! Minimal three-point pose solver used to generate RANSAC hypotheses.
//!
//! Classic distance formulation: with unit bearings `j_i`, unknown camera
//! distances `s_i`, and world side lengths `a = |X2-X3|`, `b = |X1-X3|`,
//! `c = |X1-X2|`, the law of cosines gives three equations in `s_i`.
//! Substituting `s2 = u s1`, `s3 = v s1` and eliminating `u` yields a quartic
//! in `v`, solved via the eigenvalues of its companion matrix. Each admissible
//! root reconstructs camera-frame points that a rigid Kabsch fit turns into a
//! pose; up to four candidates are returned and the caller disambiguates with
//! extra correspondences.

use nalgebra::{DMatrix, Vector3};

use crate::geometry::{CameraModel, Pose};
use crate::matcher::Correspondence;

use super::epnp::kabsch;

/// Multiply two polynomials in ascending-coefficient form.
fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, &a) in p.iter().enumerate() {
        for (j, &b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

fn poly_add(p: &[f64], q: &[f64], scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; p.len().max(q.len())];
    for (i, &a) in p.iter().enumerate() {
        out[i] += a;
    }
    for (i, &b) in q.iter().enumerate() {
        out[i] += scale * b;
    }
    out
}

fn poly_eval(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn poly_derivative(p: &[f64]) -> Vec<f64> {
    p.iter().enumerate().skip(1).map(|(i, &c)| c * i as f64).collect()
}

/// Real roots of a polynomial (ascending coefficients) via the companion
/// matrix, polished with a few Newton steps.
fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let max_abs = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if max_abs == 0.0 {
        return Vec::new();
    }
    let scaled: Vec<f64> = coeffs.iter().map(|c| c / max_abs).collect();
    // Trim a numerically-zero leading coefficient so the companion matrix
    // stays well posed when the quartic degenerates to a cubic.
    let mut degree = scaled.len() - 1;
    while degree > 0 && scaled[degree].abs() < 1e-12 {
        degree -= 1;
    }
    if degree == 0 {
        return Vec::new();
    }
    let lead = scaled[degree];
    let mut companion = DMatrix::zeros(degree, degree);
    for i in 1..degree {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..degree {
        companion[(i, degree - 1)] = -scaled[i] / lead;
    }
    let eigenvalues = companion.complex_eigenvalues();
    let deriv = poly_derivative(&scaled[..=degree]);
    let mut roots = Vec::new();
    for ev in eigenvalues.iter() {
        if ev.im.abs() > 1e-6 * ev.re.abs().max(1.0) {
            continue;
        }
        let mut x = ev.re;
        for _ in 0..3 {
            let d = poly_eval(&deriv, x);
            if d.abs() < 1e-14 {
                break;
            }
            x -= poly_eval(&scaled[..=degree], x) / d;
        }
        roots.push(x);
    }
    roots
}

/// Unit bearing of an observed pixel through the (upper-triangular) intrinsics.
fn bearing(camera: &CameraModel, pixel: &nalgebra::Vector2<f64>) -> Option<Vector3<f64>> {
    let k_inv = camera.intrinsics().try_inverse()?;
    let dir = k_inv * Vector3::new(pixel.x, pixel.y, 1.0);
    let norm = dir.norm();
    if norm < 1e-12 {
        return None;
    }
    Some(dir / norm)
}

/// Candidate poses from exactly three correspondences. Degenerate triples
/// (collinear world points, coincident rays, unsolvable distance systems)
/// yield an empty vector rather than an error: the RANSAC loop just moves on
/// to the next sample.
pub fn solve_p3p(corrs: &[Correspondence], camera: &CameraModel) -> Vec<Pose> {
    assert_eq!(corrs.len(), 3, "p3p takes exactly three correspondences");
    let x1 = corrs[0].world.coords;
    let x2 = corrs[1].world.coords;
    let x3 = corrs[2].world.coords;
    let a = (x2 - x3).norm();
    let b = (x1 - x3).norm();
    let c = (x1 - x2).norm();
    if a < 1e-9 || b < 1e-9 || c < 1e-9 {
        return Vec::new();
    }
    let (j1, j2, j3) = match (
        bearing(camera, &corrs[0].pixel),
        bearing(camera, &corrs[1].pixel),
        bearing(camera, &corrs[2].pixel),
    ) {
        (Some(j1), Some(j2), Some(j3)) => (j1, j2, j3),
        _ => return Vec::new(),
    };
    let cos_a = j2.dot(&j3);
    let cos_b = j1.dot(&j3);
    let cos_g = j1.dot(&j2);

    // q(v) = 1 - 2 cos(beta) v + v^2; u(v) = n(v)/d(v); constraint (II)
    // multiplied through by d^2 gives the quartic p(v).
    let q = vec![1.0, -2.0 * cos_b, 1.0];
    let n = poly_add(&poly_mul(&q, &[(a * a - c * c) / (b * b)]), &[1.0, 0.0, -1.0], 1.0);
    let d = vec![2.0 * cos_g, -2.0 * cos_a];
    let dd = poly_mul(&d, &d);
    let mut p = poly_mul(&n, &n);
    p = poly_add(&p, &poly_mul(&n, &d), -2.0 * cos_g);
    p = poly_add(&p, &dd, 1.0);
    p = poly_add(&p, &poly_mul(&q, &dd), -(c * c) / (b * b));

    let mut poses = Vec::new();
    for v in real_roots(&p) {
        if !(v.is_finite() && v > 0.0) {
            continue;
        }
        let qv = poly_eval(&q, v);
        if qv <= 0.0 {
            continue;
        }
        let dv = poly_eval(&d, v);
        if dv.abs() < 1e-12 {
            continue;
        }
        let u = poly_eval(&n, v) / dv;
        if u <= 0.0 {
            continue;
        }
        let s1 = b / qv.sqrt();
        let cam = [j1 * s1, j2 * (u * s1), j3 * (v * s1)];
        let world = [x1, x2, x3];
        poses.push(kabsch(&world, &cam));
    }
    poses
}
