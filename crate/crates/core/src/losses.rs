//! Training-side losses: descriptor triplets, patch cross-entropy, and the
//! weighted total objective.
//!
//! Descriptor math accepts `f32` slices (the descriptor storage type) but
//! accumulates in `f64`, matching the rest of the crate.

use nalgebra::Vector2;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("vector dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("negative pixel is {distance:.3} px from the anchor, below the minimum {min:.3}")]
    NegativeTooClose { distance: f64, min: f64 },
    #[error("class distribution sums to {sum} (must be 1 within 1e-6)")]
    DistributionNotNormalized { sum: f64 },
    #[error("ground-truth class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
}

/// Weights and margins of the combined objective.
///
/// `neg_pixel_min_dist` is the Chebyshev exclusion radius for pixel-level
/// negatives, half the patch size; the default matches a 16-pixel grid.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub margin: f64,
    pub neg_pixel_min_dist: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.5, gamma: 0.5, margin: 0.4, neg_pixel_min_dist: 8.0 }
    }
}

impl LossConfig {
    /// Defaults with the negative-pixel radius tied to a `g`-pixel patch grid.
    pub fn for_patch_size(g: u32) -> Self {
        Self { neg_pixel_min_dist: g as f64 / 2.0, ..Self::default() }
    }
}

fn euclidean(a: &[f32], b: &[f32]) -> Result<f64, LossError> {
    if a.len() != b.len() {
        return Err(LossError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// The hinge on precomputed distances: `max(margin + d_ap - d_an, 0)`.
pub fn triplet_hinge(margin: f64, d_ap: f64, d_an: f64) -> f64 {
    (margin + d_ap - d_an).max(0.0)
}

/// Hinge triplet loss `max(margin + ||a-p|| - ||a-n||, 0)`.
pub fn triplet_loss(a: &[f32], p: &[f32], n: &[f32], margin: f64) -> Result<f64, LossError> {
    let dap = euclidean(a, p)?;
    let dan = euclidean(a, n)?;
    Ok(triplet_hinge(margin, dap, dan))
}

/// Subgradient of [`triplet_loss`] with respect to the anchor. Zero when the
/// hinge is inactive; at the kink itself the active-side expression is
/// returned (a valid subgradient).
pub fn triplet_grad_anchor(
    a: &[f32],
    p: &[f32],
    n: &[f32],
    margin: f64,
) -> Result<Vec<f64>, LossError> {
    let dap = euclidean(a, p)?;
    let dan = euclidean(a, n)?;
    if margin + dap - dan < 0.0 {
        return Ok(vec![0.0; a.len()]);
    }
    let mut grad = vec![0.0; a.len()];
    for i in 0..a.len() {
        let toward_p = if dap > 0.0 { (a[i] as f64 - p[i] as f64) / dap } else { 0.0 };
        let toward_n = if dan > 0.0 { (a[i] as f64 - n[i] as f64) / dan } else { 0.0 };
        grad[i] = toward_p - toward_n;
    }
    Ok(grad)
}

/// Triplet loss over global scene descriptors (anchor image, positive submap,
/// negative submap).
pub fn global_loss(
    image: &[f32],
    positive: &[f32],
    negative: &[f32],
    config: &LossConfig,
) -> Result<f64, LossError> {
    triplet_loss(image, positive, negative, config.margin)
}

/// Triplet loss over a point descriptor, its matched pixel descriptor, and a
/// negative pixel descriptor. The negative pixel must lie at Chebyshev
/// distance at least `neg_pixel_min_dist` from the matched pixel; the
/// boundary is accepted.
pub fn pixel_loss(
    point: &[f32],
    pixel: &[f32],
    negative: &[f32],
    pixel_pos: &Vector2<f64>,
    negative_pos: &Vector2<f64>,
    config: &LossConfig,
) -> Result<f64, LossError> {
    let distance = (negative_pos.x - pixel_pos.x)
        .abs()
        .max((negative_pos.y - pixel_pos.y).abs());
    if distance < config.neg_pixel_min_dist {
        return Err(LossError::NegativeTooClose { distance, min: config.neg_pixel_min_dist });
    }
    triplet_loss(point, pixel, negative, config.margin)
}

/// Draw a pixel center uniformly over the image, rejecting candidates inside
/// the Chebyshev exclusion box around `anchor`. Panics if the image cannot
/// contain a valid candidate (exclusion box covering everything).
pub fn sample_negative_pixel(
    width: u32,
    height: u32,
    anchor: &Vector2<f64>,
    min_dist: f64,
    rng: &mut impl Rng,
) -> Vector2<f64> {
    for _ in 0..10_000 {
        let u = rng.random_range(0..width) as f64 + 0.5;
        let v = rng.random_range(0..height) as f64 + 0.5;
        let d = (u - anchor.x).abs().max((v - anchor.y).abs());
        if d >= min_dist {
            return Vector2::new(u, v);
        }
    }
    panic!("no valid negative pixel exists: exclusion radius {min_dist} covers the image");
}

/// Cross-entropy of a class distribution against the true class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeLoss {
    pub loss: f64,
    /// True when the ground-truth probability was below 1e-12 and the loss
    /// was computed from the clamped value.
    pub clamped: bool,
}

/// `-log p[gt]` with the probability clamped at 1e-12. The distribution must
/// sum to 1 within 1e-6.
pub fn patch_ce_loss(distribution: &[f64], gt_class: usize) -> Result<CeLoss, LossError> {
    if gt_class >= distribution.len() {
        return Err(LossError::ClassOutOfRange { class: gt_class, classes: distribution.len() });
    }
    let sum: f64 = distribution.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(LossError::DistributionNotNormalized { sum });
    }
    let p = distribution[gt_class];
    let clamped = p < 1e-12;
    let loss = -(p.max(1e-12)).ln();
    Ok(CeLoss { loss, clamped })
}

/// The four scalar pieces of the combined objective.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossComponents {
    pub global_term: f64,
    pub patch_term: f64,
    pub pixel_term: f64,
    pub kl_term: f64,
}

/// `alpha * global + beta * patch + gamma * pixel + kl`.
pub fn total_loss(components: &LossComponents, config: &LossConfig) -> f64 {
    config.alpha * components.global_term
        + config.beta * components.patch_term
        + config.gamma * components.pixel_term
        + components.kl_term
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn triplet_matches_hand_arithmetic_exactly() {
        // On distances the hinge is plain arithmetic, bit for bit.
        assert_eq!(triplet_hinge(0.4, 0.2, 0.5), 0.4 + 0.2 - 0.5);
        assert!((triplet_hinge(0.4, 0.2, 0.5) - 0.1).abs() < 1e-15);

        // Same numbers through descriptor vectors: distances along one axis
        // come back from sqrt exactly (the squared f32 value is an exact f64,
        // and its square root is the original value).
        let anchor = [0.0f32, 0.0];
        let positive = [0.2f32, 0.0];
        let negative = [0.5f32, 0.0];
        let loss = triplet_loss(&anchor, &positive, &negative, 0.4).unwrap();
        let dap = 0.2f32 as f64;
        let dan = 0.5f32 as f64;
        assert_eq!(loss, (0.4 + dap - dan).max(0.0));
        assert!((loss - 0.1).abs() < 1e-7);
    }

    #[test]
    fn triplet_equals_margin_when_negative_is_positive() {
        let a = [0.3f32, -1.0, 2.0];
        let p = [0.1f32, 0.5, 1.0];
        let loss = triplet_loss(&a, &p, &p, 0.4).unwrap();
        // d_ap == d_an bitwise, but (margin + d) - d still rounds once.
        assert!((loss - 0.4).abs() < 1e-15, "loss {loss}");
    }

    #[test]
    fn triplet_hinges_to_zero_when_negative_is_far() {
        let a = [0.0f32, 0.0];
        let p = [0.1f32, 0.0];
        let n = [5.0f32, 0.0];
        assert_eq!(triplet_loss(&a, &p, &n, 0.4).unwrap(), 0.0);
    }

    #[test]
    fn triplet_rejects_mismatched_dims() {
        match triplet_loss(&[0.0f32], &[0.0f32, 1.0], &[0.0f32], 0.4) {
            Err(LossError::DimensionMismatch { left: 1, right: 2 }) => {}
            other => panic!("expected DimensionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn anchor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut checked = 0;
        for _ in 0..200 {
            let dim = 8;
            let sample =
                |rng: &mut ChaCha8Rng| -> Vec<f32> { (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect() };
            let a = sample(&mut rng);
            let p = sample(&mut rng);
            let n = sample(&mut rng);
            let dap = euclidean(&a, &p).unwrap();
            let dan = euclidean(&a, &n).unwrap();
            // Stay away from the hinge kink where the loss is not smooth.
            if (0.4 + dap - dan).abs() < 1e-2 {
                continue;
            }
            checked += 1;
            let grad = triplet_grad_anchor(&a, &p, &n, 0.4).unwrap();
            let h = 1e-3f32;
            for i in 0..dim {
                let mut plus = a.clone();
                let mut minus = a.clone();
                plus[i] += h;
                minus[i] -= h;
                let lp = triplet_loss(&plus, &p, &n, 0.4).unwrap();
                let lm = triplet_loss(&minus, &p, &n, 0.4).unwrap();
                let fd = (lp - lm) / (2.0 * h as f64);
                assert!(
                    (grad[i] - fd).abs() < 2e-3,
                    "component {i}: analytic {} vs fd {fd}",
                    grad[i]
                );
            }
        }
        assert!(checked > 150, "only {checked} smooth triplets checked");
    }

    #[test]
    fn pixel_negative_boundary_is_accepted_and_inside_rejected() {
        let config = LossConfig::for_patch_size(16);
        let desc = [0.1f32, 0.2];
        let anchor = Vector2::new(100.5, 100.5);
        // Exactly g/2 = 8 pixels away on one axis.
        let boundary = Vector2::new(108.5, 100.5);
        assert!(pixel_loss(&desc, &desc, &desc, &anchor, &boundary, &config).is_ok());
        let inside = Vector2::new(107.5, 100.5);
        match pixel_loss(&desc, &desc, &desc, &anchor, &inside, &config) {
            Err(LossError::NegativeTooClose { distance, min }) => {
                assert_eq!(distance, 7.0);
                assert_eq!(min, 8.0);
            }
            other => panic!("expected NegativeTooClose, got {other:?}"),
        }
        // Chebyshev: diagonal offset of (8, -8) is exactly on the boundary.
        let diagonal = Vector2::new(108.5, 92.5);
        assert!(pixel_loss(&desc, &desc, &desc, &anchor, &diagonal, &config).is_ok());
    }

    #[test]
    fn negative_sampler_never_violates_the_exclusion_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let anchor = Vector2::new(128.5, 64.5);
        let min_dist = 8.0;
        for _ in 0..10_000 {
            let n = sample_negative_pixel(256, 256, &anchor, min_dist, &mut rng);
            let d = (n.x - anchor.x).abs().max((n.y - anchor.y).abs());
            assert!(d >= min_dist, "sampled {n:?} at Chebyshev distance {d}");
            assert!(n.x > 0.0 && n.x < 256.0 && n.y > 0.0 && n.y < 256.0);
        }
    }

    #[test]
    fn cross_entropy_fixture_values() {
        let one_hot = [0.0, 1.0, 0.0, 0.0];
        let ce = patch_ce_loss(&one_hot, 1).unwrap();
        assert_eq!(ce.loss, 0.0);
        assert!(!ce.clamped);

        let c = 257;
        let uniform = vec![1.0 / c as f64; c];
        let ce = patch_ce_loss(&uniform, 42).unwrap();
        assert!(
            (ce.loss - (c as f64).ln()).abs() < 1e-12,
            "uniform ce {} vs ln {}",
            ce.loss,
            (c as f64).ln()
        );

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let raw: Vec<f64> = (0..16).map(|_| rng.random_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let dist: Vec<f64> = raw.iter().map(|x| x / sum).collect();
            let gt = rng.random_range(0..16);
            let ce = patch_ce_loss(&dist, gt).unwrap();
            assert!((ce.loss - (-dist[gt].ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let mut dist = vec![0.0; 4];
        dist[0] = 1.0;
        let ce = patch_ce_loss(&dist, 3).unwrap();
        assert!(ce.clamped);
        assert_eq!(ce.loss, -(1e-12f64).ln());
    }

    #[test]
    fn cross_entropy_validates_input() {
        match patch_ce_loss(&[0.5, 0.2], 0) {
            Err(LossError::DistributionNotNormalized { sum }) => {
                assert!((sum - 0.7).abs() < 1e-12)
            }
            other => panic!("expected DistributionNotNormalized, got {other:?}"),
        }
        match patch_ce_loss(&[0.5, 0.5], 2) {
            Err(LossError::ClassOutOfRange { class: 2, classes: 2 }) => {}
            other => panic!("expected ClassOutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn total_is_the_weighted_sum_with_default_halves() {
        let config = LossConfig::default();
        let unit = LossComponents { global_term: 1.0, patch_term: 1.0, pixel_term: 1.0, kl_term: 1.0 };
        assert_eq!(total_loss(&unit, &config), 2.5);
        assert_eq!(total_loss(&LossComponents::default(), &config), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let c = LossComponents {
                global_term: rng.random_range(0.0..3.0),
                patch_term: rng.random_range(0.0..3.0),
                pixel_term: rng.random_range(0.0..3.0),
                kl_term: rng.random_range(-2.0..3.0),
            };
            let by_hand =
                0.5 * c.global_term + 0.5 * c.patch_term + 0.5 * c.pixel_term + c.kl_term;
            assert_eq!(total_loss(&c, &config), by_hand);
        }
    }

    #[test]
    fn total_is_linear_in_each_component() {
        let config = LossConfig::default();
        let base = LossComponents { global_term: 0.3, patch_term: 0.7, pixel_term: 1.1, kl_term: 0.2 };
        let b = total_loss(&base, &config);
        for k in 0..4 {
            let mut bumped = base;
            match k {
                0 => bumped.global_term += 2.0,
                1 => bumped.patch_term += 2.0,
                2 => bumped.pixel_term += 2.0,
                _ => bumped.kl_term += 2.0,
            }
            let expected_delta = match k {
                0 => 2.0 * config.alpha,
                1 => 2.0 * config.beta,
                2 => 2.0 * config.gamma,
                _ => 2.0,
            };
            let delta = total_loss(&bumped, &config) - b;
            assert!((delta - expected_delta).abs() < 1e-12);
        }
    }
}
