//! Robust pose estimation: minimal three-point hypotheses, consensus
//! scoring, and a closed-form refit on the winning inlier set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::geometry::{CameraModel, Pose};
use crate::matcher::Correspondence;

use super::epnp::solve_epnp_subset;
use super::p3p::solve_p3p;
use super::{PnpError, MIN_DEPTH};

/// Fewest inliers a hypothesis may have and still count as consensus.
const MIN_CONSENSUS: usize = 4;

#[derive(Debug, Clone, Copy)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Unweighted reprojection distance (pixels) below which a pair supports
    /// a hypothesis.
    pub inlier_px: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { iterations: 1000, inlier_px: 4.0, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct RansacResult {
    pub pose: Pose,
    /// Per-correspondence support flags at the returned pose.
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
}

fn inlier_mask(
    corrs: &[Correspondence],
    pose: &Pose,
    camera: &CameraModel,
    inlier_px: f64,
) -> (Vec<bool>, usize) {
    let thr_sq = inlier_px * inlier_px;
    let mut mask = vec![false; corrs.len()];
    let mut count = 0;
    for (i, corr) in corrs.iter().enumerate() {
        let y = pose.transform_point(&corr.world.coords);
        if y.z <= MIN_DEPTH {
            continue;
        }
        let proj = camera.project(&y);
        if (proj.pixel - corr.pixel).norm_squared() < thr_sq {
            mask[i] = true;
            count += 1;
        }
    }
    (mask, count)
}

struct Hypothesis {
    count: usize,
    iteration: usize,
    pose: Pose,
}

/// Prefer more inliers; break ties toward the earlier iteration so the
/// parallel reduction is deterministic.
fn better(a: Option<Hypothesis>, b: Option<Hypothesis>) -> Option<Hypothesis> {
    match (a, b) {
        (None, b) => b,
        (a, None) => a,
        (Some(a), Some(b)) => {
            if b.count > a.count || (b.count == a.count && b.iteration < a.iteration) {
                Some(b)
            } else {
                Some(a)
            }
        }
    }
}

/// RANSAC over minimal three-point hypotheses. Each iteration draws its own
/// RNG stream from the base seed, so the hypothesis set is reproducible and
/// independent of thread scheduling; the winner is refit with the closed-form
/// solver on its inliers (up to two refit rounds, kept only while the
/// consensus does not shrink).
pub fn solve_ransac(
    corrs: &[Correspondence],
    camera: &CameraModel,
    config: &RansacConfig,
) -> Result<RansacResult, PnpError> {
    if corrs.len() < 4 {
        return Err(PnpError::NotEnoughPairs { needed: 4, got: corrs.len() });
    }

    let best = (0..config.iterations)
        .into_par_iter()
        .map(|iteration| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(iteration as u64 + 1);
            let sample = rand::seq::index::sample(&mut rng, corrs.len(), 3);
            let triple: Vec<Correspondence> =
                sample.iter().map(|i| corrs[i].clone()).collect();
            let mut local: Option<Hypothesis> = None;
            for pose in solve_p3p(&triple, camera) {
                let (_, count) = inlier_mask(corrs, &pose, camera, config.inlier_px);
                local = better(local, Some(Hypothesis { count, iteration, pose }));
            }
            local
        })
        .reduce(|| None, better);

    let best = match best {
        Some(h) if h.count >= MIN_CONSENSUS => h,
        Some(h) => return Err(PnpError::NoConsensus { best: h.count, needed: MIN_CONSENSUS }),
        None => return Err(PnpError::NoConsensus { best: 0, needed: MIN_CONSENSUS }),
    };

    let mut pose = best.pose;
    let (mut mask, mut count) = inlier_mask(corrs, &pose, camera, config.inlier_px);
    for _ in 0..2 {
        let subset: Vec<usize> =
            mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect();
        if subset.len() < 4 {
            break;
        }
        let refit = match solve_epnp_subset(corrs, &subset, camera) {
            Ok(p) => p,
            Err(_) => break,
        };
        let (refit_mask, refit_count) = inlier_mask(corrs, &refit, camera, config.inlier_px);
        if refit_count < count {
            break;
        }
        let same_mask = refit_mask == mask;
        pose = refit;
        mask = refit_mask;
        count = refit_count;
        if same_mask {
            break;
        }
    }

    Ok(RansacResult { pose, inliers: mask, inlier_count: count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Point3, Vector2};
    use rand::{Rng, SeedableRng};

    use crate::geometry::{rre_degrees, rte};
    use crate::pnp::solve_epnp;
    use crate::synth;

    fn camera() -> CameraModel {
        CameraModel::simple(400.0, 512, 512).unwrap()
    }

    #[test]
    fn clean_data_keeps_every_pair_and_matches_closed_form() {
        let camera = camera();
        let (pose, corrs) = synth::random_pnp_problem(&camera, 40, (1.0, 10.0), 11);
        let result = solve_ransac(&corrs, &camera, &RansacConfig::default()).unwrap();
        assert_eq!(result.inlier_count, corrs.len());
        assert!(result.inliers.iter().all(|&m| m));
        let epnp = solve_epnp(&corrs, &camera).unwrap();
        assert!(rte(&result.pose, &epnp) < 1e-9);
        assert!(rre_degrees(&result.pose, &epnp) < 1e-9);
        assert!(rte(&result.pose, &pose) < 1e-6);
    }

    #[test]
    fn half_outliers_still_recover_the_pose() {
        let camera = camera();
        for seed in 0..20 {
            let (pose, clean) = synth::random_pnp_problem(&camera, 100, (1.0, 10.0), 2000 + seed);
            let (noisy, flags) =
                synth::corrupt_correspondences(&clean, &camera, 0.5, 0.5, 3000 + seed);
            let config = RansacConfig { seed: 4000 + seed, ..RansacConfig::default() };
            let result = solve_ransac(&noisy, &camera, &config).unwrap();
            assert!(rte(&result.pose, &pose) < 0.05, "seed {seed}: rte {}", rte(&result.pose, &pose));
            assert!(
                rre_degrees(&result.pose, &pose) < 0.5,
                "seed {seed}: rre {}",
                rre_degrees(&result.pose, &pose)
            );
            let true_inliers = flags.iter().filter(|&&o| !o).count();
            let recovered = result
                .inliers
                .iter()
                .zip(&flags)
                .filter(|&(&m, &o)| m && !o)
                .count();
            assert!(
                recovered * 10 >= true_inliers * 9,
                "seed {seed}: only {recovered}/{true_inliers} true inliers kept"
            );
        }
    }

    #[test]
    fn unrelated_pairs_reach_no_consensus() {
        let camera = camera();
        let mut failures = 0;
        for seed in 0..100 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(50_000 + seed);
            let corrs: Vec<Correspondence> = (0..6)
                .map(|i| Correspondence {
                    point_index: i,
                    world: Point3::new(
                        rng.random_range(-5.0..5.0),
                        rng.random_range(-5.0..5.0),
                        rng.random_range(-5.0..5.0),
                    ),
                    pixel: Vector2::new(
                        rng.random_range(0.0..512.0),
                        rng.random_range(0.0..512.0),
                    ),
                    weight: Vector2::new(1.0, 1.0),
                    score: 1.0,
                })
                .collect();
            let config = RansacConfig { seed: 60_000 + seed, ..RansacConfig::default() };
            match solve_ransac(&corrs, &camera, &config) {
                Err(PnpError::NoConsensus { best, .. }) => assert!(best < 4),
                Ok(_) => failures += 1,
                Err(other) => panic!("seed {seed}: unexpected error {other:?}"),
            }
        }
        assert_eq!(failures, 0, "{failures}/100 random-pair problems found consensus");
    }

    #[test]
    fn same_seed_reproduces_bitwise_same_answer() {
        let camera = camera();
        let (_, clean) = synth::random_pnp_problem(&camera, 60, (1.0, 10.0), 21);
        let (noisy, _) = synth::corrupt_correspondences(&clean, &camera, 1.0, 0.4, 22);
        let config = RansacConfig { seed: 23, ..RansacConfig::default() };
        let a = solve_ransac(&noisy, &camera, &config).unwrap();
        let b = solve_ransac(&noisy, &camera, &config).unwrap();
        assert_eq!(a.inliers, b.inliers);
        for i in 0..3 {
            assert_eq!(
                a.pose.translation()[i].to_bits(),
                b.pose.translation()[i].to_bits()
            );
            for j in 0..3 {
                assert_eq!(
                    a.pose.rotation()[(i, j)].to_bits(),
                    b.pose.rotation()[(i, j)].to_bits()
                );
            }
        }
    }

    #[test]
    fn fewer_than_four_pairs_is_rejected() {
        let camera = camera();
        let (_, corrs) = synth::random_pnp_problem(&camera, 3, (1.0, 10.0), 31);
        match solve_ransac(&corrs, &camera, &RansacConfig::default()) {
            Err(PnpError::NotEnoughPairs { needed: 4, got: 3 }) => {}
            other => panic!("expected NotEnoughPairs, got {other:?}"),
        }
    }
}
