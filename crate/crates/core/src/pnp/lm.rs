//! Damped Gauss-Newton refinement of the weighted reprojection cost.

use nalgebra::{Matrix6, Vector6};

use crate::geometry::{se3, CameraModel, Pose};
use crate::matcher::Correspondence;

use super::{cost_or_inf, residual_jacobian, total_cost, PnpError};

#[derive(Debug, Clone, Copy)]
pub struct RefineConfig {
    pub max_iterations: usize,
    /// Stop when the proposed update twist is shorter than this.
    pub step_tol: f64,
    /// Stop when an accepted step improves the cost by less than this.
    pub cost_tol: f64,
    /// Initial damping factor; scaled x10 on rejected trials, /10 on accepts.
    pub initial_lambda: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { max_iterations: 100, step_tol: 1e-10, cost_tol: 1e-12, initial_lambda: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct RefineResult {
    pub pose: Pose,
    /// Final cost `0.5 * sum ||f_i||^2`.
    pub cost: f64,
    /// Number of accepted steps.
    pub iterations: usize,
    /// Norm of the cost gradient at the returned pose.
    pub gradient_norm: f64,
    /// Set when the damped normal equations could not be factored; the result
    /// is then the best pose seen so far rather than a stationary point.
    pub singular: bool,
}

/// Gauss-Newton Hessian approximation `J^T J` and gradient `J^T r` at `pose`.
/// Zero-weight pairs are skipped outright so they contribute no floating-point
/// operations: dropping such a pair leaves the iteration bitwise identical.
pub(crate) fn normal_equations(
    corrs: &[Correspondence],
    pose: &Pose,
    camera: &CameraModel,
) -> Result<(Matrix6<f64>, Vector6<f64>), PnpError> {
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for corr in corrs {
        if corr.weight.x == 0.0 && corr.weight.y == 0.0 {
            continue;
        }
        let (r, j) = residual_jacobian(corr, pose, camera)?;
        h += j.transpose() * j;
        g += j.transpose() * r;
    }
    Ok((h, g))
}

/// Levenberg-Marquardt minimization of the weighted reprojection cost,
/// starting from `init`. The pose update is a left-multiplied twist,
/// `pose <- exp(step) * pose`. Accepted steps never increase the cost; trial
/// steps that project a point to non-positive depth are rejected as if their
/// cost were infinite.
pub fn refine_weighted(
    corrs: &[Correspondence],
    camera: &CameraModel,
    init: &Pose,
    config: &RefineConfig,
) -> Result<RefineResult, PnpError> {
    let mut pose = init.clone();
    let mut cost = total_cost(corrs, &pose, camera)?;
    let mut lambda = config.initial_lambda;
    let mut iterations = 0;
    let mut singular = false;

    'outer: while iterations < config.max_iterations {
        let (h, g) = normal_equations(corrs, &pose, camera)?;
        loop {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] = h[(i, i)] * (1.0 + lambda);
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&(-g)),
                None => {
                    singular = true;
                    break 'outer;
                }
            };
            let finishing = step.norm() < config.step_tol;
            let trial = se3::exp(&step).compose(&pose);
            let trial_cost = cost_or_inf(corrs, &trial, camera);
            if finishing {
                // Terminate on a sub-tolerance step, but apply it first when
                // it still helps: it costs nothing and tightens first-order
                // optimality by orders of magnitude.
                if trial_cost < cost {
                    pose = trial;
                    cost = trial_cost;
                    iterations += 1;
                }
                break 'outer;
            }
            if trial_cost < cost {
                let improvement = cost - trial_cost;
                pose = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-15);
                iterations += 1;
                if improvement < config.cost_tol {
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                break 'outer;
            }
        }
    }

    let gradient_norm = match normal_equations(corrs, &pose, camera) {
        Ok((_, g)) => g.norm(),
        Err(_) => f64::NAN,
    };
    Ok(RefineResult { pose, cost, iterations, gradient_norm, singular })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::geometry::{rre_degrees, rte};
    use crate::pnp::solve_epnp;
    use crate::synth;

    fn camera() -> CameraModel {
        CameraModel::simple(400.0, 512, 512).unwrap()
    }

    #[test]
    fn ground_truth_init_converges_immediately() {
        let camera = camera();
        // Observations produced by forward projection at the init pose, so
        // every residual is exactly zero there.
        let (pose, raw) = synth::random_pnp_problem(&camera, 12, (1.0, 30.0), 5);
        let corrs: Vec<Correspondence> = raw
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.pixel = camera.project(&pose.transform_point(&c.world.coords)).pixel;
                c
            })
            .collect();
        let result = refine_weighted(&corrs, &camera, &pose, &RefineConfig::default()).unwrap();
        assert_eq!(result.iterations, 0);
        assert_eq!(result.cost, 0.0);
        assert!(!result.singular);
        assert!(result.gradient_norm < 1e-12);
    }

    #[test]
    fn perturbed_init_returns_to_ground_truth() {
        let camera = camera();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..100 {
            let (pose, corrs) = synth::random_pnp_problem(&camera, 15, (1.0, 30.0), 100 + seed);
            let init = synth::jitter_pose(&pose, 0.2, 5f64.to_radians(), &mut rng);
            let result = refine_weighted(&corrs, &camera, &init, &RefineConfig::default()).unwrap();
            assert!(
                rte(&result.pose, &pose) < 1e-8,
                "seed {seed}: rte {}",
                rte(&result.pose, &pose)
            );
            assert!(
                rre_degrees(&result.pose, &pose) < 1e-8,
                "seed {seed}: rre {}",
                rre_degrees(&result.pose, &pose)
            );
            assert!(result.gradient_norm < 1e-6, "seed {seed}: grad {}", result.gradient_norm);
        }
    }

    #[test]
    fn epnp_seed_plus_refinement_hits_machine_precision() {
        let camera = camera();
        for seed in 0..100 {
            let (pose, corrs) = synth::random_pnp_problem(&camera, 10, (1.0, 30.0), 300 + seed);
            let init = solve_epnp(&corrs, &camera).unwrap();
            let result = refine_weighted(&corrs, &camera, &init, &RefineConfig::default()).unwrap();
            assert!(rte(&result.pose, &pose) < 1e-6, "seed {seed}");
            assert!(rre_degrees(&result.pose, &pose) < 1e-6, "seed {seed}");
        }
    }

    #[test]
    fn zero_weight_pair_leaves_result_bitwise_unchanged() {
        let camera = camera();
        let (pose, corrs) = synth::random_pnp_problem(&camera, 20, (1.0, 20.0), 17);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let init = synth::jitter_pose(&pose, 0.1, 3f64.to_radians(), &mut rng);

        let mut with_dead_pair = corrs.clone();
        with_dead_pair.push(Correspondence {
            point_index: 999,
            world: nalgebra::Point3::new(-40.0, 55.0, -7.0),
            pixel: Vector2::new(12345.0, -67.0),
            weight: Vector2::new(0.0, 0.0),
            score: 0.0,
        });

        let a = refine_weighted(&corrs, &camera, &init, &RefineConfig::default()).unwrap();
        let b = refine_weighted(&with_dead_pair, &camera, &init, &RefineConfig::default()).unwrap();
        for i in 0..3 {
            assert_eq!(
                a.pose.translation()[i].to_bits(),
                b.pose.translation()[i].to_bits(),
                "translation component {i} differs"
            );
            for j in 0..3 {
                assert_eq!(
                    a.pose.rotation()[(i, j)].to_bits(),
                    b.pose.rotation()[(i, j)].to_bits(),
                    "rotation entry ({i},{j}) differs"
                );
            }
        }
        assert_eq!(a.cost.to_bits(), b.cost.to_bits());
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn noisy_problem_cost_never_ends_above_start() {
        let camera = camera();
        for seed in 0..20 {
            let (pose, clean) = synth::random_pnp_problem(&camera, 40, (1.0, 15.0), 500 + seed);
            let (noisy, _) = synth::corrupt_correspondences(&clean, &camera, 0.5, 0.0, 600 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
            let init = synth::jitter_pose(&pose, 0.1, 2f64.to_radians(), &mut rng);
            let start = total_cost(&noisy, &init, &camera).unwrap();
            let result = refine_weighted(&noisy, &camera, &init, &RefineConfig::default()).unwrap();
            assert!(result.cost <= start, "seed {seed}: {} > {start}", result.cost);
            assert!(result.gradient_norm < 1e-6 * start.max(1.0), "seed {seed}");
        }
    }

    #[test]
    fn correspondence_order_does_not_change_the_optimum() {
        let camera = camera();
        let (pose, clean) = synth::random_pnp_problem(&camera, 30, (1.0, 15.0), 41);
        let (noisy, _) = synth::corrupt_correspondences(&clean, &camera, 0.8, 0.0, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let init = synth::jitter_pose(&pose, 0.15, 4f64.to_radians(), &mut rng);

        let mut reversed = noisy.clone();
        reversed.reverse();
        let a = refine_weighted(&noisy, &camera, &init, &RefineConfig::default()).unwrap();
        let b = refine_weighted(&reversed, &camera, &init, &RefineConfig::default()).unwrap();
        assert!(rte(&a.pose, &b.pose) < 1e-9);
        assert!(rre_degrees(&a.pose, &b.pose) < 1e-9);
        assert!((a.cost - b.cost).abs() <= 1e-9 * a.cost.max(1.0));
    }

    #[test]
    fn all_zero_weights_flags_singular_and_keeps_init() {
        let camera = camera();
        let (pose, mut corrs) = synth::random_pnp_problem(&camera, 8, (1.0, 20.0), 77);
        for c in &mut corrs {
            c.weight = Vector2::zeros();
        }
        let result = refine_weighted(&corrs, &camera, &pose, &RefineConfig::default()).unwrap();
        assert!(result.singular);
        assert_eq!(result.iterations, 0);
        assert_eq!(result.cost, 0.0);
        assert_eq!(result.pose.translation(), pose.translation());
    }
}
