//! Evaluation metrics: localization recall at paired pose thresholds,
//! translation/rotation error summaries, and retrieval recall@k.

use thiserror::Error;

use crate::geometry::{rre_degrees, rte, Pose};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metric computed over an empty result set")]
    EmptyResults,
}

/// One localized query: the estimate produced by the pipeline and the pose it
/// should have produced.
#[derive(Debug, Clone)]
pub struct LocalizationResult {
    pub query_id: u64,
    pub estimate: Pose,
    pub ground_truth: Pose,
}

impl LocalizationResult {
    pub fn rte(&self) -> f64 {
        rte(&self.estimate, &self.ground_truth)
    }

    pub fn rre_degrees(&self) -> f64 {
        rre_degrees(&self.estimate, &self.ground_truth)
    }
}

/// The standard evaluation thresholds: (meters, degrees) pairs, tight to
/// loose.
pub const RECALL_THRESHOLDS: [(f64, f64); 3] = [(0.1, 1.0), (0.25, 2.0), (1.0, 5.0)];

/// Fraction of queries whose translation AND rotation errors are both within
/// the threshold (inclusive), one fraction per threshold pair.
pub fn localization_recall(
    results: &[LocalizationResult],
    thresholds: &[(f64, f64)],
) -> Result<Vec<f64>, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let n = results.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&(t_m, t_deg)| {
            let hits = results
                .iter()
                .filter(|r| r.rte() <= t_m && r.rre_degrees() <= t_deg)
                .count();
            hits as f64 / n
        })
        .collect())
}

/// Mean translation error over every result, meters.
pub fn mean_rte(results: &[LocalizationResult]) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    Ok(results.iter().map(|r| r.rte()).sum::<f64>() / results.len() as f64)
}

/// Mean rotation error over every result, degrees.
pub fn mean_rre_degrees(results: &[LocalizationResult]) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    Ok(results.iter().map(|r| r.rre_degrees()).sum::<f64>() / results.len() as f64)
}

/// Mean (translation, rotation) errors restricted to queries localized within
/// the given threshold pair; `None` when no query qualifies.
pub fn localized_mean_errors(
    results: &[LocalizationResult],
    threshold: (f64, f64),
) -> Option<(f64, f64)> {
    let hits: Vec<&LocalizationResult> = results
        .iter()
        .filter(|r| r.rte() <= threshold.0 && r.rre_degrees() <= threshold.1)
        .collect();
    if hits.is_empty() {
        return None;
    }
    let n = hits.len() as f64;
    Some((
        hits.iter().map(|r| r.rte()).sum::<f64>() / n,
        hits.iter().map(|r| r.rre_degrees()).sum::<f64>() / n,
    ))
}

/// One retrieval query: ground-truth query pose and the reference poses of
/// the returned candidates, best rank first.
#[derive(Debug, Clone)]
pub struct RetrievalCase {
    pub query: Pose,
    pub candidates: Vec<Pose>,
}

/// Fraction of queries with at least one of the top-k candidates within
/// `rte_threshold` meters of the query pose (strictly below).
pub fn retrieval_recall_at_k(
    cases: &[RetrievalCase],
    k: usize,
    rte_threshold: f64,
) -> Result<f64, MetricsError> {
    if cases.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let hits = cases
        .iter()
        .filter(|case| {
            case.candidates
                .iter()
                .take(k)
                .any(|cand| rte(&case.query, cand) < rte_threshold)
        })
        .count();
    Ok(hits as f64 / cases.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    use crate::geometry::se3;

    /// Estimate offset from an identity ground truth by `shift` meters along
    /// x and `angle_deg` degrees about z.
    fn result_with_errors(id: u64, shift: f64, angle_deg: f64) -> LocalizationResult {
        let rotation = se3::exp_so3(&(Vector3::z() * angle_deg.to_radians()));
        LocalizationResult {
            query_id: id,
            estimate: Pose::new_unchecked(rotation, Vector3::new(shift, 0.0, 0.0)),
            ground_truth: Pose::identity(),
        }
    }

    #[test]
    fn exact_result_counts_at_every_threshold() {
        let results = vec![result_with_errors(0, 0.0, 0.0)];
        let recalls = localization_recall(&results, &RECALL_THRESHOLDS).unwrap();
        assert_eq!(recalls, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn threshold_straddle_passes_only_the_loose_pair() {
        let results = vec![result_with_errors(0, 0.5, 0.5)];
        let recalls = localization_recall(&results, &RECALL_THRESHOLDS).unwrap();
        assert_eq!(recalls, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn translation_boundary_is_inclusive() {
        // 0.25 is an exact binary value, so the comparison is deterministic.
        let results = vec![result_with_errors(0, 0.25, 0.0)];
        let recalls = localization_recall(&results, &RECALL_THRESHOLDS).unwrap();
        assert_eq!(recalls, vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn both_conditions_must_hold() {
        // Tiny translation error but a rotation outside every threshold.
        let results = vec![result_with_errors(0, 0.01, 10.0)];
        let recalls = localization_recall(&results, &RECALL_THRESHOLDS).unwrap();
        assert_eq!(recalls, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn hand_fixture_recalls_match_hand_counts() {
        let fixture = [
            (0.0, 0.0),
            (0.05, 0.5),
            (0.09, 0.9),
            (0.2, 0.5),
            (0.05, 1.5),
            (0.24, 1.9),
            (0.5, 0.5),
            (0.3, 4.0),
            (0.9, 4.9),
            (2.0, 0.1),
        ];
        let results: Vec<LocalizationResult> = fixture
            .iter()
            .enumerate()
            .map(|(i, &(s, a))| result_with_errors(i as u64, s, a))
            .collect();
        let recalls = localization_recall(&results, &RECALL_THRESHOLDS).unwrap();
        assert_eq!(recalls, vec![0.3, 0.6, 0.9]);
    }

    #[test]
    fn recall_is_monotone_in_threshold_scale() {
        let results: Vec<LocalizationResult> = (0..40)
            .map(|i| result_with_errors(i, 0.03 * i as f64, 0.2 * i as f64))
            .collect();
        let mut previous = vec![0.0; 3];
        for step in 1..=30 {
            let scale = step as f64 / 10.0;
            let scaled: Vec<(f64, f64)> =
                RECALL_THRESHOLDS.iter().map(|&(m, d)| (m * scale, d * scale)).collect();
            let recalls = localization_recall(&results, &scaled).unwrap();
            for (now, before) in recalls.iter().zip(&previous) {
                assert!(now >= before, "recall decreased when thresholds grew");
            }
            previous = recalls;
        }
    }

    #[test]
    fn error_means_cover_all_and_localized_subsets() {
        let results =
            vec![result_with_errors(0, 0.1, 0.0), result_with_errors(1, 0.3, 0.0)];
        assert!((mean_rte(&results).unwrap() - 0.2).abs() < 1e-15);
        assert!(mean_rre_degrees(&results).unwrap() < 1e-12);
        let (t, r) = localized_mean_errors(&results, (0.25, 2.0)).unwrap();
        assert!((t - 0.1).abs() < 1e-15);
        assert!(r < 1e-12);
        assert!(localized_mean_errors(&results, (0.01, 0.01)).is_none());
    }

    #[test]
    fn retrieval_counts_depend_on_rank_and_k() {
        let near = Pose::new_unchecked(
            nalgebra::Matrix3::identity(),
            Vector3::new(0.05, 0.0, 0.0),
        );
        let far = |d: f64| {
            Pose::new_unchecked(nalgebra::Matrix3::identity(), Vector3::new(d, 0.0, 0.0))
        };
        let rank1 = RetrievalCase {
            query: Pose::identity(),
            candidates: vec![near.clone(), far(5.0), far(6.0), far(7.0), far(8.0)],
        };
        assert_eq!(retrieval_recall_at_k(&[rank1.clone()], 1, 0.1).unwrap(), 1.0);

        let rank5 = RetrievalCase {
            query: Pose::identity(),
            candidates: vec![far(5.0), far(6.0), far(7.0), far(8.0), near],
        };
        assert_eq!(retrieval_recall_at_k(&[rank5.clone()], 4, 0.1).unwrap(), 0.0);
        assert_eq!(retrieval_recall_at_k(&[rank5.clone()], 5, 0.1).unwrap(), 1.0);

        for k in 1..=5 {
            let a = retrieval_recall_at_k(&[rank1.clone(), rank5.clone()], k, 0.1).unwrap();
            let b = retrieval_recall_at_k(&[rank1.clone(), rank5.clone()], k + 1, 0.1).unwrap();
            assert!(b >= a, "recall@{} {b} dropped below recall@{} {a}", k + 1, k);
        }
    }

    #[test]
    fn retrieval_threshold_is_strict() {
        let boundary = RetrievalCase {
            query: Pose::identity(),
            candidates: vec![Pose::new_unchecked(
                nalgebra::Matrix3::identity(),
                Vector3::new(0.1, 0.0, 0.0),
            )],
        };
        // RTE exactly 0.1 is not "lower than" the 0.1 threshold.
        assert_eq!(retrieval_recall_at_k(&[boundary], 1, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn empty_inputs_error() {
        assert!(matches!(
            localization_recall(&[], &RECALL_THRESHOLDS),
            Err(MetricsError::EmptyResults)
        ));
        assert!(matches!(mean_rte(&[]), Err(MetricsError::EmptyResults)));
        assert!(matches!(mean_rre_degrees(&[]), Err(MetricsError::EmptyResults)));
        assert!(matches!(retrieval_recall_at_k(&[], 4, 0.1), Err(MetricsError::EmptyResults)));
    }
}
