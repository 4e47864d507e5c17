//! Fused localization pipeline.
//!
//! Database construction cuts one submap per reference pose, filters it to
//! the points actually visible from that pose, and indexes a global
//! descriptor per submap. A query is answered by global retrieval of the
//! top-k submaps, two-stage correspondence search of each retrieved submap
//! against the query image, a ranked merge of the per-submap matches, and
//! robust weighted pose estimation. Every stage is deterministic for a fixed
//! seed, and the staged entry points compose to exactly the fused result.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::feature::oracle::OracleDescriptorModel;
use crate::feature::{Descriptors, FeatureError, ImageFeatures, PairwiseScorer};
use crate::geometry::{CameraModel, PointCloud, Pose};
use crate::matcher::{
    build_correspondences, merge_ranked, Correspondence, MatchError, MatchStats,
};
use crate::pnp::{
    refine_weighted, solve_ransac, PnpError, RansacConfig, RansacResult, RefineConfig,
    RefineResult,
};
use crate::raster::{ipr, IprConfig, RasterError};
use crate::submap::{build_submap, retrieve_topk, Submap, SubmapError, SubmapIndex};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("indexing: {0}")]
    Indexing(SubmapError),
    #[error("retrieval: {0}")]
    Retrieval(SubmapError),
    #[error("visibility filtering: {0}")]
    Visibility(#[from] RasterError),
    #[error("feature extraction: {0}")]
    Features(#[from] FeatureError),
    #[error("correspondence search: {0}")]
    Matching(#[from] MatchError),
    #[error("pose estimation: {0}")]
    Estimation(#[from] PnpError),
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineConfig {
    /// Patch side length in pixels.
    pub g: u32,
    /// Number of submaps retrieved per query.
    pub k: usize,
    /// Frustum cut radius for database submaps, meters.
    pub frustum_radius: f64,
    /// Per-submap point budget after downsampling.
    pub point_budget: usize,
    pub ipr: IprConfig,
    pub ransac: RansacConfig,
    pub refine: RefineConfig,
    /// Base seed; submap `i` downsamples with `seed + i`.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            g: 16,
            k: 4,
            frustum_radius: 10.0,
            point_budget: 65_536,
            ipr: IprConfig::default(),
            ransac: RansacConfig::default(),
            refine: RefineConfig::default(),
            seed: 0,
        }
    }
}

/// One indexed reference view: its visible points and their descriptors.
#[derive(Debug, Clone)]
pub struct DatabaseSubmap {
    pub submap: Submap,
    pub descriptors: Descriptors,
}

/// Searchable map: per-view submaps plus the global-descriptor index.
#[derive(Debug, Clone)]
pub struct Database {
    pub camera: CameraModel,
    pub submaps: Vec<DatabaseSubmap>,
    pub index: SubmapIndex,
}

/// Cuts, downsamples, and visibility-filters one submap per reference pose,
/// then indexes the global descriptor of each reference view. Submap ids are
/// the positions of their poses in `poses`.
pub fn build_database(
    cloud: &PointCloud,
    poses: &[Pose],
    camera: &CameraModel,
    model: &OracleDescriptorModel,
    config: &PipelineConfig,
) -> Result<Database, PipelineError> {
    let built: Vec<Result<(DatabaseSubmap, Vec<f32>), PipelineError>> = poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let id = i as u64;
            let raw = build_submap(
                id,
                cloud,
                pose,
                camera,
                config.frustum_radius,
                config.point_budget,
                config.seed.wrapping_add(id),
            )
            .map_err(PipelineError::Indexing)?;
            let visible = ipr(&raw.points, pose, camera, &config.ipr)?;
            if visible.kept.is_empty() {
                return Err(PipelineError::Indexing(SubmapError::EmptySubmap));
            }
            let points = raw.points.select(&visible.kept);
            let features = model.image_features(&points, pose, camera, config.g)?;
            let global = features.global_descriptor().to_vec();
            let descriptors = model.point_descriptors(&points);
            let submap = Submap { id, origin: *pose, points };
            Ok((DatabaseSubmap { submap, descriptors }, global))
        })
        .collect();

    let mut submaps = Vec::with_capacity(poses.len());
    let mut index = SubmapIndex::new(model.global_dim());
    for item in built {
        let (submap, global) = item?;
        index.push(submap.submap.id, global).map_err(PipelineError::Indexing)?;
        submaps.push(submap);
    }
    Ok(Database { camera: *camera, submaps, index })
}

/// Ids of the `k` database submaps nearest to the query's global descriptor.
pub fn retrieve(db: &Database, query_global: &[f32], k: usize) -> Result<Vec<u64>, PipelineError> {
    retrieve_topk(&db.index, query_global, k).map_err(PipelineError::Retrieval)
}

/// Runs the two-stage correspondence search of each retrieved submap against
/// the query image and merges the per-submap results by retrieval rank.
/// Submaps where every point classifies as not visible contribute nothing;
/// the merge errors only when that happens for all of them.
pub fn match_retrieved(
    db: &Database,
    retrieved: &[u64],
    query: &(impl ImageFeatures + Sync),
    scorer: &impl PairwiseScorer,
) -> Result<(Vec<Correspondence>, MatchStats), PipelineError> {
    let mut ranked = Vec::with_capacity(retrieved.len());
    let mut stats = MatchStats::default();
    for id in retrieved {
        let entry = db
            .submaps
            .iter()
            .find(|s| s.submap.id == *id)
            .expect("retrieval returns ids of indexed submaps");
        let indices: Vec<usize> = (0..entry.submap.points.len()).collect();
        match build_correspondences(
            entry.submap.points.points(),
            &indices,
            &entry.descriptors,
            query,
            scorer,
        ) {
            Ok((corrs, s)) => {
                stats.points_considered += s.points_considered;
                stats.points_matched += s.points_matched;
                stats.comparisons_total += s.comparisons_total;
                stats.max_comparisons_per_point =
                    stats.max_comparisons_per_point.max(s.max_comparisons_per_point);
                ranked.push(corrs);
            }
            Err(MatchError::NoCorrespondences) => {
                stats.points_considered += entry.submap.points.len();
                ranked.push(Vec::new());
            }
            Err(e) => return Err(PipelineError::Matching(e)),
        }
    }
    let merged = merge_ranked(&ranked);
    if merged.is_empty() {
        return Err(PipelineError::Matching(MatchError::NoCorrespondences));
    }
    Ok((merged, stats))
}

/// Robust estimation over merged correspondences: consensus search, then
/// weighted refinement on the consensus set from the consensus pose.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub ransac: RansacResult,
    pub refine: RefineResult,
}

pub fn estimate(
    corrs: &[Correspondence],
    camera: &CameraModel,
    ransac: &RansacConfig,
    refine: &RefineConfig,
) -> Result<EstimateReport, PipelineError> {
    let consensus = solve_ransac(corrs, camera, ransac)?;
    let inliers: Vec<Correspondence> = corrs
        .iter()
        .zip(&consensus.inliers)
        .filter_map(|(c, keep)| keep.then(|| c.clone()))
        .collect();
    let refined = refine_weighted(&inliers, camera, &consensus.pose, refine)?;
    Ok(EstimateReport { ransac: consensus, refine: refined })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub retrieval: Duration,
    pub matching: Duration,
    pub estimation: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.retrieval + self.matching + self.estimation
    }
}

/// Full localization answer for one query.
#[derive(Debug, Clone)]
pub struct LocalizeReport {
    /// Refined pose estimate (world to camera).
    pub pose: Pose,
    /// Retrieved submap ids, best first.
    pub retrieved: Vec<u64>,
    /// Number of merged correspondences fed to estimation.
    pub correspondences: usize,
    pub match_stats: MatchStats,
    pub ransac_inliers: usize,
    pub refine: RefineResult,
    pub timings: StageTimings,
}

/// Fused pipeline: compose the staged entry points and time each stage.
pub fn localize(
    db: &Database,
    query: &(impl ImageFeatures + Sync),
    scorer: &impl PairwiseScorer,
    config: &PipelineConfig,
) -> Result<LocalizeReport, PipelineError> {
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let retrieved = retrieve(db, query.global_descriptor(), config.k)?;
    timings.retrieval = t.elapsed();

    let t = Instant::now();
    let (merged, match_stats) = match_retrieved(db, &retrieved, query, scorer)?;
    timings.matching = t.elapsed();

    let t = Instant::now();
    let report = estimate(&merged, &db.camera, &config.ransac, &config.refine)?;
    timings.estimation = t.elapsed();

    Ok(LocalizeReport {
        pose: report.refine.pose,
        retrieved,
        correspondences: merged.len(),
        match_stats,
        ransac_inliers: report.ransac.inlier_count,
        refine: report.refine,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::NegL1Scorer;
    use crate::geometry::{rre_degrees, rte};
    use crate::matcher::comparison_budget;
    use crate::synth::{jitter_pose, room_scene, RoomSceneConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_setup() -> (crate::synth::Scene, OracleDescriptorModel, PipelineConfig) {
        let camera = CameraModel::simple(64.0, 128, 128).unwrap();
        let scene_cfg = RoomSceneConfig {
            pose_count: 8,
            surface_density: 40.0,
            min_covered_pixels: 900,
            ..RoomSceneConfig::default()
        };
        let scene = room_scene(&camera, &scene_cfg, 401);
        let model = OracleDescriptorModel::with_dims(32, 64, 77);
        let config = PipelineConfig { point_budget: 6000, ..PipelineConfig::default() };
        (scene, model, config)
    }

    fn scorer() -> NegL1Scorer {
        NegL1Scorer { scale: 1.0, null_logit: -4.0 }
    }

    #[test]
    fn database_build_is_deterministic_and_within_budget() {
        let (scene, model, config) = small_setup();
        let a = build_database(&scene.cloud, &scene.poses, &scene.camera, &model, &config)
            .unwrap();
        let b = build_database(&scene.cloud, &scene.poses, &scene.camera, &model, &config)
            .unwrap();
        assert_eq!(a.index, b.index);
        assert_eq!(a.submaps.len(), scene.poses.len());
        for (i, s) in a.submaps.iter().enumerate() {
            assert_eq!(s.submap.id, i as u64);
            assert!(!s.submap.points.is_empty());
            assert!(s.submap.points.len() <= config.point_budget);
            assert_eq!(s.descriptors.len(), s.submap.points.len());
            assert_eq!(
                a.submaps[i].submap.points,
                b.submaps[i].submap.points,
                "submap {i} must rebuild identically"
            );
        }
    }

    #[test]
    fn localize_recovers_a_query_near_a_reference() {
        let (scene, model, config) = small_setup();
        let db = build_database(&scene.cloud, &scene.poses, &scene.camera, &model, &config)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut hits = 0usize;
        for (i, reference) in scene.poses.iter().enumerate().take(4) {
            let query_pose = jitter_pose(reference, 0.05, 0.5f64.to_radians(), &mut rng);
            let query = model
                .image_features(&scene.cloud, &query_pose, &scene.camera, config.g)
                .unwrap();
            let report = localize(&db, &query, &scorer(), &config).unwrap();
            assert!(
                report.retrieved.contains(&(i as u64)),
                "query {i}: source reference missing from {:?}",
                report.retrieved
            );
            let t_err = rte(&report.pose, &query_pose);
            let r_err = rre_degrees(&report.pose, &query_pose);
            if t_err < 0.1 && r_err < 1.0 {
                hits += 1;
            }
            let budget = comparison_budget(query.grid());
            assert!(report.match_stats.max_comparisons_per_point <= budget);
            assert!(report.correspondences >= report.ransac_inliers);
        }
        assert!(hits >= 3, "only {hits}/4 queries localized within (0.1 m, 1 deg)");
    }

    #[test]
    fn staged_stages_compose_to_the_fused_answer() {
        let (scene, model, config) = small_setup();
        let db = build_database(&scene.cloud, &scene.poses, &scene.camera, &model, &config)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let query_pose = jitter_pose(&scene.poses[2], 0.03, 0.3f64.to_radians(), &mut rng);
        let query = model
            .image_features(&scene.cloud, &query_pose, &scene.camera, config.g)
            .unwrap();

        let fused = localize(&db, &query, &scorer(), &config).unwrap();

        let ids = retrieve(&db, query.global_descriptor(), config.k).unwrap();
        let (merged, _) = match_retrieved(&db, &ids, &query, &scorer()).unwrap();
        let est = estimate(&merged, &db.camera, &config.ransac, &config.refine).unwrap();

        assert_eq!(ids, fused.retrieved);
        assert_eq!(merged.len(), fused.correspondences);
        assert_eq!(est.refine.pose.rotation(), fused.pose.rotation());
        assert_eq!(est.refine.pose.translation(), fused.pose.translation());
        assert_eq!(est.refine.cost, fused.refine.cost);
    }

    #[test]
    fn retrieval_stage_tags_index_errors() {
        let (scene, model, config) = small_setup();
        let db = build_database(&scene.cloud, &scene.poses[..2], &scene.camera, &model, &config)
            .unwrap();
        let query = model
            .image_features(&scene.cloud, &scene.poses[0], &scene.camera, config.g)
            .unwrap();
        match retrieve(&db, query.global_descriptor(), 5) {
            Err(PipelineError::Retrieval(SubmapError::KTooLarge { k: 5, available: 2 })) => {}
            other => panic!("expected a retrieval KTooLarge error, got {other:?}"),
        }
    }
}
