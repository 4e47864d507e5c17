//! Hierarchical 3D-point-to-pixel correspondence search.
//!
//! Each 3D point is first classified against every image patch plus an
//! explicit "not visible" option, then compared against the pixel features of
//! the winning patch only. The per-point work is therefore
//! `num_patches + 1 + g*g` descriptor comparisons instead of one comparison
//! per pixel, and a counter enforces that bound.

use crate::feature::{l2_distance_sq, ImageFeatures, PairwiseScorer};
use nalgebra::{Point3, Vector2};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("every point was classified as not visible")]
    NoCorrespondences,
    #[error("a point used {used} comparisons, over the budget of {budget}")]
    BudgetExceeded { used: u64, budget: u64 },
}

/// One matched 3D-2D pair. `pixel` is the center of the matched pixel,
/// `weight` scales the two reprojection residual components, and `score` is
/// the classification confidence the match was produced with.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub point_index: usize,
    pub world: Point3<f64>,
    pub pixel: Vector2<f64>,
    pub weight: Vector2<f64>,
    pub score: f64,
}

/// Hard cap on descriptor comparisons per point: one per patch, one for the
/// "not visible" option, one per pixel of the selected patch.
pub fn comparison_budget(grid: &crate::feature::PatchGrid) -> u64 {
    grid.num_patches() as u64 + 1 + grid.pixels_per_patch() as u64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    /// 0 means "not visible", otherwise the patch class.
    pub class: u32,
    /// Softmax probability of the winning class.
    pub confidence: f64,
    pub comparisons: u64,
}

/// Scores the point against every patch descriptor and the null option,
/// normalizes with a softmax, and picks the argmax (ties go to the lower
/// class id, so the null option wins a perfect tie).
pub fn classify_point(
    point_desc: &[f32],
    features: &impl ImageFeatures,
    scorer: &impl PairwiseScorer,
) -> Classification {
    let n = features.grid().num_patches();
    let mut logits = Vec::with_capacity(n as usize + 1);
    logits.push(scorer.null_logit());
    for class in 1..=n {
        logits.push(scorer.score(point_desc, features.patch_descriptor(class)));
    }
    let mut best = 0usize;
    for (i, logit) in logits.iter().enumerate() {
        if *logit > logits[best] {
            best = i;
        }
    }
    let shift = logits[best];
    let total: f64 = logits.iter().map(|l| (l - shift).exp()).sum();
    Classification {
        class: best as u32,
        confidence: 1.0 / total,
        comparisons: n as u64 + 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelMatch {
    /// Row-major pixel offset within the patch.
    pub j: u32,
    /// Center of the matched pixel in image coordinates.
    pub pixel: Vector2<f64>,
    pub distance_sq: f64,
    pub comparisons: u64,
}

/// Finds the pixel of `class` whose feature is nearest to the point
/// descriptor (squared Euclidean; ties go to the lower pixel offset).
pub fn match_pixel(
    point_desc: &[f32],
    features: &impl ImageFeatures,
    class: u32,
) -> PixelMatch {
    let grid = features.grid();
    let per_patch = grid.pixels_per_patch();
    let mut best_j = 0u32;
    let mut best_d = f64::INFINITY;
    for j in 0..per_patch {
        let d = l2_distance_sq(point_desc, features.pixel_feature(class, j));
        if d < best_d {
            best_d = d;
            best_j = j;
        }
    }
    PixelMatch {
        j: best_j,
        pixel: grid.pixel_center(class, best_j),
        distance_sq: best_d,
        comparisons: per_patch as u64,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MatchStats {
    pub points_considered: usize,
    pub points_matched: usize,
    pub comparisons_total: u64,
    pub max_comparisons_per_point: u64,
}

/// Runs the two-stage search for every listed point. `point_descs[i]` must be
/// the descriptor of `points[i]`, and `point_indices[i]` is the caller's
/// stable id for it (kept so merged results can refer back to source clouds).
pub fn build_correspondences(
    points: &[Point3<f64>],
    point_indices: &[usize],
    point_descs: &crate::feature::Descriptors,
    features: &(impl ImageFeatures + Sync),
    scorer: &impl PairwiseScorer,
) -> Result<(Vec<Correspondence>, MatchStats), MatchError> {
    assert_eq!(points.len(), point_indices.len());
    assert_eq!(points.len(), point_descs.len());
    let budget = comparison_budget(features.grid());
    let per_point: Vec<(Option<Correspondence>, u64)> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let desc = point_descs.row(i);
            let cls = classify_point(desc, features, scorer);
            if cls.class == 0 {
                return (None, cls.comparisons);
            }
            let px = match_pixel(desc, features, cls.class);
            let c = Correspondence {
                point_index: point_indices[i],
                world: points[i],
                pixel: px.pixel,
                weight: Vector2::new(cls.confidence, cls.confidence),
                score: cls.confidence,
            };
            (Some(c), cls.comparisons + px.comparisons)
        })
        .collect();

    let mut stats = MatchStats { points_considered: points.len(), ..Default::default() };
    let mut out = Vec::new();
    for (corr, used) in per_point {
        stats.comparisons_total += used;
        stats.max_comparisons_per_point = stats.max_comparisons_per_point.max(used);
        if used > budget {
            return Err(MatchError::BudgetExceeded { used, budget });
        }
        if let Some(c) = corr {
            out.push(c);
        }
    }
    stats.points_matched = out.len();
    if out.is_empty() {
        return Err(MatchError::NoCorrespondences);
    }
    Ok((out, stats))
}

/// Merges per-submap correspondence lists ordered by retrieval rank. When the
/// same world point appears in several submaps, the earliest rank wins;
/// within one rank the earlier list entry wins.
pub fn merge_ranked(ranked: &[Vec<Correspondence>]) -> Vec<Correspondence> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for set in ranked {
        for c in set {
            let key = (c.world.x.to_bits(), c.world.y.to_bits(), c.world.z.to_bits());
            if seen.insert(key) {
                out.push(c.clone());
            }
        }
    }
    out
}
