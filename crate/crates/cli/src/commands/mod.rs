pub mod indexing;
pub mod ipr;
pub mod query;
pub mod report;
pub mod synth;

use pointpix_core::feature::oracle::OracleDescriptorModel;
use pointpix_core::feature::{NegL1Scorer, PairwiseScorer, PatchClassifier};
use pointpix_core::io::load_mlp_weights;
use pointpix_core::pipeline::Database;

use crate::bundle::{load_database, SceneBundle};
use crate::config::{CliError, RunConfig};

/// Either the closed-form scorer or a network loaded from a weights file.
pub enum AnyScorer {
    Direct(NegL1Scorer),
    Learned(PatchClassifier),
}

impl PairwiseScorer for AnyScorer {
    fn score(&self, point_desc: &[f32], patch_desc: &[f32]) -> f64 {
        match self {
            AnyScorer::Direct(s) => s.score(point_desc, patch_desc),
            AnyScorer::Learned(s) => s.score(point_desc, patch_desc),
        }
    }

    fn null_logit(&self) -> f64 {
        match self {
            AnyScorer::Direct(s) => s.null_logit(),
            AnyScorer::Learned(s) => s.null_logit(),
        }
    }
}

pub fn make_scorer(cfg: &RunConfig) -> Result<AnyScorer, CliError> {
    Ok(match &cfg.weights {
        Some(path) => AnyScorer::Learned(PatchClassifier {
            pairwise: load_mlp_weights(path)?,
            null_logit: cfg.scorer_null_logit,
        }),
        None => AnyScorer::Direct(NegL1Scorer {
            scale: cfg.scorer_scale,
            null_logit: cfg.scorer_null_logit,
        }),
    })
}

pub fn descriptor_model(cfg: &RunConfig) -> OracleDescriptorModel {
    OracleDescriptorModel::with_dims(cfg.local_dim, cfg.global_dim, cfg.model_seed)
}

/// Scene plus reassembled database: what every query-side subcommand needs.
pub fn load_world(cfg: &RunConfig) -> Result<(SceneBundle, Database), CliError> {
    let bundle = SceneBundle::load(cfg)?;
    let db = load_database(&cfg.index_dir, bundle.camera)?;
    Ok((bundle, db))
}

pub fn check_query_index(bundle: &SceneBundle, idx: usize) -> Result<(), CliError> {
    if idx >= bundle.queries.len() {
        return Err(CliError::Config(format!(
            "query {idx} out of range (scene has {} queries)",
            bundle.queries.len()
        )));
    }
    Ok(())
}
