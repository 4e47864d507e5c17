//! `evaluate` and `bench`: aggregate accuracy over a query set and timing
//! over repeated runs.

use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;

use pointpix_core::io::{format_pose_line, load_poses, save_poses, FormatError};
use pointpix_core::metrics::{
    localization_recall, mean_rre_degrees, mean_rte, LocalizationResult, MetricsError,
};
use pointpix_core::pipeline::{self, LocalizeReport};

use crate::commands::{descriptor_model, load_world, make_scorer};
use crate::config::{CliError, RunConfig};

fn print_summary(cfg: &RunConfig, results: &[LocalizationResult], total: usize) -> Result<(), CliError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults.into());
    }
    let recalls = localization_recall(results, &cfg.thresholds)?;
    let fraction = results.len() as f64 / total as f64;
    println!("queries={total}");
    println!("failed={}", total - results.len());
    for ((m, d), recall) in cfg.thresholds.iter().zip(&recalls) {
        println!("recall@({m}m,{d}deg)={:.4}", recall * fraction);
    }
    println!("mean_rte_m={:.6}", mean_rte(results)?);
    println!("mean_rre_deg={:.6}", mean_rre_degrees(results)?);
    Ok(())
}

/// Compares estimate files against ground truth without running the pipeline.
pub fn evaluate_files(
    cfg: &RunConfig,
    estimates: &Path,
    gt: Option<&Path>,
) -> Result<(), CliError> {
    let est = load_poses(estimates)?;
    let truth = match gt {
        Some(path) => load_poses(path)?,
        None => load_poses(cfg.scene_dir.join(crate::bundle::QUERIES_FILE))?,
    };
    if est.len() != truth.len() {
        return Err(FormatError::Malformed(format!(
            "{} estimates against {} ground-truth poses",
            est.len(),
            truth.len()
        ))
        .into());
    }
    let results: Vec<LocalizationResult> = est
        .into_iter()
        .zip(truth)
        .enumerate()
        .map(|(i, (estimate, ground_truth))| LocalizationResult {
            query_id: i as u64,
            estimate,
            ground_truth,
        })
        .collect();
    print_summary(cfg, &results, results.len())
}

/// Runs the full pipeline over the scene's queries with a worker pool and
/// aggregates per query id.
pub fn evaluate_pipeline(
    cfg: &RunConfig,
    limit: Option<usize>,
    estimates_out: Option<&Path>,
) -> Result<(), CliError> {
    let (bundle, db) = load_world(cfg)?;
    let model = descriptor_model(cfg);
    let scorer = make_scorer(cfg)?;
    let pipeline_cfg = cfg.pipeline_config();
    let count = limit.unwrap_or(bundle.queries.len()).min(bundle.queries.len());

    let mut outcomes: Vec<(u64, Result<LocalizeReport, String>)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let outcome = model
                .image_features(&bundle.cloud, &bundle.queries[i], &bundle.camera, cfg.g)
                .map_err(|e| e.to_string())
                .and_then(|query| {
                    pipeline::localize(&db, &query, &scorer, &pipeline_cfg)
                        .map_err(|e| e.to_string())
                });
            (i as u64, outcome)
        })
        .collect();
    outcomes.sort_by_key(|(id, _)| *id);

    let mut results = Vec::new();
    let mut estimated = Vec::new();
    for (id, outcome) in &outcomes {
        match outcome {
            Ok(report) => {
                results.push(LocalizationResult {
                    query_id: *id,
                    estimate: report.pose,
                    ground_truth: bundle.queries[*id as usize],
                });
                estimated.push(report.pose);
            }
            Err(msg) => eprintln!("query {id}: {msg}"),
        }
    }
    if let Some(path) = estimates_out {
        save_poses(path, &estimated)?;
    }
    print_summary(cfg, &results, count)
}

/// Repeats the fused pipeline on one query and reports per-stage timing.
pub fn bench(cfg: &RunConfig, query_idx: usize, repeats: usize) -> Result<(), CliError> {
    if repeats == 0 {
        return Err(CliError::Config("bench needs at least one repeat".into()));
    }
    let (bundle, db) = load_world(cfg)?;
    crate::commands::check_query_index(&bundle, query_idx)?;
    let model = descriptor_model(cfg);
    let scorer = make_scorer(cfg)?;
    let pipeline_cfg = cfg.pipeline_config();
    let query =
        model.image_features(&bundle.cloud, &bundle.queries[query_idx], &bundle.camera, cfg.g)?;

    let mut reports = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        reports.push(pipeline::localize(&db, &query, &scorer, &pipeline_cfg)?);
    }
    let pose = reports[0].pose;
    for (i, r) in reports.iter().enumerate().skip(1) {
        if r.pose.rotation() != pose.rotation() || r.pose.translation() != pose.translation() {
            return Err(CliError::Algorithm(format!(
                "repeat {i} produced a different pose:\n  {}\n  {}",
                format_pose_line(&pose),
                format_pose_line(&r.pose)
            )));
        }
    }

    println!("{}", format_pose_line(&pose));
    println!("repeats={repeats}");
    let stages: [(&str, fn(&LocalizeReport) -> Duration); 4] = [
        ("retrieval", |r| r.timings.retrieval),
        ("matching", |r| r.timings.matching),
        ("estimation", |r| r.timings.estimation),
        ("total", |r| r.timings.total()),
    ];
    for (name, pick) in stages {
        let ms: Vec<f64> = reports.iter().map(|r| pick(r).as_secs_f64() * 1e3).collect();
        let mean = ms.iter().sum::<f64>() / ms.len() as f64;
        let min = ms.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = ms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!("stage={name} mean_ms={mean:.3} min_ms={min:.3} max_ms={max:.3}");
    }
    Ok(())
}
