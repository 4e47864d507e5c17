//! `retrieve`, `localize`, and `pnp`: query-side stages. `localize` runs
//! retrieval, matching, and estimation in one process but accepts files in
//! place of the earlier stages, so a pipeline split across processes
//! produces the identical pose.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Args;

use pointpix_core::feature::oracle::OracleImageFeatures;
use pointpix_core::feature::ImageFeatures;
use pointpix_core::io::{
    format_pose_line, load_correspondences, save_correspondences, FormatError,
};
use pointpix_core::matcher::{comparison_budget, Correspondence, MatchStats};
use pointpix_core::pipeline::{self, EstimateReport, StageTimings};
use pointpix_core::pnp::{kl_loss, KlConfig};

use crate::bundle::SceneBundle;
use crate::commands::{check_query_index, descriptor_model, load_world, make_scorer};
use crate::config::{CliError, RunConfig};

pub fn retrieve(cfg: &RunConfig, query_idx: usize, out: Option<&Path>) -> Result<(), CliError> {
    let (bundle, db) = load_world(cfg)?;
    check_query_index(&bundle, query_idx)?;
    let model = descriptor_model(cfg);
    let query = model.image_features(
        &bundle.cloud,
        &bundle.queries[query_idx],
        &bundle.camera,
        cfg.g,
    )?;
    let ids = pipeline::retrieve(&db, query.global_descriptor(), cfg.k)?;
    let mut text = String::new();
    for id in &ids {
        println!("{id}");
        text.push_str(&format!("{id}\n"));
    }
    if let Some(path) = out {
        fs::write(path, text)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    /// Query pose index within the scene.
    #[arg(long, default_value_t = 0)]
    pub query: usize,
    /// Write the estimated pose here as well as to stdout.
    #[arg(long)]
    pub pose_out: Option<PathBuf>,
    /// Read retrieved submap ids from this file instead of running retrieval.
    #[arg(long)]
    pub retrieved: Option<PathBuf>,
    /// Write merged correspondences here for a separate estimation run.
    #[arg(long)]
    pub matches_out: Option<PathBuf>,
    /// Stop after matching; no pose is estimated.
    #[arg(long)]
    pub skip_estimation: bool,
    /// Print per-stage statistics.
    #[arg(long)]
    pub report: bool,
}

fn read_retrieved_ids(path: &Path) -> Result<Vec<u64>, CliError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<u64>()
                .map_err(|_| FormatError::Malformed(format!("not a submap id: {l:?}")).into())
        })
        .collect()
}

fn print_match_report(stats: &MatchStats, budget: u64, correspondences: usize) {
    println!("correspondences={correspondences}");
    println!("points_considered={}", stats.points_considered);
    println!("points_matched={}", stats.points_matched);
    println!("comparisons_max={}", stats.max_comparisons_per_point);
    println!("comparisons_budget={budget}");
}

fn print_timings(timings: &StageTimings) {
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    println!("retrieval_ms={:.3}", ms(timings.retrieval));
    println!("matching_ms={:.3}", ms(timings.matching));
    println!("estimation_ms={:.3}", ms(timings.estimation));
    println!("total_ms={:.3}", ms(timings.total()));
}

fn emit_pose(pose_line: &str, pose_out: Option<&Path>) -> Result<(), CliError> {
    println!("{pose_line}");
    if let Some(path) = pose_out {
        fs::write(path, format!("{pose_line}\n"))?;
    }
    Ok(())
}

pub fn localize(cfg: &RunConfig, args: &LocalizeArgs) -> Result<(), CliError> {
    let (bundle, db) = load_world(cfg)?;
    check_query_index(&bundle, args.query)?;
    let model = descriptor_model(cfg);
    let scorer = make_scorer(cfg)?;
    let query: OracleImageFeatures = model.image_features(
        &bundle.cloud,
        &bundle.queries[args.query],
        &bundle.camera,
        cfg.g,
    )?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let retrieved = match &args.retrieved {
        Some(path) => read_retrieved_ids(path)?,
        None => pipeline::retrieve(&db, query.global_descriptor(), cfg.k)?,
    };
    timings.retrieval = t.elapsed();

    let t = Instant::now();
    let (merged, stats) = pipeline::match_retrieved(&db, &retrieved, &query, &scorer)?;
    timings.matching = t.elapsed();
    if let Some(path) = &args.matches_out {
        save_correspondences(path, &merged)?;
    }

    if args.skip_estimation {
        if args.report {
            let ids: Vec<String> = retrieved.iter().map(|id| id.to_string()).collect();
            println!("retrieved={}", ids.join(","));
            print_match_report(&stats, comparison_budget(query.grid()), merged.len());
            print_timings(&timings);
        }
        return Ok(());
    }

    let t = Instant::now();
    let est = pipeline::estimate(&merged, &db.camera, &cfg.ransac_config(), &cfg.pipeline_config().refine)?;
    timings.estimation = t.elapsed();

    emit_pose(&format_pose_line(&est.refine.pose), args.pose_out.as_deref())?;
    if args.report {
        let ids: Vec<String> = retrieved.iter().map(|id| id.to_string()).collect();
        println!("retrieved={}", ids.join(","));
        print_match_report(&stats, comparison_budget(query.grid()), merged.len());
        print_estimate_report(&est);
        print_timings(&timings);
    }
    Ok(())
}

fn print_estimate_report(est: &EstimateReport) {
    println!("consensus={}", est.ransac.inlier_count);
    println!("refine_cost={:e}", est.refine.cost);
    println!("refine_iterations={}", est.refine.iterations);
    println!("refine_gradient_norm={:e}", est.refine.gradient_norm);
}

pub fn pnp(
    cfg: &RunConfig,
    matches: &Path,
    pose_out: Option<&Path>,
    report: bool,
) -> Result<(), CliError> {
    let bundle = SceneBundle::load(cfg)?;
    let corrs = load_correspondences(matches)?;
    let est = pipeline::estimate(
        &corrs,
        &bundle.camera,
        &cfg.ransac_config(),
        &cfg.pipeline_config().refine,
    )?;
    emit_pose(&format_pose_line(&est.refine.pose), pose_out)?;
    if report {
        print_estimate_report(&est);
        let inliers: Vec<Correspondence> = corrs
            .iter()
            .zip(&est.ransac.inliers)
            .filter_map(|(c, keep)| keep.then(|| c.clone()))
            .collect();
        let kl = kl_loss(
            &inliers,
            &bundle.camera,
            &est.refine.pose,
            &KlConfig { seed: cfg.seed, ..KlConfig::default() },
        )?;
        println!("kl_loss={:.6}", kl.loss);
        println!("kl_se={:.6}", kl.standard_error);
    }
    Ok(())
}
