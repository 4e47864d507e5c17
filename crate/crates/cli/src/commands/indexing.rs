//! `partition` and `index`: map construction as two file-backed stages.
//!
//! `partition` cuts and downsamples one raw submap per reference view.
//! `index` applies the visibility filter to each raw submap at its reference
//! pose, extracts per-point and global descriptors from the survivors, and
//! writes the searchable index. Splitting here mirrors the fused in-memory
//! database build exactly: both operate on the same f32-exact coordinates,
//! so the staged database is bit-identical to the fused one.

use std::fs;
use std::path::Path;

use pointpix_core::feature::ImageFeatures;
use pointpix_core::io::{
    load_point_cloud, save_descriptors, save_index, save_point_cloud, save_poses,
};
use pointpix_core::raster::ipr;
use pointpix_core::submap::{build_submap, SubmapError, SubmapIndex};

use crate::bundle::{
    raw_submap_path, submap_cloud_path, submap_desc_path, SceneBundle, INDEX_FILE, ORIGINS_FILE,
};
use crate::commands::descriptor_model;
use crate::config::{CliError, RunConfig};

pub fn partition(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let bundle = SceneBundle::load(cfg)?;
    fs::create_dir_all(out_dir)?;
    for (i, pose) in bundle.refs.iter().enumerate() {
        let id = i as u64;
        let submap = build_submap(
            id,
            &bundle.cloud,
            pose,
            &bundle.camera,
            cfg.radius,
            cfg.m,
            cfg.seed.wrapping_add(id),
        )?;
        save_point_cloud(raw_submap_path(out_dir, id), &submap.points)?;
    }
    println!("submaps={}", bundle.refs.len());
    println!("out_dir={}", out_dir.display());
    Ok(())
}

pub fn index(cfg: &RunConfig, submaps_dir: &Path) -> Result<(), CliError> {
    let bundle = SceneBundle::load(cfg)?;
    let model = descriptor_model(cfg);
    fs::create_dir_all(&cfg.index_dir)?;

    let mut index = SubmapIndex::new(model.global_dim());
    index.metadata.point_budget = cfg.m as u32;
    index.metadata.frustum_radius = cfg.radius;
    let mut total_points = 0usize;
    for (i, pose) in bundle.refs.iter().enumerate() {
        let id = i as u64;
        let raw = load_point_cloud(raw_submap_path(submaps_dir, id))?;
        let visible = ipr(&raw, pose, &bundle.camera, &cfg.ipr_config())?;
        if visible.kept.is_empty() {
            return Err(SubmapError::EmptySubmap.into());
        }
        let points = raw.select(&visible.kept);
        let features = model.image_features(&points, pose, &bundle.camera, cfg.g)?;
        index.push(id, features.global_descriptor().to_vec())?;
        let descriptors = model.point_descriptors(&points);
        total_points += points.len();
        save_point_cloud(submap_cloud_path(&cfg.index_dir, id), &points)?;
        save_descriptors(submap_desc_path(&cfg.index_dir, id), &descriptors)?;
    }
    save_index(cfg.index_dir.join(INDEX_FILE), &index)?;
    save_poses(cfg.index_dir.join(ORIGINS_FILE), &bundle.refs)?;

    println!("indexed={}", bundle.refs.len());
    println!("points={total_points}");
    println!("index_dir={}", cfg.index_dir.display());
    Ok(())
}
