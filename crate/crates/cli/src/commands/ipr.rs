//! `ipr`: run the visibility filter for one reference view and write the
//! surviving points (and optionally the rasterized depth map).

use std::path::Path;

use pointpix_core::io::{save_depth_map, save_point_cloud};
use pointpix_core::raster;

use crate::bundle::SceneBundle;
use crate::config::{CliError, RunConfig};

pub fn run(
    cfg: &RunConfig,
    pose_idx: usize,
    out: &Path,
    depth_out: Option<&Path>,
) -> Result<(), CliError> {
    let bundle = SceneBundle::load(cfg)?;
    let pose = *bundle.refs.get(pose_idx).ok_or_else(|| {
        CliError::Config(format!(
            "pose {pose_idx} out of range (scene has {} reference poses)",
            bundle.refs.len()
        ))
    })?;

    let output = raster::ipr(&bundle.cloud, &pose, &bundle.camera, &cfg.ipr_config())?;
    save_point_cloud(out, &bundle.cloud.select(&output.kept))?;
    if let Some(path) = depth_out {
        save_depth_map(path, &output.raster.depth)?;
    }

    println!("kept={}", output.kept.len());
    println!("of={}", bundle.cloud.len());
    Ok(())
}
