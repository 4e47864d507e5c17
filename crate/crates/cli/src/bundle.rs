//! On-disk layout of scenes and indexes, shared by every subcommand.
//!
//! A scene directory holds the point cloud, the camera intrinsics, the
//! reference poses the map is built from, and the query poses. An index
//! directory holds one filtered submap cloud and descriptor table per
//! reference view, the reference poses (submap origins), and the flat
//! global-descriptor index.

use std::fs;
use std::path::{Path, PathBuf};

use pointpix_core::feature::Descriptors;
use pointpix_core::geometry::{CameraModel, Pose, PointCloud};
use pointpix_core::io::{
    load_camera, load_descriptors, load_index, load_point_cloud, load_poses, save_intrinsics_matrix,
    save_point_cloud, save_poses, FormatError,
};
use pointpix_core::pipeline::{Database, DatabaseSubmap};
use pointpix_core::submap::Submap;

use crate::config::{CliError, RunConfig};

pub const CLOUD_FILE: &str = "cloud.eppc";
pub const REFS_FILE: &str = "refs.poses";
pub const QUERIES_FILE: &str = "queries.poses";
pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const INDEX_FILE: &str = "index.epix";
pub const ORIGINS_FILE: &str = "origins.poses";

/// Everything `synth` writes and the other subcommands read back.
pub struct SceneBundle {
    pub cloud: PointCloud,
    pub camera: CameraModel,
    pub refs: Vec<Pose>,
    pub queries: Vec<Pose>,
}

impl SceneBundle {
    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir)?;
        save_point_cloud(dir.join(CLOUD_FILE), &self.cloud)?;
        save_poses(dir.join(REFS_FILE), &self.refs)?;
        save_poses(dir.join(QUERIES_FILE), &self.queries)?;
        save_intrinsics_matrix(dir.join(INTRINSICS_FILE), self.camera.intrinsics())?;
        Ok(())
    }

    pub fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        let dir = &cfg.scene_dir;
        let camera = load_camera(dir.join(INTRINSICS_FILE), cfg.width, cfg.height)?;
        Ok(Self {
            cloud: load_point_cloud(dir.join(CLOUD_FILE))?,
            camera,
            refs: load_poses(dir.join(REFS_FILE))?,
            queries: load_poses(dir.join(QUERIES_FILE))?,
        })
    }
}

/// Frustum-cut submap before visibility filtering, written by `partition`.
pub fn raw_submap_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("raw_{id:04}.eppc"))
}

/// Visibility-filtered submap cloud, written by `index`.
pub fn submap_cloud_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("submap_{id:04}.eppc"))
}

/// Per-point descriptor table matching the filtered cloud.
pub fn submap_desc_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("submap_{id:04}.epds"))
}

/// Reassembles the searchable database from an index directory.
pub fn load_database(dir: &Path, camera: CameraModel) -> Result<Database, CliError> {
    let index = load_index(dir.join(INDEX_FILE))?;
    let origins = load_poses(dir.join(ORIGINS_FILE))?;
    let mut submaps = Vec::with_capacity(index.entries.len());
    for entry in &index.entries {
        let origin = *origins.get(entry.id as usize).ok_or_else(|| {
            FormatError::Malformed(format!(
                "index entry {} has no origin pose (only {} stored)",
                entry.id,
                origins.len()
            ))
        })?;
        let points = load_point_cloud(submap_cloud_path(dir, entry.id))?;
        let descriptors: Descriptors = load_descriptors(submap_desc_path(dir, entry.id))?;
        if descriptors.len() != points.len() {
            return Err(FormatError::Malformed(format!(
                "submap {}: {} descriptors for {} points",
                entry.id,
                descriptors.len(),
                points.len()
            ))
            .into());
        }
        submaps.push(DatabaseSubmap {
            submap: Submap { id: entry.id, origin, points },
            descriptors,
        });
    }
    Ok(Database { camera, submaps, index })
}
