//! `synth`: generate a synthetic scene directory.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pointpix_core::synth::{jitter_pose, road_scene, room_scene, RoadSceneConfig, RoomSceneConfig};

use crate::bundle::SceneBundle;
use crate::config::{CliError, RunConfig, SceneKind};

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let camera = cfg.camera()?;
    let scene = match cfg.scene_kind {
        SceneKind::Room => {
            let scene_cfg = RoomSceneConfig { pose_count: cfg.refs, ..RoomSceneConfig::default() };
            room_scene(&camera, &scene_cfg, cfg.seed)
        }
        SceneKind::Road => {
            let base = RoadSceneConfig::default();
            // Pose generation walks `pose_spacing` steps while the next step
            // stays inside `length`; this length yields exactly `refs` poses.
            let scene_cfg = RoadSceneConfig {
                length: (cfg.refs + 1) as f64 * base.pose_spacing,
                ..base
            };
            road_scene(&camera, &scene_cfg, cfg.seed)
        }
    };

    // Queries are perturbed copies of reference views, round-robin.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let queries: Vec<_> = (0..cfg.queries)
        .map(|i| {
            jitter_pose(
                &scene.poses[i % scene.poses.len()],
                cfg.query_shift,
                cfg.query_angle_deg.to_radians(),
                &mut rng,
            )
        })
        .collect();

    let bundle =
        SceneBundle { cloud: scene.cloud, camera, refs: scene.poses, queries };
    bundle.save(&cfg.scene_dir)?;

    println!("scene_dir={}", cfg.scene_dir.display());
    println!("points={}", bundle.cloud.len());
    println!("refs={}", bundle.refs.len());
    println!("queries={}", bundle.queries.len());
    Ok(())
}
