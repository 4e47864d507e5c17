//! Run configuration: a plain `key = value` text file merged with repeatable
//! `--set key=value` overrides, then validated against the preconditions of
//! the modules it parameterizes. Unknown keys are rejected.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pointpix_core::geometry::CameraModel;
use pointpix_core::io::FormatError;
use pointpix_core::pipeline::{PipelineConfig, PipelineError};
use pointpix_core::pnp::RansacConfig;
use pointpix_core::raster::IprConfig;

/// Failure category; decides the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or usage (exit 2).
    Config(String),
    /// Unreadable or malformed data files (exit 3).
    Format(FormatError),
    /// A stage failed on well-formed inputs, e.g. no consensus (exit 4).
    Algorithm(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Format(_) => 3,
            CliError::Algorithm(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config: {msg}"),
            CliError::Format(e) => write!(f, "data format: {e}"),
            CliError::Algorithm(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Format(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Format(FormatError::Io(e))
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Algorithm(e.to_string())
    }
}

impl From<pointpix_core::pnp::PnpError> for CliError {
    fn from(e: pointpix_core::pnp::PnpError) -> Self {
        CliError::Algorithm(e.to_string())
    }
}

impl From<pointpix_core::raster::RasterError> for CliError {
    fn from(e: pointpix_core::raster::RasterError) -> Self {
        CliError::Algorithm(e.to_string())
    }
}

impl From<pointpix_core::submap::SubmapError> for CliError {
    fn from(e: pointpix_core::submap::SubmapError) -> Self {
        CliError::Algorithm(e.to_string())
    }
}

impl From<pointpix_core::feature::FeatureError> for CliError {
    fn from(e: pointpix_core::feature::FeatureError) -> Self {
        CliError::Algorithm(e.to_string())
    }
}

impl From<pointpix_core::metrics::MetricsError> for CliError {
    fn from(e: pointpix_core::metrics::MetricsError) -> Self {
        CliError::Algorithm(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Room,
    Road,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    // Paths.
    pub scene_dir: PathBuf,
    pub index_dir: PathBuf,
    /// Pairwise scorer network; absent means the closed-form scorer.
    pub weights: Option<PathBuf>,
    // Camera.
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    // Pipeline shape.
    pub g: u32,
    /// Visibility-filter pooling kernel, odd.
    pub s: usize,
    /// Per-submap point budget.
    pub m: usize,
    /// Submaps retrieved per query.
    pub k: usize,
    /// Frustum cut radius, meters.
    pub radius: f64,
    // Robust estimation.
    pub ransac_iterations: usize,
    pub ransac_inlier_px: f64,
    // Scorer.
    pub scorer_scale: f64,
    pub scorer_null_logit: f64,
    // Evaluation thresholds, (meters, degrees) pairs.
    pub thresholds: Vec<(f64, f64)>,
    // Seeds.
    pub seed: u64,
    pub model_seed: u64,
    // Descriptor dimensions.
    pub local_dim: usize,
    pub global_dim: usize,
    // Scene synthesis.
    pub scene_kind: SceneKind,
    pub refs: usize,
    pub queries: usize,
    /// Maximum translation offset between a query and its source reference.
    pub query_shift: f64,
    pub query_angle_deg: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene_dir: PathBuf::from("scene"),
            index_dir: PathBuf::from("index"),
            weights: None,
            width: 256,
            height: 256,
            focal: 128.0,
            g: 16,
            s: 9,
            m: 65_536,
            k: 4,
            radius: 10.0,
            ransac_iterations: 1000,
            ransac_inlier_px: 4.0,
            scorer_scale: 1.0,
            scorer_null_logit: -4.0,
            thresholds: vec![(0.1, 1.0), (0.25, 2.0), (1.0, 5.0)],
            seed: 0,
            model_seed: 7,
            local_dim: 128,
            global_dim: 256,
            scene_kind: SceneKind::Room,
            refs: 64,
            queries: 100,
            query_shift: 0.05,
            query_angle_deg: 0.5,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("key {key:?}: cannot parse {value:?}"))
}

/// `0.1:1.0,0.25:2.0,1.0:5.0` -> [(0.1, 1.0), (0.25, 2.0), (1.0, 5.0)].
fn parse_thresholds(value: &str) -> Result<Vec<(f64, f64)>, String> {
    value
        .split(',')
        .map(|pair| {
            let (m, d) = pair
                .split_once(':')
                .ok_or_else(|| format!("threshold {pair:?} is not meters:degrees"))?;
            Ok((
                parse_value::<f64>("thresholds", m.trim())?,
                parse_value::<f64>("thresholds", d.trim())?,
            ))
        })
        .collect()
}

impl RunConfig {
    /// Applies the file (when given), then the overrides, then validates.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut config = Self::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read {}: {e}", path.display()))
            })?;
            for (number, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    CliError::Config(format!(
                        "{}:{}: expected key = value, got {raw:?}",
                        path.display(),
                        number + 1
                    ))
                })?;
                config.set(key.trim(), value.trim()).map_err(|msg| {
                    CliError::Config(format!("{}:{}: {msg}", path.display(), number + 1))
                })?;
            }
        }
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set needs key=value, got {item:?}")))?;
            config.set(key.trim(), value.trim()).map_err(CliError::Config)?;
        }
        config.validate()?;
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "scene_dir" => self.scene_dir = PathBuf::from(value),
            "index_dir" => self.index_dir = PathBuf::from(value),
            "weights" => self.weights = Some(PathBuf::from(value)),
            "width" => self.width = parse_value(key, value)?,
            "height" => self.height = parse_value(key, value)?,
            "focal" => self.focal = parse_value(key, value)?,
            "g" => self.g = parse_value(key, value)?,
            "s" => self.s = parse_value(key, value)?,
            "m" => self.m = parse_value(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "radius" => self.radius = parse_value(key, value)?,
            "ransac_iterations" => self.ransac_iterations = parse_value(key, value)?,
            "ransac_inlier_px" => self.ransac_inlier_px = parse_value(key, value)?,
            "scorer_scale" => self.scorer_scale = parse_value(key, value)?,
            "scorer_null_logit" => self.scorer_null_logit = parse_value(key, value)?,
            "thresholds" => self.thresholds = parse_thresholds(value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "model_seed" => self.model_seed = parse_value(key, value)?,
            "local_dim" => self.local_dim = parse_value(key, value)?,
            "global_dim" => self.global_dim = parse_value(key, value)?,
            "scene_kind" => {
                self.scene_kind = match value {
                    "room" => SceneKind::Room,
                    "road" => SceneKind::Road,
                    other => return Err(format!("scene_kind must be room or road, got {other:?}")),
                }
            }
            "refs" => self.refs = parse_value(key, value)?,
            "queries" => self.queries = parse_value(key, value)?,
            "query_shift" => self.query_shift = parse_value(key, value)?,
            "query_angle_deg" => self.query_angle_deg = parse_value(key, value)?,
            unknown => return Err(format!("unknown key {unknown:?}")),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.width == 0 || self.height == 0 {
            return bad("width and height must be positive".into());
        }
        if !(self.focal.is_finite() && self.focal > 0.0) {
            return bad(format!("focal must be positive, got {}", self.focal));
        }
        if self.g == 0 || self.width % self.g != 0 || self.height % self.g != 0 {
            return bad(format!(
                "g={} must divide width={} and height={}",
                self.g, self.width, self.height
            ));
        }
        if self.s == 0 || self.s % 2 == 0 {
            return bad(format!("s={} must be odd", self.s));
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return bad(format!("radius must be positive, got {}", self.radius));
        }
        if self.ransac_iterations == 0 {
            return bad("ransac_iterations must be at least 1".into());
        }
        if !(self.ransac_inlier_px.is_finite() && self.ransac_inlier_px > 0.0) {
            return bad(format!("ransac_inlier_px must be positive, got {}", self.ransac_inlier_px));
        }
        if !(self.scorer_scale.is_finite() && self.scorer_scale > 0.0) {
            return bad(format!("scorer_scale must be positive, got {}", self.scorer_scale));
        }
        if !self.scorer_null_logit.is_finite() {
            return bad("scorer_null_logit must be finite".into());
        }
        if self.thresholds.is_empty() {
            return bad("thresholds must not be empty".into());
        }
        for &(m, d) in &self.thresholds {
            if !(m.is_finite() && m > 0.0 && d.is_finite() && d > 0.0) {
                return bad(format!("threshold ({m}, {d}) must be positive"));
            }
        }
        if self.local_dim == 0 || self.global_dim == 0 {
            return bad("descriptor dimensions must be positive".into());
        }
        if self.refs == 0 {
            return bad("refs must be at least 1".into());
        }
        if !(self.query_shift.is_finite() && self.query_shift >= 0.0) {
            return bad(format!("query_shift must be non-negative, got {}", self.query_shift));
        }
        if !(self.query_angle_deg.is_finite() && self.query_angle_deg >= 0.0) {
            return bad(format!(
                "query_angle_deg must be non-negative, got {}",
                self.query_angle_deg
            ));
        }
        Ok(())
    }

    pub fn camera(&self) -> Result<CameraModel, CliError> {
        CameraModel::simple(self.focal, self.width, self.height)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn ipr_config(&self) -> IprConfig {
        IprConfig { kernel: self.s, ..IprConfig::default() }
    }

    pub fn ransac_config(&self) -> RansacConfig {
        RansacConfig {
            iterations: self.ransac_iterations,
            inlier_px: self.ransac_inlier_px,
            seed: self.seed,
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            g: self.g,
            k: self.k,
            frustum_radius: self.radius,
            point_budget: self.m,
            ipr: self.ipr_config(),
            ransac: self.ransac_config(),
            seed: self.seed,
            ..PipelineConfig::default()
        }
    }
}
