//! Command-line driver for the point-to-pixel localization pipeline.
//!
//! Every subcommand reads the same run configuration: a `key = value` text
//! file named by `--config`, overridden by repeatable `--set key=value`
//! flags. Exit codes: 0 on success, 2 for configuration errors, 3 for
//! unreadable or malformed data files, 4 when a stage fails on well-formed
//! inputs (for example, no consensus among the correspondences).

mod bundle;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::query::LocalizeArgs;
use config::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "pointpix", version, about = "Point-to-pixel visual localization pipeline")]
struct Cli {
    /// Run configuration file (`key = value` lines, `#` comments).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set k=8`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory: cloud, intrinsics, poses.
    Synth,
    /// Run the visibility filter for one reference view.
    Ipr {
        /// Reference pose index within the scene.
        #[arg(long, default_value_t = 0)]
        pose: usize,
        /// Output cloud of surviving points.
        #[arg(long)]
        out: PathBuf,
        /// Optional rasterized depth map output.
        #[arg(long)]
        depth_out: Option<PathBuf>,
    },
    /// Cut and downsample one raw submap per reference view.
    Partition {
        /// Directory receiving the raw submap clouds.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Filter raw submaps, extract descriptors, and write the index.
    Index {
        /// Directory of raw submaps written by `partition`.
        #[arg(long)]
        submaps: PathBuf,
    },
    /// Print the submap ids nearest to a query, best first.
    Retrieve {
        /// Query pose index within the scene.
        #[arg(long, default_value_t = 0)]
        query: usize,
        /// Also write the ids here, one per line.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full localization of one query: retrieval, matching, estimation.
    Localize(LocalizeArgs),
    /// Estimate a pose from a saved correspondence file.
    Pnp {
        /// Correspondence file written by `localize --matches-out`.
        #[arg(long)]
        matches: PathBuf,
        /// Write the estimated pose here as well as to stdout.
        #[arg(long)]
        pose_out: Option<PathBuf>,
        /// Print consensus and refinement statistics.
        #[arg(long)]
        report: bool,
    },
    /// Recall and error statistics over the query set.
    Evaluate {
        /// Evaluate saved pose estimates instead of running the pipeline.
        #[arg(long)]
        estimates: Option<PathBuf>,
        /// Ground-truth poses for `--estimates` (default: scene queries).
        #[arg(long, requires = "estimates")]
        gt: Option<PathBuf>,
        /// Save the pipeline's estimated poses, one line per localized query.
        #[arg(long, conflicts_with = "estimates")]
        estimates_out: Option<PathBuf>,
        /// Evaluate only the first N queries.
        #[arg(long, conflicts_with = "estimates")]
        limit: Option<usize>,
    },
    /// Repeat one query and report per-stage latency.
    Bench {
        /// Query pose index within the scene.
        #[arg(long, default_value_t = 0)]
        query: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
}

fn dispatch(cli: &Cli, cfg: &RunConfig) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth => commands::synth::run(cfg),
        Command::Ipr { pose, out, depth_out } => {
            commands::ipr::run(cfg, *pose, out, depth_out.as_deref())
        }
        Command::Partition { out_dir } => commands::indexing::partition(cfg, out_dir),
        Command::Index { submaps } => commands::indexing::index(cfg, submaps),
        Command::Retrieve { query, out } => {
            commands::query::retrieve(cfg, *query, out.as_deref())
        }
        Command::Localize(args) => commands::query::localize(cfg, args),
        Command::Pnp { matches, pose_out, report } => {
            commands::query::pnp(cfg, matches, pose_out.as_deref(), *report)
        }
        Command::Evaluate { estimates, gt, estimates_out, limit } => match estimates {
            Some(est) => commands::report::evaluate_files(cfg, est, gt.as_deref()),
            None => commands::report::evaluate_pipeline(cfg, *limit, estimates_out.as_deref()),
        },
        Command::Bench { query, repeats } => commands::report::bench(cfg, *query, *repeats),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match RunConfig::load(cli.config.as_deref(), &cli.overrides) {
        Ok(cfg) => cfg,
        Err(e) => return fail(e),
    };
    match dispatch(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code())
}
