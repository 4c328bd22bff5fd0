//! File formats and command-line front end for `omniloc`.
//!
//! Exit codes: 0 on success, 1 when an output cannot be written, 2 for
//! malformed inputs or arguments, 3 when localization reports failure.

pub mod bench;
pub mod commands;
pub mod config;
pub mod ply;
pub mod png;
pub mod records;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use omniloc::render::Texture;

use crate::bench::InitGrid;
use crate::commands::{eval_json, parse_points, run_bench, run_eval, run_localize, run_synth, LocalizeArgs, SynthArgs};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Output(String),
    #[error("localization failed: no candidate produced a finite loss")]
    LocalizationFailed,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Output(_) => 1,
            Self::Input(_) => 2,
            Self::LocalizationFailed => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "omniloc", version, about = "Locate a 360° panorama inside a colored point cloud")]
pub struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the camera pose of a panorama.
    Localize(LocalizeCmd),
    /// Generate a synthetic room, its panorama and the true pose.
    Synth(SynthCmd),
    /// Compare result files with ground truth.
    Eval(EvalCmd),
    /// Time the sampler and the pipeline stages at several cloud sizes.
    Bench(BenchCmd),
}

#[derive(Debug, Args)]
pub struct LocalizeCmd {
    /// Colored point cloud (PLY).
    #[arg(long)]
    pub cloud: PathBuf,
    /// Equirectangular panorama (PNG).
    #[arg(long)]
    pub image: PathBuf,
    /// key = value overrides of the localizer settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Search yaw only (8 rotations unless the config sets n_r).
    #[arg(long)]
    pub gravity_known: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Result JSON path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Render the cloud at the estimated pose into this PNG.
    #[arg(long)]
    pub dump_projection: Option<PathBuf>,
    /// Include stage timings in the result (makes the output run-dependent).
    #[arg(long)]
    pub emit_timings: bool,
}

fn parse_extent(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad extent component '{p}'")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| "extent needs three comma-separated values".to_string())
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    /// Directory receiving cloud.ply, pano.png, oracle.json, descriptor.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Room size in meters as x,y,z.
    #[arg(long, default_value = "4,3,2.5", value_parser = parse_extent)]
    pub extent: [f64; 3],
    /// Surface samples per square meter.
    #[arg(long, default_value_t = 400.0)]
    pub density: f64,
    /// checker, noise or semantic_flat.
    #[arg(long, default_value = "noise")]
    pub texture: Texture,
    /// Move the cloud by a random yaw and offset and adjust the oracle.
    #[arg(long)]
    pub augment: bool,
    /// Draw the camera rotation from all of SO(3) instead of yaw only.
    #[arg(long)]
    pub free_rotation: bool,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    /// Directory of <name>.json result files.
    #[arg(long)]
    pub results: PathBuf,
    /// Directory holding <name>.json or <name>/oracle.json for every result.
    #[arg(long)]
    pub truth: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchCmd {
    /// Comma-separated cloud sizes.
    #[arg(long, default_value = "1e5,2e5,4e5")]
    pub points: String,
    #[arg(long, default_value_t = 3)]
    pub repeat: usize,
    /// Skip the (slow) initialization timing.
    #[arg(long)]
    pub no_init: bool,
    #[arg(long, default_value_t = 50)]
    pub n_t: usize,
    #[arg(long, default_value_t = 32)]
    pub n_r: usize,
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Localize(c) => {
            let args = LocalizeArgs {
                cloud: c.cloud,
                image: c.image,
                config: c.config,
                gravity_known: c.gravity_known,
                seed: c.seed,
                out: c.out,
                dump_projection: c.dump_projection,
                timings: c.emit_timings,
            };
            let (file, json) = run_localize(&args)?;
            if args.out.is_none() {
                print!("{json}");
            }
            eprintln!(
                "final loss {} from candidate {} of {}",
                file.final_loss,
                file.best_index,
                file.candidates.len()
            );
            if file.failed {
                return Err(CliError::LocalizationFailed);
            }
            Ok(())
        }
        Command::Synth(c) => {
            run_synth(&SynthArgs {
                out_dir: c.out_dir,
                seed: c.seed,
                extent: c.extent,
                density: c.density,
                texture: c.texture,
                augment: c.augment,
                free_rotation: c.free_rotation,
                height: c.height,
                width: c.width,
            })?;
            Ok(())
        }
        Command::Eval(c) => {
            let report = run_eval(&c.results, &c.truth)?;
            let json = eval_json(&report);
            print!("{json}");
            if let Some(path) = c.out {
                std::fs::write(&path, &json).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
            }
            Ok(())
        }
        Command::Bench(c) => {
            let points = parse_points(&c.points)?;
            let init = (!c.no_init).then_some(InitGrid { n_t: c.n_t, n_r: c.n_r });
            let (_, table) = run_bench(&points, c.repeat, init);
            print!("{table}");
            Ok(())
        }
    }
}

/// Runs a parsed command line, honoring `--threads`.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.threads {
        Some(0) => Err(CliError::Input("--threads must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
            pool.install(|| execute(cli.command))
        }
        None => execute(cli.command),
    }
}
