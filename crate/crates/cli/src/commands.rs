//! The four subcommands, callable without spawning a process.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use omniloc::geometry::Pose;
use omniloc::pipeline::{evaluate_errors, pose_error, BatchSummary, PoseError};
use omniloc::render::{augment_pose, generate_scene, render, SceneParams, Texture, DEFAULT_SPLAT_RADIUS};
use omniloc::localize;
use serde::Serialize;

use crate::bench::{format_table, measure, BenchRow, InitGrid};
use crate::config::{parse_config, resolve_config, ConfigOverrides};
use crate::png::{aspect_warning, read_png, write_png};
use crate::ply::{read_ply, write_ply};
use crate::records::{read_json, to_json, write_json, DescriptorFile, OracleFile, PoseRecord, ResultFile, ResultPose};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizeArgs {
    pub cloud: PathBuf,
    pub image: PathBuf,
    pub config: Option<PathBuf>,
    pub gravity_known: bool,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub dump_projection: Option<PathBuf>,
    pub timings: bool,
}

/// Localizes and returns the serialized result. The result file is written
/// (or the JSON returned for stdout) even when localization fails.
pub fn run_localize(args: &LocalizeArgs) -> Result<(ResultFile, String), CliError> {
    let cloud = read_ply(&args.cloud)?;
    let image = read_png(&args.image)?;
    if let Some(w) = aspect_warning(&image) {
        eprintln!("{w}");
    }
    let overrides = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            parse_config(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
        None => ConfigOverrides::default(),
    };
    let config = resolve_config(&overrides, args.gravity_known, args.seed)?;
    let result = localize(&cloud, &image, &config).map_err(|e| CliError::Input(e.to_string()))?;
    let file = ResultFile::new(&result, &config, args.timings);
    let json = to_json(&file);
    if let Some(path) = &args.out {
        std::fs::write(path, &json).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
    }
    if let Some(path) = &args.dump_projection {
        let view = render(&cloud, &result.best_pose, image.height(), image.width(), DEFAULT_SPLAT_RADIUS)
            .map_err(|e| CliError::Output(e.to_string()))?;
        write_png(path, &view.image)?;
    }
    Ok((file, json))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthArgs {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub extent: [f64; 3],
    pub density: f64,
    pub texture: Texture,
    pub augment: bool,
    pub free_rotation: bool,
    pub height: usize,
    pub width: usize,
}

/// Seed offset separating the augmentation stream from the scene stream.
const AUGMENT_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

pub const SYNTH_FILES: [&str; 4] = ["cloud.ply", "pano.png", "oracle.json", "descriptor.json"];

pub fn run_synth(args: &SynthArgs) -> Result<OracleFile, CliError> {
    let params = SceneParams {
        seed: args.seed,
        extent: args.extent,
        density: args.density,
        texture: args.texture,
        gravity_aligned: !args.free_rotation,
        height: args.height,
        width: args.width,
        ..SceneParams::default()
    };
    let scene = generate_scene(&params).map_err(|e| CliError::Input(e.to_string()))?;
    let (cloud, oracle, augmentation) = if args.augment {
        let (cloud, adj) = augment_pose(&scene.cloud, args.seed.wrapping_add(AUGMENT_SEED_OFFSET));
        (cloud, adj.apply_to_pose(&scene.oracle_pose), Some(adj))
    } else {
        (scene.cloud.clone(), scene.oracle_pose, None)
    };
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Output(format!("{}: {e}", args.out_dir.display())))?;
    let (lo, hi) = cloud.bounding_box();
    let oracle_file = OracleFile {
        pose: PoseRecord::from_pose(&oracle),
        bbox_min: lo.into(),
        bbox_max: hi.into(),
    };
    write_ply(&args.out_dir.join(SYNTH_FILES[0]), &cloud)?;
    write_png(&args.out_dir.join(SYNTH_FILES[1]), &scene.panorama)?;
    write_json(&args.out_dir.join(SYNTH_FILES[2]), &oracle_file)?;
    write_json(
        &args.out_dir.join(SYNTH_FILES[3]),
        &DescriptorFile {
            scene: scene.descriptor,
            augmentation,
        },
    )?;
    Ok(oracle_file)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalEntry {
    pub name: String,
    pub error: PoseError,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Statistics over the included pairs; absent when none remain.
    pub summary: Option<BatchSummary>,
    pub entries: Vec<EvalEntry>,
    /// Pairs whose ground-truth camera lies outside the cloud's bounding box.
    pub excluded: Vec<String>,
}

/// Truth for result `name`: `<truth>/<name>.json` or `<truth>/<name>/oracle.json`.
fn truth_path(truth_dir: &Path, name: &str) -> Option<PathBuf> {
    let flat = truth_dir.join(format!("{name}.json"));
    let nested = truth_dir.join(name).join("oracle.json");
    [flat, nested].into_iter().find(|p| p.is_file())
}

fn json_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Pairs every `<name>.json` result with its truth; any unmatched file on
/// either side is an input error.
pub fn run_eval(results_dir: &Path, truth_dir: &Path) -> Result<EvalReport, CliError> {
    let results = json_stems(results_dir)?;
    if results.is_empty() {
        return Err(CliError::Input(format!("{}: no result files", results_dir.display())));
    }
    let mut unmatched: Vec<String> = Vec::new();
    let mut pairs = Vec::new();
    for (name, path) in &results {
        match truth_path(truth_dir, name) {
            Some(t) => pairs.push((name.clone(), path.clone(), t)),
            None => unmatched.push(format!("result '{name}' has no truth")),
        }
    }
    for name in json_stems(truth_dir)?.keys() {
        if !results.contains_key(name) {
            unmatched.push(format!("truth '{name}' has no result"));
        }
    }
    let truth_entries = std::fs::read_dir(truth_dir).map_err(|e| CliError::Input(format!("{}: {e}", truth_dir.display())))?;
    let mut nested: Vec<String> = truth_entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("oracle.json").is_file())
        .filter_map(|e| e.file_name().to_str().map(String::from))
        .collect();
    nested.sort();
    for name in nested {
        if !results.contains_key(&name) {
            unmatched.push(format!("truth '{name}' has no result"));
        }
    }
    if !unmatched.is_empty() {
        return Err(CliError::Input(format!("unmatched files: {}", unmatched.join("; "))));
    }

    let mut entries = Vec::new();
    let mut excluded = Vec::new();
    for (name, result_path, truth_path) in pairs {
        let estimate: ResultPose = read_json(&result_path)?;
        let truth: OracleFile = read_json(&truth_path)?;
        if !truth.inside_bbox() {
            excluded.push(name);
            continue;
        }
        let error = pose_error(&estimate.pose.to_pose()?, &truth.pose.to_pose()?);
        entries.push(EvalEntry {
            name,
            success: error.is_success(),
            error,
        });
    }
    let errors: Vec<PoseError> = entries.iter().map(|e| e.error).collect();
    let summary = if errors.is_empty() {
        None
    } else {
        Some(evaluate_errors(&errors).map_err(|e| CliError::Input(e.to_string()))?)
    };
    Ok(EvalReport {
        summary,
        entries,
        excluded,
    })
}

pub fn eval_json(report: &EvalReport) -> String {
    to_json(report)
}

/// Parses a comma-separated list of point counts such as `1e5,2e5,400000`.
pub fn parse_points(list: &str) -> Result<Vec<usize>, CliError> {
    list.split(',')
        .map(|s| {
            let s = s.trim();
            let v: f64 = s.parse().map_err(|_| CliError::Input(format!("bad point count '{s}'")))?;
            if !(v >= 1.0) || v.fract() != 0.0 || v > 1e9 {
                return Err(CliError::Input(format!("bad point count '{s}'")));
            }
            Ok(v as usize)
        })
        .collect()
}

pub fn run_bench(points: &[usize], repeat: usize, init: Option<InitGrid>) -> (Vec<BenchRow>, String) {
    let rows: Vec<BenchRow> = points.iter().map(|&n| measure(n, repeat, init)).collect();
    let table = format_table(&rows);
    (rows, table)
}

/// Pose helper for callers comparing a result file with an oracle file.
pub fn result_error(result: &ResultFile, oracle: &OracleFile) -> Result<PoseError, CliError> {
    let estimate: Pose = result.pose.to_pose()?;
    Ok(pose_error(&estimate, &oracle.pose.to_pose()?))
}
