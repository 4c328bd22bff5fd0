//! The `omniloc` binary end to end.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::Vector3;
use omniloc::geometry::rot_z;
use omniloc::pipeline::pose_error;
use omniloc::Pose;
use omniloc_cli::bench::measure;
use omniloc_cli::ply::read_ply;
use omniloc_cli::png::read_png;
use omniloc_cli::records::{to_json, OracleFile, PoseRecord, ResultFile};
use serde_json::Value;

fn omniloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omniloc")).args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth(dir: &Path, extra: &[&str]) -> OracleFile {
    let mut args = vec!["synth", "--out-dir", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = omniloc(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    serde_json::from_slice(&std::fs::read(dir.join("oracle.json")).unwrap()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A quick search grid for tests that only check plumbing.
fn fast_config(dir: &Path) -> PathBuf {
    let p = dir.join("fast.cfg");
    std::fs::write(&p, "# plumbing only\nn_t = 6\nk1 = 10\nk2 = 2\nn_iter = 5\n").unwrap();
    p
}

#[test]
fn synth_then_localize_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    let oracle = synth(&scene, &["--seed", "3"]);
    let projection = tmp.path().join("projection.png");
    let out = omniloc(&[
        "localize",
        "--cloud",
        path(&scene.join("cloud.ply")),
        "--image",
        path(&scene.join("pano.png")),
        "--dump-projection",
        path(&projection),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let result: ResultFile = serde_json::from_slice(&out.stdout).expect("stdout is exactly the result JSON");
    let error = pose_error(&result.pose.to_pose().unwrap(), &oracle.pose.to_pose().unwrap());
    assert!(error.is_success(), "{error:?}");
    assert!(!result.failed);
    assert_eq!(result.candidates.len(), 6);
    assert!(result.timings.is_none());
    let raw: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(raw["pose"]["quaternion_wxyz"].as_array().unwrap().len(), 4);
    assert!(stderr(&out).contains("final loss"));
    let view = read_png(&projection).unwrap();
    assert_eq!((view.height(), view.width()), (128, 256));
}

#[test]
fn out_flag_writes_the_same_json() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    synth(&scene, &["--seed", "1"]);
    let cfg = fast_config(tmp.path());
    let file = tmp.path().join("result.json");
    let (cloud, image) = (scene.join("cloud.ply"), scene.join("pano.png"));
    let common = ["localize", "--cloud", path(&cloud), "--image", path(&image), "--config", path(&cfg)];
    let printed = omniloc(&common);
    let mut args = common.to_vec();
    args.extend(["--out", path(&file)]);
    let written = omniloc(&args);
    assert!(printed.status.success() && written.status.success());
    assert!(written.stdout.is_empty());
    assert_eq!(std::fs::read(&file).unwrap(), printed.stdout);

    args.push("--emit-timings");
    assert!(omniloc(&args).status.success());
    let timed: Value = serde_json::from_slice(&std::fs::read(&file).unwrap()).unwrap();
    assert!(timed["timings"]["initialization_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn truncated_ply_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    synth(&scene, &["--seed", "0"]);
    let ply = tmp.path().join("short.ply");
    std::fs::write(
        &ply,
        "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 1 2 3\n1 1 1 4 5 6\n",
    )
    .unwrap();
    let out = omniloc(&["localize", "--cloud", path(&ply), "--image", path(&scene.join("pano.png"))]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("line 13") && msg.contains("2 of 3"), "{msg}");
    assert!(out.stdout.is_empty());

    let bytes = std::fs::read(scene.join("cloud.ply")).unwrap();
    let cut = tmp.path().join("cut.ply");
    std::fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
    let out = omniloc(&["localize", "--cloud", path(&cut), "--image", path(&scene.join("pano.png"))]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn ply_without_colors_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    synth(&scene, &["--seed", "0"]);
    let ply = tmp.path().join("bare.ply");
    std::fs::write(&ply, "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n").unwrap();
    let out = omniloc(&["localize", "--cloud", path(&ply), "--image", path(&scene.join("pano.png"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("red"), "{}", stderr(&out));
}

#[test]
fn gravity_flag_selects_eight_yaws() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    synth(&scene, &["--seed", "2"]);
    let cfg = fast_config(tmp.path());
    let out = omniloc(&[
        "localize",
        "--cloud",
        path(&scene.join("cloud.ply")),
        "--image",
        path(&scene.join("pano.png")),
        "--config",
        path(&cfg),
        "--gravity-known",
        "--seed",
        "4",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let result: ResultFile = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!((result.config.n_r, result.config.gravity_known, result.seed), (8, true, 4));
    for c in &result.candidates {
        assert!((c.start.rotation().column(2) - Vector3::z()).amax() < 1e-12);
    }
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, &["--seed", "8", "--augment"]);
    synth(&b, &["--seed", "8", "--augment"]);
    for name in ["oracle.json", "descriptor.json", "cloud.ply", "pano.png"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let descriptor: Value = serde_json::from_slice(&std::fs::read(a.join("descriptor.json")).unwrap()).unwrap();
    assert!(descriptor["augmentation"].is_object());
}

#[test]
fn semantic_texture_uses_few_colors() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &["--seed", "5", "--texture", "semantic_flat"]);
    let cloud = read_ply(&tmp.path().join("cloud.ply")).unwrap();
    let distinct: HashSet<[u64; 3]> = cloud.colors().iter().map(|c| [c.x.to_bits(), c.y.to_bits(), c.z.to_bits()]).collect();
    assert!(distinct.len() <= 12, "{}", distinct.len());
}

#[test]
fn bad_arguments_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = path(tmp.path());
    for args in [
        vec!["synth", "--out-dir", dir, "--extent", "0.5,3,2.5"],
        vec!["synth", "--out-dir", dir, "--texture", "marble"],
        vec!["--threads", "0", "synth", "--out-dir", dir],
        vec!["localize", "--cloud", "missing.ply", "--image", "missing.png"],
        vec!["bench", "--points", "1.5"],
    ] {
        let out = omniloc(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
    }
}

fn write_result(dir: &Path, name: &str, pose: &Pose) {
    let json = format!("{{\"pose\": {}}}", to_json(&PoseRecord::from_pose(pose)));
    std::fs::write(dir.join(format!("{name}.json")), json).unwrap();
}

fn eval(results: &Path, truth: &Path) -> Output {
    omniloc(&["eval", "--results", path(results), "--truth", path(truth)])
}

#[test]
fn eval_reports_quartiles_and_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let (results, truth) = (tmp.path().join("results"), tmp.path().join("truth"));
    std::fs::create_dir_all(&results).unwrap();
    let oracle = synth(&truth.join("room"), &["--seed", "6"]);
    let exact = oracle.pose.to_pose().unwrap();
    write_result(&results, "room", &exact);
    let out = eval(&results, &truth);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["summary"]["accuracy"], 1.0);
    assert_eq!(report["summary"]["t_error"]["q2"], 0.0);
    assert!(report["summary"]["r_error"]["q2"].as_f64().unwrap() < 1e-6);

    let near = Pose::new(rot_z(4.9f64.to_radians()) * exact.rotation, exact.translation + Vector3::new(0.09, 0.0, 0.0)).unwrap();
    write_result(&results, "room", &near);
    let written = tmp.path().join("report.json");
    let out = omniloc(&["eval", "--results", path(&results), "--truth", path(&truth), "--out", path(&written)]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["entries"][0]["success"], true);
    assert_eq!(report["summary"]["accuracy"], 1.0);
    assert_eq!(std::fs::read(&written).unwrap(), out.stdout);
    assert_eq!(eval(&results, &truth).stdout, out.stdout);
}

#[test]
fn eval_rejects_unmatched_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (results, truth) = (tmp.path().join("results"), tmp.path().join("truth"));
    std::fs::create_dir_all(&results).unwrap();
    let oracle = synth(&truth.join("room"), &["--seed", "6"]);
    write_result(&results, "room", &oracle.pose.to_pose().unwrap());
    write_result(&results, "stray", &Pose::identity());
    let out = eval(&results, &truth);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("stray"));

    std::fs::remove_file(results.join("stray.json")).unwrap();
    synth(&truth.join("other"), &["--seed", "7"]);
    let out = eval(&results, &truth);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("other"));
}

#[test]
fn eval_excludes_cameras_outside_the_cloud() {
    let tmp = tempfile::tempdir().unwrap();
    let (results, truth) = (tmp.path().join("results"), tmp.path().join("truth"));
    std::fs::create_dir_all(&results).unwrap();
    std::fs::create_dir_all(&truth).unwrap();
    let inside = Pose::new(rot_z(0.3), Vector3::new(1.0, 1.0, 1.0)).unwrap();
    let outside = Pose::new(rot_z(0.3), Vector3::new(9.0, 1.0, 1.0)).unwrap();
    for (name, pose) in [("in", inside), ("out", outside)] {
        let oracle = OracleFile {
            pose: PoseRecord::from_pose(&pose),
            bbox_min: [0.0; 3],
            bbox_max: [4.0, 3.0, 2.5],
        };
        std::fs::write(truth.join(format!("{name}.json")), to_json(&oracle)).unwrap();
        write_result(&results, name, &inside);
    }
    let out = eval(&results, &truth);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["excluded"], serde_json::json!(["out"]));
    assert_eq!(report["summary"]["count"], 1);
}

#[test]
fn bench_medians_are_stable() {
    let once = measure(100_000, 1, None);
    let five = measure(100_000, 5, None);
    let ratio = once.loss_s / five.loss_s;
    assert!((0.5..=1.5).contains(&ratio), "repeat 1: {} s, repeat 5: {} s", once.loss_s, five.loss_s);

    let out = omniloc(&["bench", "--points", "2e4,4e4", "--repeat", "1", "--no-init"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.lines().next().unwrap().contains("points/s"));
    assert!(table.contains("GPU reference"));
}
