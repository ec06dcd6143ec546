use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cyclefilter"));
    cmd.env_remove("CYCLEFILTER_WORKERS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn summary(out: &Output) -> BTreeMap<String, String> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

const SMALL: &[&str] = &["--width", "160", "--height", "128", "--frames", "34", "--workers", "1"];

fn track_small(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["track", "--output", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn static_scene_tracks_with_small_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = track_small(dir.path(), &["--motion", "static", "--enrichment", "none"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    let mean: f64 = s["mean_fbe"].parse().unwrap();
    assert!(mean < 1.0, "mean_fbe {mean}");
    assert!(s["fps"].parse::<f64>().unwrap() > 0.0);
    assert_eq!(s["workers"], "1");
    let tracks = fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
    assert!(tracks.starts_with("anchor_id,frame,x,y\n"));
    let anchors: usize = s["anchors"].parse().unwrap();
    assert_eq!(tracks.lines().count(), 1 + anchors * 34);
}

#[test]
fn summary_matches_report_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let out = track_small(dir.path(), &[]);
    assert!(out.status.success());
    let s = summary(&out);
    let mut rdr = csv::Reader::from_path(dir.path().join("report.csv")).unwrap();
    let vals: Vec<f64> = rdr.records().map(|r| r.unwrap()[3].parse().unwrap()).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    assert_eq!(s["mean_fbe"].parse::<f64>().unwrap(), mean);
    assert_eq!(s["anchors"].parse::<usize>().unwrap(), vals.len());
}

#[test]
fn track_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(track_small(a.path(), &["--seed", "5"]).status.success());
    assert!(track_small(b.path(), &["--seed", "5"]).status.success());
    for f in ["trajectories.csv", "report.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn worker_env_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["track", "--output", dir.path().to_str().unwrap()];
    args.extend_from_slice(SMALL);
    let out = bin().args(&args).env("CYCLEFILTER_WORKERS", "2").output().unwrap();
    assert!(out.status.success());
    assert_eq!(summary(&out)["workers"], "2");
}

#[test]
fn synth_writes_frames_and_truth_then_tracks_them() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let mut args = vec!["synth", "--output", scene.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(summary(&out)["frames"], "34");
    let frames = fs::read_dir(scene.join("frames")).unwrap().count();
    assert_eq!(frames, 34);
    assert!(scene.join("ground_truth.csv").exists());

    let tracked = dir.path().join("tracked");
    let out = run(&[
        "track",
        "--input",
        scene.join("frames").to_str().unwrap(),
        "--output",
        tracked.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(summary(&out)["frames"], "34");
}

#[test]
fn frozen_synth_writes_identical_frames() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["synth", "--output", dir.path().to_str().unwrap(), "--motion", "static"];
    args.extend_from_slice(&["--enrichment", "none", "--noise", "0"]);
    args.extend_from_slice(SMALL);
    assert!(run(&args).status.success());
    let first = fs::read(dir.path().join("frames/frame_00000.pgm")).unwrap();
    let last = fs::read(dir.path().join("frames/frame_00033.pgm")).unwrap();
    assert_eq!(first, last);
}

#[test]
fn bench_writes_table_and_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "bench",
        "--output",
        dir.path().to_str().unwrap(),
        "--frames",
        "34",
        "--pipelines",
        "raw,filtered",
        "--particles",
        "3",
        "--workers",
        "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "pipeline,fps,fbe_ae,fbe_pe,fbe_total");
    assert!(lines[1].starts_with("raw-ncc,"));
    assert!(lines[2].starts_with("filtered-ncc-m3,"));
    let pgm = fs::read(dir.path().join("heatmap_raw-ncc.pgm")).unwrap();
    let header: Vec<String> = String::from_utf8_lossy(&pgm[..12]).split_whitespace().map(String::from).collect();
    assert_eq!(header, ["P5", "13", "9", "255"]);
    assert_eq!(pgm.len(), 12 + 13 * 9);
    assert_eq!(summary(&out)["split"], "17");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();

    let missing = run(&["track", "--input", "/definitely/not/here", "--output", out_dir]);
    assert_eq!(missing.status.code(), Some(2));

    let empty = dir.path().join("empty.cfv");
    fs::write(&empty, [b"CFV1".as_slice(), &[16, 0, 0, 0, 16, 0, 0, 0, 0, 0, 0, 0]].concat()).unwrap();
    let zero = run(&["track", "--input", empty.to_str().unwrap(), "--output", out_dir]);
    assert_eq!(zero.status.code(), Some(2));

    assert_eq!(run(&["track", "--alpha", "1.5", "--output", out_dir]).status.code(), Some(3));
    assert_eq!(run(&["track", "--tracker", "sift", "--output", out_dir]).status.code(), Some(3));
    assert_eq!(run(&["bench", "--pipelines", "", "--output", out_dir]).status.code(), Some(3));
    assert_eq!(run(&["track", "--no-such-flag"]).status.code(), Some(3));

    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "filter.sigma0 = 4\nfilter.unknown = 1\n").unwrap();
    let bad = run(&["track", "--config", cfg.to_str().unwrap(), "--output", out_dir]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("filter.unknown"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "filter.alpha = 7\n").unwrap();
    let mut args = vec!["track", "--config", cfg.to_str().unwrap(), "--alpha", "0.5"];
    let out_dir = dir.path().join("o");
    args.extend_from_slice(&["--output", out_dir.to_str().unwrap()]);
    args.extend_from_slice(SMALL);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
