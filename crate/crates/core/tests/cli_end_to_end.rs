mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{noise_frame, rng, shifted};
use movex::cli::estimate_all;
use movex::eval::ApReport;
use movex::mot::{read_detections, read_ground_truth};
use movex::motion::{read_frame_dir, read_mvf, write_mvf, write_pgm, MotionEstimatorParams, MotionVectorField};
use tempfile::TempDir;

const SPEC: &str = r#"
width = 128
height = 96
frames = 12
seed = 5

[[objects]]
x = 20
y = 10
w = 20
h = 40
segments = [{ frames = 11, vx = 2, vy = 0 }]

[[objects]]
x = 90
y = 50
w = 20
h = 40
segments = [{ frames = 4, vx = -1, vy = 0 }, { frames = 4, vx = 1, vy = 0 }]
"#;

fn movex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_movex")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = movex(args);
    assert!(
        out.status.success(),
        "movex {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Asserts failure and returns the diagnostic, which must be one line.
fn fails(args: &[&str]) -> String {
    let out = movex(args);
    assert!(!out.status.success(), "movex {args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    err
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_into(dir: &TempDir, name: &str) -> PathBuf {
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, SPEC).unwrap();
    let out = dir.path().join(name);
    ok(&["synth", "--spec", s(&spec), "--out", s(&out)]);
    out
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn synth_is_seeded_and_consistent() {
    let dir = TempDir::new().unwrap();
    let a = synth_into(&dir, "a");
    let b = synth_into(&dir, "b");
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
    assert_eq!(read_frame_dir(&a.join("frames")).unwrap().len(), 12);

    let gt = read_ground_truth(fs::File::open(a.join("gt.txt")).map(std::io::BufReader::new).unwrap()).unwrap();
    let xs: Vec<f64> = gt.frames().iter().map(|f| f[0].x).collect();
    assert!(xs.windows(2).all(|w| w[1] - w[0] == 2.0));

    let det = read_detections(std::io::BufReader::new(fs::File::open(a.join("det.txt")).unwrap())).unwrap();
    for (i, g) in gt.frames().iter().enumerate() {
        let d = det.get(i);
        assert_eq!(d.len(), g.len());
        for (d, g) in d.detections.iter().zip(g) {
            assert_eq!((d.x, d.y, d.w, d.h, d.score), (g.x, g.y, g.w, g.h, 1.0));
        }
    }

    let other_seed = dir.path().join("c");
    let spec = dir.path().join("spec.toml");
    ok(&["synth", "--spec", s(&spec), "--out", s(&other_seed), "--seed", "6"]);
    assert_ne!(
        fs::read(a.join("frames/000000.pgm")).unwrap(),
        fs::read(other_seed.join("frames/000000.pgm")).unwrap()
    );
}

#[test]
fn synth_rejects_overlapping_objects() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("bad.toml");
    fs::write(&spec, SPEC.replace("x = 90", "x = 25").replace("y = 50", "y = 20")).unwrap();
    let err = fails(&["synth", "--spec", s(&spec), "--out", s(&dir.path().join("o"))]);
    assert!(err.contains("overlap"), "{err}");
}

#[test]
fn estimate_flow_covers_every_pair() {
    let dir = TempDir::new().unwrap();
    let frames_dir = dir.path().join("frames");
    fs::create_dir(&frames_dir).unwrap();
    let first = noise_frame(0, 64, 48, &mut rng(8));
    let frames = [first.clone(), shifted(&first, 3, -2), shifted(&shifted(&first, 3, -2), 3, -2)];
    for f in &frames {
        write_pgm(&frames_dir.join(format!("f{:03}.pgm", f.index())), f).unwrap();
    }
    let out = dir.path().join("flow.mvf");
    ok(&[
        "estimate-flow",
        "--frames",
        s(&frames_dir),
        "--search-range",
        "6",
        "--out",
        s(&out),
    ]);
    let fields = read_mvf(std::io::BufReader::new(fs::File::open(&out).unwrap())).unwrap();
    assert_eq!(fields.len(), 2);
    let params = MotionEstimatorParams {
        search_range: 6,
        ..Default::default()
    };
    assert_eq!(fields, estimate_all(&frames, &params).unwrap());
    for f in &fields {
        for gy in 1..f.grid_h() - 1 {
            for gx in 1..f.grid_w() - 1 {
                assert_eq!((f.get(gx, gy).dx, f.get(gx, gy).dy), (3, -2));
            }
        }
    }

    let single = dir.path().join("single");
    fs::create_dir(&single).unwrap();
    write_pgm(&single.join("a.pgm"), &frames[0]).unwrap();
    fails(&["estimate-flow", "--frames", s(&single), "--out", s(&dir.path().join("x.mvf"))]);
}

fn zero_sidecar(path: &Path, n: usize, w: usize, h: usize) {
    let fields: Vec<_> = (0..n - 1).map(|i| MotionVectorField::zeros(i, w, h, 16).unwrap()).collect();
    write_mvf(&fields, fs::File::create(path).unwrap()).unwrap();
}

#[test]
fn zero_latency_oracle_with_zero_flow_echoes_det_file() {
    let dir = TempDir::new().unwrap();
    let data = synth_into(&dir, "d");
    let sidecar = dir.path().join("zero.mvf");
    zero_sidecar(&sidecar, 12, 128, 96);

    let out = dir.path().join("out.txt");
    let run = |det: &Path, thr: &str| {
        ok(&[
            "run",
            "--frames",
            s(&data.join("frames")),
            "--flow",
            &format!("sidecar:{}", s(&sidecar)),
            "--detector",
            &format!("oracle:{}", s(det)),
            "--det-latency",
            "frames:0",
            "--score-threshold",
            thr,
            "--out-dets",
            s(&out),
            "--out-stats",
            s(&dir.path().join("stats.json")),
        ]);
    };
    run(&data.join("det.txt"), "0");
    assert_eq!(fs::read(&out).unwrap(), fs::read(data.join("det.txt")).unwrap());

    // Mixed scores: the output keeps exactly the lines at or above threshold.
    let det = fs::read_to_string(data.join("det.txt")).unwrap();
    let scored: String = det
        .lines()
        .enumerate()
        .map(|(k, l)| {
            let mut cols: Vec<String> = l.split(',').map(str::to_owned).collect();
            cols[6] = format!("{}", (k % 10) as f64 / 10.0);
            cols.join(",") + "\n"
        })
        .collect();
    let scored_path = dir.path().join("scored.txt");
    fs::write(&scored_path, &scored).unwrap();
    run(&scored_path, "0.5");
    let expected: String = scored
        .lines()
        .filter(|l| l.split(',').nth(6).unwrap().parse::<f64>().unwrap() >= 0.5)
        .map(|l| format!("{l}\n"))
        .collect();
    assert_eq!(fs::read_to_string(&out).unwrap(), expected);

    let stats: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["frames"], 12);
    assert_eq!(stats["prior_age"]["max"], 0);
    assert!(stats["step_ms"]["median"].as_f64().unwrap() >= 0.0);
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let data = synth_into(&dir, "d");
    let outs: Vec<Vec<u8>> = (0..2)
        .map(|k| {
            let out = dir.path().join(format!("run{k}.txt"));
            ok(&[
                "run",
                "--frames",
                s(&data.join("frames")),
                "--search-range",
                "4",
                "--detector",
                &format!("oracle:{}", s(&data.join("det.txt"))),
                "--det-latency",
                "frames:3",
                "--mode",
                "deterministic",
                "--out-dets",
                s(&out),
            ]);
            fs::read(out).unwrap()
        })
        .collect();
    assert!(!outs[0].is_empty());
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let data = synth_into(&dir, "d");
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("cfg.txt");
    fs::write(
        &cfg,
        format!(
            "frames = {:?}\ndetector = \"oracle:{}\"\ndet_latency = \"frames:2\"\nsearch_range = 4\nmode = \"realtime\"\nout_dets = {:?}\n",
            s(&data.join("frames")),
            s(&data.join("det.txt")),
            s(&out)
        ),
    )
    .unwrap();
    // The file asks for realtime; the flag wins.
    let stdout = ok(&["run", "--config", s(&cfg), "--mode", "deterministic"]);
    let stats: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(stats["mode"], "deterministic");
    assert_eq!(stats["frames"], 12);
    assert!(out.exists());
}

#[test]
fn bad_inputs_fail_before_running() {
    let dir = TempDir::new().unwrap();
    let data = synth_into(&dir, "d");
    let det = format!("oracle:{}", s(&data.join("det.txt")));

    let err = fails(&["run", "--frames", s(&dir.path().join("nope")), "--detector", &det]);
    assert!(err.contains("nope") && err.contains("does not exist"), "{err}");

    let err = fails(&[
        "run",
        "--frames",
        s(&data.join("frames")),
        "--detector",
        &format!("oracle:{}", s(&dir.path().join("missing.txt"))),
    ]);
    assert!(err.contains("missing.txt"), "{err}");

    let err = fails(&[
        "run",
        "--frames",
        s(&data.join("frames")),
        "--detector",
        &det,
        "--out-dets",
        s(&dir.path().join("no/such/dir/out.txt")),
    ]);
    assert!(err.contains("does not exist"), "{err}");

    let err = fails(&[
        "run",
        "--frames",
        s(&data.join("frames")),
        "--detector",
        &det,
        "--det-latency",
        "ms:5",
        "--mode",
        "deterministic",
    ]);
    assert!(err.contains("frames:N"), "{err}");

    fails(&["run", "--frames", s(&data.join("frames")), "--detector", &det, "--agg", "mode"]);
}

#[test]
fn runtime_failure_names_frame_and_module() {
    let dir = TempDir::new().unwrap();
    let data = synth_into(&dir, "d");
    let sidecar = dir.path().join("short.mvf");
    zero_sidecar(&sidecar, 6, 128, 96);
    let err = fails(&[
        "run",
        "--frames",
        s(&data.join("frames")),
        "--flow",
        &format!("sidecar:{}", s(&sidecar)),
        "--detector",
        &format!("oracle:{}", s(&data.join("det.txt"))),
        "--out-dets",
        s(&dir.path().join("o.txt")),
    ]);
    assert!(err.contains("frame 6: motion:"), "{err}");
}

#[test]
fn eval_reports() {
    let dir = TempDir::new().unwrap();
    let data = synth_into(&dir, "d");
    let gt = data.join("gt.txt");
    let report_path = dir.path().join("ap.json");
    let eval = |pred: &Path| -> ApReport {
        let stdout = ok(&["eval", "--pred", s(pred), "--gt", s(&gt), "--iou", "0.5", "--out", s(&report_path)]);
        let printed: ApReport = serde_json::from_str(&stdout).unwrap();
        let written: ApReport = serde_json::from_slice(&fs::read(&report_path).unwrap()).unwrap();
        assert_eq!(printed, written);
        printed
    };
    assert_eq!(eval(&gt).ap, 1.0);
    assert_eq!(eval(&data.join("det.txt")).ap, 1.0);

    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "").unwrap();
    assert_eq!(eval(&empty).ap, 0.0);

    let one_gt = dir.path().join("one_gt.txt");
    fs::write(&one_gt, "1,1,0,0,10,10,1,1,1\n").unwrap();
    let swapped = dir.path().join("swapped.txt");
    fs::write(&swapped, "1,-1,0,0,10,10,0.8,-1,-1,-1\n1,-1,50,50,10,10,0.9,-1,-1,-1\n").unwrap();
    let stdout = ok(&["eval", "--pred", s(&swapped), "--gt", s(&one_gt)]);
    let r: ApReport = serde_json::from_str(&stdout).unwrap();
    assert_eq!((r.ap, r.iou_threshold), (0.5, 0.5));
    let json: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(json["curve"][0].is_array());

    let broken = dir.path().join("broken.txt");
    fs::write(&broken, "1,-1,0,0,10,10,0.8,-1,-1,-1\n1,-1,zero,0,10,10,0.9\n").unwrap();
    let err = fails(&["eval", "--pred", s(&broken), "--gt", s(&one_gt)]);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn bench_writes_per_frame_csv() {
    let dir = TempDir::new().unwrap();
    let data = synth_into(&dir, "d");
    let csv = dir.path().join("bench.csv");
    let stdout = ok(&[
        "bench",
        "--frames",
        s(&data.join("frames")),
        "--search-range",
        "4",
        "--detector",
        &format!("oracle:{}", s(&data.join("det.txt"))),
        "--det-latency",
        "frames:4",
        "--out-csv",
        s(&csv),
    ]);
    let stats: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(stats["prior_age"]["max"], 4);
    let lines: Vec<String> = fs::read_to_string(&csv).unwrap().lines().map(str::to_owned).collect();
    assert_eq!(lines[0], "frame,step_ms,prior_age");
    assert_eq!(lines.len(), 13);
}

#[test]
fn realtime_mode_runs_with_wall_clock_latency() {
    let dir = TempDir::new().unwrap();
    let data = synth_into(&dir, "d");
    let schedule = dir.path().join("sched.txt");
    fs::write(&schedule, "3\n0\n7\n").unwrap();
    let out = dir.path().join("rt.txt");
    ok(&[
        "run",
        "--frames",
        s(&data.join("frames")),
        "--search-range",
        "4",
        "--detector",
        &format!("oracle:{}", s(&data.join("det.txt"))),
        "--det-latency",
        &format!("schedule:{}", s(&schedule)),
        "--mode",
        "realtime",
        "--out-dets",
        s(&out),
    ]);
    let table = read_detections(std::io::BufReader::new(fs::File::open(&out).unwrap())).unwrap();
    assert_eq!(table.last_frame(), Some(11));
}
