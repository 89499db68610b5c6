use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use conical::{gen_separable, moving_block_scene, write_pgm, FrameStack, SampleEncoding, SceneSpec};
use serde_json::Value;
use tempfile::TempDir;

fn conical_cmd() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_conical"));
    cmd.env_remove("CONICAL_THREADS").env("RUST_LOG", "off");
    cmd
}

fn run(args: &[&str]) -> Output {
    conical_cmd().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Separable toy: writes `X` to `dir/x.csv` and returns the planted anchors.
fn separable_csv(dir: &Path, m: usize, r: usize, n: usize, seed: u64) -> (PathBuf, Vec<usize>) {
    let inst = gen_separable(m, r, n, seed).unwrap();
    let path = dir.join("x.csv");
    inst.x.write_csv_path(&path).unwrap();
    let mut truth = inst.true_anchors.clone();
    truth.sort_unstable();
    (path, truth)
}

fn anchors_of(json: &Value) -> Vec<usize> {
    let mut a: Vec<usize> = json["anchors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap() as usize)
        .collect();
    a.sort_unstable();
    a
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(tree(&path));
        } else {
            out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
        }
    }
    out
}

fn write_frames(dir: &Path, h: usize, w: usize, frames: &[Vec<u8>]) {
    fs::create_dir_all(dir).unwrap();
    for (t, f) in frames.iter().enumerate() {
        write_pgm(dir.join(format!("f{t:03}.pgm")), h, w, f, SampleEncoding::Binary).unwrap();
    }
}

#[test]
fn factorize_recovers_planted_anchors() {
    let dir = TempDir::new().unwrap();
    let (x, truth) = separable_csv(dir.path(), 12, 3, 20, 5);
    let out = dir.path().join("out");
    let res = run(&["factorize", s(&x), "--rank", "3", "--loss", "l1", "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert_eq!(anchors_of(&read_json(out.join("anchors.json"))), truth);
    for f in ["W.csv", "H.csv", "diagnostics.json", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let w = fs::read_to_string(out.join("W.csv")).unwrap();
    assert_eq!(w.lines().count(), 12);
    assert_eq!(w.lines().next().unwrap().split(',').count(), 3);
    let manifest = read_json(out.join("manifest.json"));
    assert_eq!(manifest["config"]["command"], "factorize");
    assert_eq!(manifest["config"]["rank"], 3);
}

#[test]
fn factorize_with_refit_and_bregman_loss() {
    let dir = TempDir::new().unwrap();
    let (x, truth) = separable_csv(dir.path(), 10, 3, 15, 2);
    let out = dir.path().join("out");
    let res = run(&["factorize", s(&x), "--rank", "3", "--loss", "kl", "--refit", "2", "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert_eq!(anchors_of(&read_json(out.join("anchors.json"))), truth);
    let diag = read_json(out.join("diagnostics.json"));
    let trace: Vec<f64> = diag["refit_objective_trace"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(trace.len(), 5);
    assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{trace:?}");
}

#[test]
fn factorize_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let (x, _) = separable_csv(dir.path(), 10, 3, 15, 9);
    let out = dir.path().join("out");
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let res = run(&["factorize", s(&x), "--rank", "3", "--exterior", "rand", "--seed", "4", "--out", s(&out)]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
        snapshots.push(tree(&out));
        fs::remove_dir_all(&out).unwrap();
    }
    assert_eq!(snapshots[0].len(), 5);
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn factorize_rank_zero_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let (x, _) = separable_csv(dir.path(), 6, 2, 8, 1);
    let res = run(&["factorize", s(&x), "--rank", "0", "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("rank"), "{}", stderr(&res));
}

#[test]
fn factorize_names_the_offending_field() {
    let dir = TempDir::new().unwrap();
    let x = dir.path().join("bad.csv");
    fs::write(&x, "1,2,3\n4,oops,6\n").unwrap();
    let res = run(&["factorize", s(&x), "--rank", "1", "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&res), 1);
    let err = stderr(&res);
    assert!(err.contains("line 2") && err.contains("field 2"), "{err}");
}

#[test]
fn factorize_names_a_negative_entry() {
    let dir = TempDir::new().unwrap();
    let x = dir.path().join("neg.csv");
    fs::write(&x, "1,2\n3,-4\n").unwrap();
    let res = run(&["factorize", s(&x), "--rank", "1", "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&res), 1);
    let err = stderr(&res);
    assert!(err.contains("row 1") && err.contains("column 1"), "{err}");
}

#[test]
fn factorize_header_line_is_skipped() {
    let dir = TempDir::new().unwrap();
    let x = dir.path().join("h.csv");
    fs::write(&x, "a,b,c\n1,0,1\n0,1,1\n").unwrap();
    let out = dir.path().join("o");
    let res = run(&["factorize", s(&x), "--rank", "2", "--header", "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert_eq!(anchors_of(&read_json(out.join("anchors.json"))), vec![0, 1]);
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let res = run(&["factorize", s(&dir.path().join("nope.csv")), "--rank", "1"]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("nope.csv"));
}

#[test]
fn unknown_flags_exit_one() {
    assert_eq!(code(&run(&["factorize", "x.csv", "--rank", "1", "--loss", "hinge"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

fn sweep_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn bench_laplace_grid_has_76_points() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let res = run(&[
        "bench", "--noise", "laplace", "--grid", "0:1.5:0.02", "--algos", "l1", "--seeds", "1", "--m", "6", "--r",
        "2", "--n", "6", "--out", s(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let rows = sweep_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 76);
    let last: f64 = rows[75][1].parse().unwrap();
    assert!((last - 1.5).abs() < 1e-12);
}

#[test]
fn bench_exponential_grid_has_21_points_per_algorithm() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let res = run(&[
        "bench", "--noise", "exponential", "--grid", "0:10:0.5", "--seeds", "1", "--m", "6", "--r", "2", "--n", "6",
        "--out", s(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let rows = sweep_rows(&out.join("sweep.csv"));
    // Default algorithms for exponential noise are is and l2.
    assert_eq!(rows.len(), 42);
    assert_eq!(rows.iter().filter(|r| r[0] == "is").count(), 21);
}

#[test]
fn bench_single_cell() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let res = run(&[
        "bench", "--noise", "laplace", "--grid", "0:0:1", "--algos", "l1", "--seeds", "1", "--m", "8", "--r", "3",
        "--n", "10", "--out", s(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let rows = sweep_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][2], "1");
    assert_eq!(rows[0][3], "1");
}

#[test]
fn bench_malformed_grid_exits_one() {
    for grid in ["0:1", "a:1:0.1", "1:0:0.1", "0:1:0"] {
        let res = run(&["bench", "--noise", "laplace", "--grid", grid]);
        assert_eq!(code(&res), 1, "grid {grid}");
    }
}

#[test]
fn dump_config_prints_resolved_options_and_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let res = run(&["--dump-config", "bench", "--noise", "laplace", "--grid", "0:1.5:0.02", "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let cfg: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(cfg["command"], "bench");
    assert_eq!(cfg["seeds"], 10);
    assert_eq!(cfg["m"], 200);
    assert_eq!(cfg["algos"].as_array().unwrap().len(), 2);
    assert_eq!(cfg["solver"]["admm_rho"], 1.0);
    assert_eq!(cfg["threads"], 0);
    assert!(!out.exists());
}

#[test]
fn threads_variable_is_validated_and_recorded() {
    let res = conical_cmd()
        .env("CONICAL_THREADS", "many")
        .args(["--dump-config", "median-check", "frames"])
        .output()
        .unwrap();
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("CONICAL_THREADS"));

    let res = conical_cmd()
        .env("CONICAL_THREADS", "2")
        .args(["--dump-config", "median-check", "frames"])
        .output()
        .unwrap();
    assert_eq!(code(&res), 0);
    let cfg: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(cfg["threads"], 2);
}

#[test]
fn exemplars_hit_planted_columns() {
    let dir = TempDir::new().unwrap();
    let (x, truth) = separable_csv(dir.path(), 15, 4, 30, 11);
    let out = dir.path().join("o");
    let res = run(&["exemplars", s(&x), "--count", "4", "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let json = read_json(out.join("exemplars.json"));
    let mut picked: Vec<usize> =
        json["exemplars"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
    picked.sort_unstable();
    assert_eq!(picked, truth);
}

#[test]
fn bgfg_identical_frames_have_no_foreground() {
    let dir = TempDir::new().unwrap();
    let frames = dir.path().join("frames");
    let frame: Vec<u8> = (0..48).map(|i| (i * 5 + 10) as u8).collect();
    write_frames(&frames, 6, 8, &vec![frame; 5]);
    let out = dir.path().join("o");
    let res = run(&["bgfg", s(&frames), "--rank", "2", "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let scores = FrameStack::read_dir(out.join("foreground")).unwrap();
    assert_eq!(scores.frames(), 5);
    assert!(scores.x.max_abs() <= 1e-6);
    let bg = FrameStack::read_dir(out.join("background")).unwrap();
    let input = FrameStack::read_dir(&frames).unwrap();
    assert_eq!(bg, input);
    assert!(!out.join("roc.csv").exists());
}

#[test]
fn bgfg_moving_block_roc_reaches_the_corner() {
    let dir = TempDir::new().unwrap();
    let spec = SceneSpec {
        frames: 12,
        height: 12,
        width: 12,
        ..SceneSpec::default()
    };
    let (stack, truth) = moving_block_scene(&spec).unwrap();
    let frames = dir.path().join("frames");
    let masks = dir.path().join("truth");
    stack.write_dir(&frames, "f", SampleEncoding::Binary).unwrap();
    truth.write_dir(&masks, "m", SampleEncoding::Binary).unwrap();
    let out = dir.path().join("o");
    // The block is at least 0.4 above the background everywhere, so a
    // one-component model leaves a residual well separated at 0.2.
    let res = run(&[
        "bgfg", s(&frames), "--rank", "1", "--refit", "2", "--truth", s(&masks), "--thresholds", "0:1:0.05",
        "--out", s(&out),
    ]);
    assert!(code(&res) <= 2, "{}", stderr(&res));
    let roc = fs::read_to_string(out.join("roc.csv")).unwrap();
    let mut lines = roc.lines();
    assert_eq!(lines.next(), Some("threshold,tpr,fpr"));
    let at_margin = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .find(|p| (p[0] - 0.2).abs() < 1e-9)
        .unwrap();
    assert_eq!((at_margin[1], at_margin[2]), (1.0, 0.0));
}

#[test]
fn bgfg_rejects_mixed_frame_sizes() {
    let dir = TempDir::new().unwrap();
    let frames = dir.path().join("frames");
    fs::create_dir_all(&frames).unwrap();
    write_pgm(frames.join("a.pgm"), 2, 2, &[1; 4], SampleEncoding::Binary).unwrap();
    write_pgm(frames.join("b.pgm"), 3, 2, &[1; 6], SampleEncoding::Binary).unwrap();
    let res = run(&["bgfg", s(&frames), "--rank", "1", "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("b.pgm"), "{}", stderr(&res));
}

#[test]
fn bgfg_rejects_truth_of_the_wrong_length() {
    let dir = TempDir::new().unwrap();
    let frames = dir.path().join("frames");
    let masks = dir.path().join("truth");
    write_frames(&frames, 2, 2, &[vec![10, 20, 30, 40], vec![10, 20, 30, 200], vec![10, 20, 30, 40]]);
    write_frames(&masks, 2, 2, &[vec![0, 0, 0, 255], vec![0, 0, 0, 0]]);
    let res = run(&["bgfg", s(&frames), "--rank", "1", "--truth", s(&masks), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&res), 1);
}

#[test]
fn median_check_identical_frames_gap_zero() {
    let dir = TempDir::new().unwrap();
    let frames = dir.path().join("frames");
    write_frames(&frames, 3, 3, &vec![vec![7, 50, 90, 0, 255, 128, 1, 2, 3]; 3]);
    let out = dir.path().join("o");
    let res = run(&["median-check", s(&frames), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let report = read_json(out.join("report.json"));
    assert!(report["max_gap"].as_f64().unwrap() <= 1e-9);
    assert_eq!(report["pass"], true);
    assert_eq!(report["even_frames"], false);
}

#[test]
fn median_check_five_frame_scene_passes() {
    let dir = TempDir::new().unwrap();
    let spec = SceneSpec {
        frames: 5,
        height: 8,
        width: 8,
        seed: 1,
        ..SceneSpec::default()
    };
    let (stack, _) = moving_block_scene(&spec).unwrap();
    let frames = dir.path().join("frames");
    stack.write_dir(&frames, "f", SampleEncoding::Binary).unwrap();
    let out = dir.path().join("o");
    let res = run(&["median-check", s(&frames), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let report = read_json(out.join("report.json"));
    assert_eq!(report["pass"], true);
    assert_eq!(report["frames"], 5);
}

#[test]
fn median_check_even_frames_checks_the_interval() {
    let dir = TempDir::new().unwrap();
    let frames = dir.path().join("frames");
    write_frames(&frames, 1, 3, &[vec![10, 0, 5], vec![20, 100, 5], vec![200, 50, 9], vec![0, 7, 9]]);
    let out = dir.path().join("o");
    let res = run(&["median-check", s(&frames), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let report = read_json(out.join("report.json"));
    assert_eq!(report["even_frames"], true);
    assert_eq!(report["pass"], true);
}
