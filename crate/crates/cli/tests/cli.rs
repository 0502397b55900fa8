//! End-to-end checks of the `pothole` binary: pipeline closure on clean
//! scenes, byte-identical reruns, and the exit-code contract.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pothole_core::{load_disparity, save_disparity, DisparityImage, LabelMask};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pothole"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn pothole")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "pothole {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: PathBuf) -> String {
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Column `idx` of the first data row for `stem` in a models.csv.
fn csv_field(csv: &str, stem: &str, idx: usize) -> f64 {
    let row = csv
        .lines()
        .find(|l| l.starts_with(&format!("{stem},")))
        .unwrap_or_else(|| panic!("no row for {stem} in:\n{csv}"));
    row.split(',').nth(idx).unwrap().parse().unwrap()
}

#[test]
fn pipeline_closure_is_exact_on_noise_free_flat_scenes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &[
        "synth", "--out", "data", "--count", "5", "--seed", "42",
        "--noise-sigma", "0", "--profile", "flat", "--scale", "1/32", "--jobs", "2",
    ]);
    ok(d, &["transform", "data/training/disp", "--out", "tdisp", "--scale", "1/32", "--jobs", "2"]);
    ok(d, &["detect", "tdisp", "--out", "masks", "--scale", "1/32"]);
    ok(d, &["eval", "--pred", "masks", "--gt", "data/training/label", "--out", "scores.csv"]);

    let scores = read(d.join("scores.csv"));
    let mut rows = 0;
    for line in scores.lines().skip(1) {
        rows += 1;
        let iou: f64 = line.split(',').nth(6).unwrap().parse().unwrap();
        assert_eq!(iou, 1.0, "imperfect closure: {line}");
    }
    assert_eq!(rows, 5);
    let summary = read(d.join("scores-summary.csv"));
    assert!(summary.lines().nth(1).unwrap().starts_with("1.0000000000000000e0,1.0000000000000000e0,5"));
}

#[test]
fn transform_logs_exact_fits_on_integer_grid_scenes() {
    // A plane with φ = 0, ϰ = 1, κ = 30 takes integer values (v + 30), which
    // scale 1 stores exactly — so the refit must be exact too.
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("scenes.spec"),
        "# plane-only frames\nwidth=320 height=200 phi=0.0 varkappa=1.0 kappa=30.0 seed=5\n\
         width=320 height=200 phi=0.0 varkappa=1.0 kappa=40.0 seed=6\n",
    )
    .unwrap();
    ok(d, &["synth", "--out", "data", "--spec", "scenes.spec", "--scale", "1"]);
    for extra in [None, Some("--closed-form")] {
        let out_dir = extra.map_or("t-grid", |_| "t-closed");
        let mut args = vec!["transform", "data/training/disp", "--out", out_dir, "--scale", "1"];
        args.extend(extra);
        ok(d, &args);
        let csv = read(d.join(out_dir).join("models.csv"));
        for stem in ["scene_000", "scene_001"] {
            assert!(csv_field(&csv, stem, 1).abs() < 1e-8, "phi drifted: {csv}");
            assert!((csv_field(&csv, stem, 2) - 1.0).abs() < 1e-9);
            assert!(csv_field(&csv, stem, 5) <= 1e-12, "inexact fit: {csv}");
        }
        assert!((csv_field(&csv, "scene_000", 3) - 30.0).abs() < 1e-8);
        assert!((csv_field(&csv, "scene_001", 3) - 40.0).abs() < 1e-8);

        // The flattened image is constant (its zero floor stores as one raw step).
        let flat = load_disparity(&d.join(out_dir).join("scene_000.png"), 1.0).unwrap();
        assert!(flat.values().iter().all(|&v| v == 1.0));
    }
}

#[test]
fn reruns_and_job_counts_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for (root, jobs) in [("a", "1"), ("b", "3")] {
        ok(d, &[
            "synth", "--out", root, "--count", "3", "--seed", "9",
            "--noise-sigma", "0.3", "--invalid-fraction", "0.02", "--scale", "1/32",
            "--jobs", jobs,
        ]);
    }
    assert_eq!(read(d.join("a/training/scenes.txt")), read(d.join("b/training/scenes.txt")));
    for sub in ["disp", "label", "rgb"] {
        for i in 0..3 {
            let f = format!("training/{sub}/scene_{i:03}.png");
            assert_eq!(fs::read(d.join("a").join(&f)).unwrap(), fs::read(d.join("b").join(&f)).unwrap(), "{f}");
        }
    }
    for (out, jobs) in [("ta", "1"), ("tb", "3")] {
        ok(d, &["transform", "a/training/disp", "--out", out, "--scale", "1/32", "--jobs", jobs]);
    }
    assert_eq!(read(d.join("ta/models.csv")), read(d.join("tb/models.csv")));
    assert_eq!(
        fs::read(d.join("ta/scene_001.png")).unwrap(),
        fs::read(d.join("tb/scene_001.png")).unwrap()
    );
    for (out, jobs) in [("ma", "1"), ("mb", "3")] {
        ok(d, &["detect", "ta", "--out", out, "--scale", "1/32", "--jobs", jobs]);
    }
    assert_eq!(
        fs::read(d.join("ma/scene_002.png")).unwrap(),
        fs::read(d.join("mb/scene_002.png")).unwrap()
    );
}

#[test]
fn vdisp_emits_histogram_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let img = DisparityImage::new(4, 3, vec![
        1.0, 1.5, 2.0, 9.0,
        1.0, 1.0, f64::NAN, 9.5,
        3.0, 3.0, 3.0, 3.0,
    ])
    .unwrap();
    save_disparity(&d.join("in.png"), &img, 1.0).unwrap();
    ok(d, &["vdisp", "in.png", "--out", "hist/out", "--scale", "1", "--bin-width", "1"]);
    let csv = read(d.join("hist/out.csv"));
    assert_eq!(csv.lines().next().unwrap(), "v,g_bin,count");
    assert!(csv.lines().any(|l| l == "2,3,4"), "row 2 has four 3.0s:\n{csv}");
    let pgm = fs::read(d.join("hist/out.pgm")).unwrap();
    assert_eq!(&pgm[..2], b"P5");
}

#[test]
fn detect_honors_min_area_and_identity_fallback() {
    // Flattened image by hand (no .model sidecar): flat band at 10 with a
    // 2-pixel dip and a 5×4 dip. Only the big one survives --min-area 6.
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (w, h) = (24, 12);
    let mut vals = vec![10.0; w * h];
    vals[3 * w + 4] = 1.0;
    vals[3 * w + 5] = 1.0;
    for v in 6..10 {
        for u in 12..17 {
            vals[v * w + u] = 1.0;
        }
    }
    let img = DisparityImage::new(w, h, vals).unwrap();
    save_disparity(&d.join("t.png"), &img, 1.0 / 32.0).unwrap();
    ok(d, &["detect", "t.png", "--out", "m", "--scale", "1/32", "--min-area", "6"]);
    let mask = LabelMask::load(&d.join("m/t.png")).unwrap();
    assert_eq!(mask.area(), 20);
    assert!(mask.get(13, 7));
    assert!(!mask.get(4, 3));
}

#[test]
fn eval_flags_missing_predictions_and_scores_the_rest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::create_dir_all(d.join("gt")).unwrap();
    fs::create_dir_all(d.join("pred")).unwrap();
    let mut m = LabelMask::empty(6, 4);
    m.set(2, 2, true);
    m.save(&d.join("gt/a.png")).unwrap();
    m.save(&d.join("gt/b.png")).unwrap();
    m.save(&d.join("pred/a.png")).unwrap();
    let out = run(d, &["eval", "--pred", "pred", "--gt", "gt", "--out", "s.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eval: b:"));
    let csv = read(d.join("s.csv"));
    assert_eq!(csv.lines().count(), 2, "header + the one scored stem:\n{csv}");
    assert!(csv.lines().nth(1).unwrap().starts_with("a,1,0,0,23,"));
    assert!(read(d.join("s-summary.csv")).contains("\n1.0000000000000000e0,1.0000000000000000e0,1"));
}

#[test]
fn transform_continues_past_unreadable_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::create_dir_all(d.join("in")).unwrap();
    let img = DisparityImage::new(
        8,
        6,
        (0..48).map(|i| 20.0 + (i / 8) as f64).collect(),
    )
    .unwrap();
    save_disparity(&d.join("in/good.png"), &img, 1.0 / 256.0).unwrap();
    fs::write(d.join("in/bad.png"), b"not a png").unwrap();
    let out = run(d, &["transform", "in", "--out", "t", "--scale", "1/256"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("transform: bad:"));
    let csv = read(d.join("t/models.csv"));
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("good,"));
    assert!(d.join("t/good.png").is_file() && d.join("t/good.model").is_file());
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for args in [
        &["transform", "x", "--out", "y", "--scale", "0"] as &[&str],
        &["synth", "--out", "y"],
        &["synth", "--out", "y", "--count", "2"],
        &["losses"],
        &["attn-demo", "--scheme", "dam,cam"],
        &["eval", "--pred", "p", "--gt", "g", "--out", "o.csv", "--bogus"],
    ] {
        let out = run(d, args);
        assert_eq!(out.status.code(), Some(2), "pothole {args:?}");
    }
}

#[test]
fn losses_prints_frozen_evaluations() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("real.csv"), "0.5\n0.5\n").unwrap();
    fs::write(d.join("fake.csv"), "0.5,0.5\n").unwrap();
    fs::create_dir_all(d.join("o")).unwrap();
    fs::create_dir_all(d.join("r")).unwrap();
    let img = DisparityImage::new(3, 2, vec![4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
    save_disparity(&d.join("o/x.png"), &img, 1.0).unwrap();
    save_disparity(&d.join("r/x.png"), &img, 1.0).unwrap();
    let out = ok(d, &[
        "losses", "--d-real", "real.csv", "--d-fake", "fake.csv",
        "--original", "o", "--reconstructed", "r", "--terms", "1,2,3,4,-5,-5",
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        stdout,
        "gan_loss=-1.3862943611198906e0\ncycle_loss=0.0000000000000000e0\nfull_objective=0.0000000000000000e0\n"
    );
}
