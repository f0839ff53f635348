use std::path::{Path, PathBuf};

use detcal_cli::{run_with, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_with(std::iter::once("detcal").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes `manifest.toml` plus one truth and one detection file per scene.
fn write_dataset(dir: &Path, scenes: &[(&str, &str)]) -> PathBuf {
    std::fs::create_dir_all(dir.join("gt")).unwrap();
    std::fs::create_dir_all(dir.join("det")).unwrap();
    let mut manifest = String::new();
    for (i, (truths, dets)) in scenes.iter().enumerate() {
        std::fs::write(dir.join(format!("gt/{i}.txt")), truths).unwrap();
        std::fs::write(dir.join(format!("det/{i}.txt")), dets).unwrap();
        manifest.push_str(&format!(
            "[[entry]]\nimage_id = \"img{i}\"\ntruth = \"gt/{i}.txt\"\ndetections = \"det/{i}.txt\"\n"
        ));
    }
    let path = dir.join("manifest.toml");
    std::fs::write(&path, manifest).unwrap();
    path
}

fn csv_rows(stdout: &str, section: &str) -> Vec<Vec<String>> {
    let marker = format!("# [{section}]");
    stdout
        .lines()
        .skip_while(|l| *l != marker)
        .skip(2)
        .take_while(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn simulate(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["simulate", "--out", s(dir)];
    args.extend_from_slice(extra);
    let (code, _, err) = cli(&args);
    assert_eq!(code, EXIT_OK, "{err}");
    dir.join("manifest.toml")
}

#[test]
fn metrics_on_single_perfect_detection() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(dir.path(), &[("0 0.5 0.5 0.2 0.2\n", "0 0.9 0.5 0.5 0.2 0.2\n")]);
    let (code, out, _) = cli(&["metrics", "--manifest", s(&m), "--format", "csv"]);
    assert_eq!(code, EXIT_OK);
    let rows = csv_rows(&out, "metrics");
    assert_eq!(rows.last().unwrap(), &["ALL", "1", "0", "0", "1", "1", "1"]);
    assert!(out.contains("# iou_threshold = 0.5"));
}

#[test]
fn ece_on_perfect_simulated_stream() {
    let dir = tempfile::tempdir().unwrap();
    let m = simulate(dir.path(), &["--detections", "100000", "--seed", "3"]);
    let (code, out, _) = cli(&["ece", "--manifest", s(&m), "--format", "csv"]);
    assert_eq!(code, EXIT_OK);
    let rows = csv_rows(&out, "ece");
    let e: f64 = rows[0][3].parse().unwrap();
    assert!(e <= 0.01, "{e}");
    assert_eq!(rows[0][2], "10");
}

#[test]
fn pipeline_lowers_ece_of_overconfident_detector_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let m = simulate(&dir.path().join("sim"), &["--detections", "30000", "--link", "power:2"]);
    let out_dir = dir.path().join("report");
    let (code, out, err) = cli(&["pipeline", "--manifest", s(&m), "--format", "csv", "--out", s(&out_dir)]);
    assert_eq!(code, EXIT_OK, "{err}");
    let row = &csv_rows(&out, "calibration")[0];
    let (before, after): (f64, f64) = (row[3].parse().unwrap(), row[4].parse().unwrap());
    assert!(after < before, "{before} -> {after}");
    for f in ["report.csv", "report.txt", "config.toml", "model_manifest.toml"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let config = std::fs::read_to_string(out_dir.join("config.toml")).unwrap();
    assert!(config.contains("fit_fraction = 0.6"));
    assert!(config.contains("features = \"conf,cx,cy\""));
    assert_eq!(std::fs::read_to_string(out_dir.join("report.csv")).unwrap(), out);
}

#[test]
fn pipeline_reports_difference_row_for_two_detectors() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(&dir.path().join("a"), &["--scenes", "1500", "--link", "power:2", "--seed", "1"]);
    let b = simulate(&dir.path().join("b"), &["--scenes", "1500", "--link", "power:0.5", "--seed", "2"]);
    let (code, out, err) = cli(&[
        "pipeline",
        "--manifest",
        s(&a),
        "--manifest",
        s(&b),
        "--logit-confidence",
        "--with-prior-term",
        "--format",
        "json-lines",
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let rows: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows[0]["config"]["labels"], "manifest1, manifest2");
    let cal: Vec<&serde_json::Value> = rows.iter().filter(|r| r["section"] == "calibration").collect();
    assert_eq!(cal.len(), 3);
    assert_eq!(cal[2]["scope"], "difference");
    let gap = (cal[0]["ece"].as_f64().unwrap() - cal[1]["ece"].as_f64().unwrap()).abs();
    assert!((cal[2]["ece"].as_f64().unwrap() - gap).abs() < 1e-15);
    assert_eq!(rows.iter().filter(|r| r["section"] == "metrics").count(), 2);
}

#[test]
fn fit_then_apply_matches_ece_with_model() {
    let dir = tempfile::tempdir().unwrap();
    let m = simulate(&dir.path().join("sim"), &["--scenes", "2000", "--link", "power:2", "--seed", "4"]);
    let model = dir.path().join("model.toml");
    let (code, out, err) = cli(&["calibrate-fit", "--manifest", s(&m), "--model", s(&model), "--format", "csv"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let row = &csv_rows(&out, "fit")[0];
    let (n_fit, n_test): (usize, usize) = (row[0].parse().unwrap(), row[1].parse().unwrap());
    assert!(n_fit > n_test && n_test > 0);

    let applied = dir.path().join("applied");
    let (code, _, err) = cli(&["calibrate-apply", "--manifest", s(&m), "--model", s(&model), "--out", s(&applied)]);
    assert_eq!(code, EXIT_OK, "{err}");
    let (_, via_files, _) = cli(&["ece", "--manifest", s(&applied.join("manifest.toml")), "--format", "csv"]);
    let (_, via_model, _) = cli(&["ece", "--manifest", s(&m), "--model", s(&model), "--format", "csv"]);
    let e_files: f64 = csv_rows(&via_files, "ece")[0][3].parse().unwrap();
    let e_model: f64 = csv_rows(&via_model, "ece")[0][3].parse().unwrap();
    // files store shortest round-trip decimals, so the confidences are identical
    assert_eq!(e_files, e_model);
}

#[test]
fn match_and_reliability_tables() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(
        dir.path(),
        &[
            ("0 0.5 0.5 0.2 0.2\n", "0 0.9 0.5 0.5 0.2 0.2\n0 0.8 0.51 0.5 0.2 0.2\n"),
            ("", "1 0.3 0.2 0.2 0.1 0.1\n"),
        ],
    );
    let (code, out, _) = cli(&["match", "--manifest", s(&m), "--format", "csv"]);
    assert_eq!(code, EXIT_OK);
    let rows = csv_rows(&out, "matches");
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][..5], ["img0", "0", "0", "0.9", "0"]);
    assert_eq!(rows[0][6], "1");
    assert_eq!(rows[1][4], "");
    assert_eq!(rows[1][6], "0");
    assert_eq!(rows[2][0], "img1");

    let (code, out, _) = cli(&["reliability", "--manifest", s(&m), "--bins", "4", "--format", "csv"]);
    assert_eq!(code, EXIT_OK);
    let rows = csv_rows(&out, "reliability");
    assert_eq!(rows.len(), 4);
    let counts: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(counts, ["0", "1", "0", "2"]);
}

#[test]
fn simulate_spec_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, "n_scenes = 40\nconfidence_link = \"affine:0.5,0.2\"\ntruths_per_scene = \"2\"\nseed = 8\n")
        .unwrap();
    let out = dir.path().join("sim");
    let (code, stdout, err) = cli(&["simulate", "--spec", s(&spec), "--scenes", "25", "--out", s(&out), "--format", "csv"]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(stdout.contains("# confidence_link = affine:0.5,0.2"));
    assert!(stdout.contains("# n_scenes = 25"));
    let row = &csv_rows(&stdout, "simulate")[0];
    assert_eq!(row[..2], ["25", "50"]);
    let m = detcal::DatasetManifest::load(&out.join("manifest.toml")).unwrap();
    assert_eq!(m.len(), 25);

    std::fs::write(&spec, "bogus = 1\n").unwrap();
    let (code, _, _) = cli(&["simulate", "--spec", s(&spec), "--out", s(&out)]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn simulate_is_reproducible_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(&dir.path().join("a"), &["--scenes", "30", "--seed", "12"]);
    let b = simulate(&dir.path().join("b"), &["--scenes", "30", "--seed", "12"]);
    for i in [0, 17, 29] {
        let f = format!("detections/scene_{i:06}.txt");
        assert_eq!(
            std::fs::read(a.parent().unwrap().join(&f)).unwrap(),
            std::fs::read(b.parent().unwrap().join(&f)).unwrap()
        );
    }
}

#[test]
fn augment_reports_entries_without_images() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::create_dir_all(root.join("img")).unwrap();
    let img = detcal::augment::ImageRaster::filled(8, 6, 0.5).unwrap();
    detcal::augment::write_image(&root.join("img/a.png"), &img, detcal::augment::BitDepth::Eight).unwrap();
    std::fs::write(root.join("a.txt"), "0 0.25 0.5 0.2 0.2\n").unwrap();
    std::fs::write(
        root.join("m.toml"),
        "[[entry]]\nimage_id = \"a\"\nimage = \"img/a.png\"\ntruth = \"a.txt\"\n\
         [[entry]]\nimage_id = \"b\"\ntruth = \"a.txt\"\n",
    )
    .unwrap();
    let out = root.join("aug");
    let (code, _, err) = cli(&["augment", "--manifest", s(&root.join("m.toml")), "--out", s(&out)]);
    assert_eq!(code, EXIT_DATA);
    assert!(err.contains("entry `b`"), "{err}");
    let m = detcal::DatasetManifest::load(&out.join("manifest.toml")).unwrap();
    let ids: Vec<&str> = m.entries.iter().map(|e| e.image_id.as_str()).collect();
    assert_eq!(ids, ["a", "a_blur", "a_flip"]);
    assert_eq!(std::fs::read_to_string(out.join("labels/a_flip.txt")).unwrap(), "0 0.75 0.5 0.2 0.2\n");
    assert!(std::fs::read_to_string(out.join("config.toml")).unwrap().contains("blur_length = 7"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(dir.path(), &[("0 0.5 0.5 0.2 0.2\n", "0 0.9 0.5 0.5 0.2 0.2\n")]);
    let m = s(&m);
    for args in [
        vec!["frobnicate"],
        vec!["metrics", "--manifest", m, "--bogus"],
        vec!["metrics"],
        vec!["ece", "--manifest", m, "--bins", "0"],
        vec!["ece", "--manifest", m, "--bins", "ten"],
        vec!["metrics", "--manifest", m, "--iou-threshold", "1.5"],
        vec!["metrics", "--manifest", m, "--format", "xml"],
        vec!["pipeline", "--manifest", m, "--features", "conf,area"],
        vec!["pipeline", "--manifest", m, "--fit-fraction", "1.5"],
        vec!["pipeline", "--manifest", m, "--fit-fraction", "1"],
        vec!["pipeline", "--manifest", m, "--label", "a", "--label", "b"],
        vec!["augment", "--manifest", m, "--blur-length", "4", "--out", "x"],
        vec!["simulate", "--link", "power:-2", "--out", "x"],
        vec!["pipeline", "--manifest", m, "--lambda", "0"],
    ] {
        let (code, _, err) = cli(&args);
        assert_eq!(code, EXIT_USAGE, "{args:?}: {err}");
        assert!(!err.is_empty());
    }
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = cli(&["metrics", "--manifest", s(&dir.path().join("missing.toml"))]);
    assert_eq!(code, EXIT_DATA);
    assert!(err.contains("missing.toml"));

    let bad = write_dataset(&dir.path().join("bad"), &[("0 0.5 0.5 0.2 0.2\n", "0 1.7 0.5 0.5 0.2 0.2\n")]);
    let (code, _, err) = cli(&["metrics", "--manifest", s(&bad)]);
    assert_eq!(code, EXIT_DATA);
    assert!(err.contains("det/0.txt:1:3") && err.contains("confidence"), "{err}");

    // too few samples of each class to fit a 3-dimensional model
    let small = write_dataset(&dir.path().join("small"), &[("0 0.5 0.5 0.2 0.2\n", "0 0.9 0.5 0.5 0.2 0.2\n")]);
    let (code, _, err) = cli(&["pipeline", "--manifest", s(&small)]);
    assert_eq!(code, EXIT_DATA, "{err}");
}

#[test]
fn singular_covariance_exits_4() {
    // Every correct detection is the same point, as is every incorrect one,
    // so the covariances are just the ridge; a subnormal ridge overflows the
    // inverse.
    let dir = tempfile::tempdir().unwrap();
    let scene = ("0 0.5 0.5 0.2 0.2\n", "0 0.9 0.5 0.5 0.2 0.2\n0 0.3 0.1 0.1 0.1 0.1\n");
    let m = write_dataset(dir.path(), &[scene; 20]);
    let (code, _, err) = cli(&["pipeline", "--manifest", s(&m), "--lambda", "1e-320"]);
    assert_eq!(code, EXIT_NUMERIC, "{err}");
    let (code, _, err) = cli(&["pipeline", "--manifest", s(&m)]);
    assert_eq!(code, EXIT_OK, "{err}");
}

#[test]
fn help_and_version_exit_0() {
    let (code, out, _) = cli(&["--help"]);
    assert_eq!(code, EXIT_OK);
    for sub in ["augment", "calibrate-fit", "calibrate-apply", "pipeline", "simulate", "reliability"] {
        assert!(out.contains(sub), "{sub}");
    }
    assert_eq!(cli(&["--version"]).0, EXIT_OK);
    assert_eq!(cli(&["pipeline", "--help"]).0, EXIT_OK);
}
