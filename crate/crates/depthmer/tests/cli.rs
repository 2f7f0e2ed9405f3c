//! End-to-end checks of the command line binary: every subcommand runs
//! against a small generated corpus, outputs land where documented, and
//! exit codes distinguish data failures from usage errors.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn depthmer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depthmer"))
        .args(args)
        .env_remove("DEPTHMER_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, expected: i32) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(
        out.status.code(),
        Some(expected),
        "unexpected exit code, stderr:\n{stderr}"
    );
}

/// Small fast corpus shared by most tests below.
fn make_corpus(dir: &Path) -> String {
    let out = dir.join("corpus");
    let result = depthmer(&[
        "synth",
        "--out",
        out.to_str().unwrap(),
        "--subjects",
        "2",
        "--frame-width",
        "96",
        "--frame-height",
        "96",
    ]);
    assert_code(&result, 0);
    out.join("manifest.toml").to_str().unwrap().to_string()
}

#[test]
fn synth_defaults_write_a_loadable_corpus() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("corpus");
    let result = depthmer(&[
        "synth",
        "--out",
        out.to_str().unwrap(),
        "--frame-width",
        "64",
        "--frame-height",
        "64",
    ]);
    assert_code(&result, 0);
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(
        stdout.contains("24 samples (8 subjects x 3 classes x 1 repetitions)"),
        "defaults changed: {stdout}"
    );
    assert!(out.join("manifest.toml").exists());
    assert!(out.join("synth.toml").exists());
    assert!(out.join("synth_s01_chin_r01_onset.pgm").exists());
}

#[test]
fn synth_is_deterministic_across_runs() {
    let dir = TempDir::new().unwrap();
    let args = |out: &Path| {
        vec![
            "synth".to_string(),
            "--out".into(),
            out.to_str().unwrap().into(),
            "--subjects".into(),
            "1".into(),
            "--frame-width".into(),
            "64".into(),
            "--frame-height".into(),
            "64".into(),
        ]
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let argv: Vec<String> = args(out);
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        assert_code(&depthmer(&argv), 0);
    }
    for name in ["manifest.toml", "synth_s01_chin_r01_apex.pgm"] {
        let left = std::fs::read(a.join(name)).unwrap();
        let right = std::fs::read(b.join(name)).unwrap();
        assert_eq!(left, right, "{name} differs between identical runs");
    }
}

#[test]
fn extract_writes_summaries_and_caches() {
    let dir = TempDir::new().unwrap();
    let manifest = make_corpus(dir.path());
    let out = dir.path().join("features");
    let result = depthmer(&[
        "extract",
        "--manifest",
        &manifest,
        "--out",
        out.to_str().unwrap(),
        "--k",
        "128",
    ]);
    assert_code(&result, 0);
    let summary = std::fs::read_to_string(out.join("extract_summary.txt")).unwrap();
    assert!(summary.contains("extracted 6 of 6 samples"));
    assert!(summary.contains("synth_s02_right_cheek_r01"));
    assert!(out.join("extract_summary.toml").exists());
    let cached = std::fs::read_dir(out.join("cache")).unwrap().count();
    assert_eq!(cached, 6, "one cache record per sample");
}

#[test]
fn extract_reports_broken_samples_and_keeps_going() {
    let dir = TempDir::new().unwrap();
    let manifest = make_corpus(dir.path());
    let victim = dir.path().join("corpus/synth_s01_chin_r01_apex.pgm");
    std::fs::remove_file(&victim).unwrap();

    let out = dir.path().join("features");
    let result = depthmer(&[
        "extract",
        "--manifest",
        &manifest,
        "--out",
        out.to_str().unwrap(),
        "--k",
        "128",
    ]);
    assert_code(&result, 1);
    let summary = std::fs::read_to_string(out.join("extract_summary.txt")).unwrap();
    assert!(summary.contains("extracted 5 of 6 samples"));
    assert!(summary.contains("failures:"));
    assert!(summary.contains("synth_s01_chin_r01"));
}

#[test]
fn loso_reports_are_reproducible_and_checkpoints_load() {
    let dir = TempDir::new().unwrap();
    let manifest = make_corpus(dir.path());
    let run = |out: &Path| {
        depthmer(&[
            "loso",
            "--manifest",
            &manifest,
            "--out",
            out.to_str().unwrap(),
            "--k",
            "128",
            "--model",
            "pointnet2-lite",
            "--epochs",
            "3",
            "--batch-size",
            "3",
            "--save-checkpoints",
            "--workers",
            "2",
        ])
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_code(&run(&a), 0);
    assert_code(&run(&b), 0);
    let left = std::fs::read(a.join("report.toml")).unwrap();
    let right = std::fs::read(b.join("report.toml")).unwrap();
    assert_eq!(left, right, "same seeds must give byte-identical reports");

    for subject in ["synth_s01", "synth_s02"] {
        let path = a.join("checkpoints").join(format!("{subject}.dmck"));
        let model = depthmer::io::read_checkpoint(&path).unwrap();
        assert!(model.param_count() > 0);
    }
    let text = std::fs::read_to_string(a.join("report.txt")).unwrap();
    assert!(text.contains("UF1"));
    assert!(text.contains("pooled confusion matrix"));
}

#[test]
fn ablation_covers_the_requested_grid() {
    let dir = TempDir::new().unwrap();
    let manifest = make_corpus(dir.path());
    let out = dir.path().join("ablate");
    let result = depthmer(&[
        "ablate",
        "--manifest",
        &manifest,
        "--out",
        out.to_str().unwrap(),
        "--model",
        "pointnet2-lite",
        "--epochs",
        "2",
        "--batch-size",
        "3",
        "--selections",
        "sorted,random",
        "--k-values",
        "64,128",
    ]);
    assert_code(&result, 0);
    let table = std::fs::read_to_string(out.join("ablation.txt")).unwrap();
    for needle in ["sorted", "random", " 64 ", " 128 "] {
        assert!(table.contains(needle), "missing {needle:?} in:\n{table}");
    }
    let doc: toml::Value =
        toml::from_str(&std::fs::read_to_string(out.join("ablation.toml")).unwrap()).unwrap();
    assert_eq!(doc["cells"].as_array().unwrap().len(), 4);
}

#[test]
fn cross_corpus_smoke_run_warns_about_identical_ids() {
    let dir = TempDir::new().unwrap();
    let manifest = make_corpus(dir.path());
    let out = dir.path().join("cross");
    let result = depthmer(&[
        "cross",
        "--train-manifest",
        &manifest,
        "--test-manifest",
        &manifest,
        "--out",
        out.to_str().unwrap(),
        "--k",
        "128",
        "--model",
        "pointnet2-lite",
        "--epochs",
        "2",
        "--batch-size",
        "3",
    ]);
    assert_code(&result, 0);
    let text = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.contains("training accuracy"), "smoke warning missing:\n{text}");
}

#[test]
fn export_ply_produces_a_readable_cloud() {
    let dir = TempDir::new().unwrap();
    let manifest = make_corpus(dir.path());
    let out = dir.path().join("cloud.ply");
    let result = depthmer(&[
        "export-ply",
        "--manifest",
        &manifest,
        "--sample",
        "synth_s01_chin_r01",
        "--out",
        out.to_str().unwrap(),
        "--k",
        "128",
    ]);
    assert_code(&result, 0);
    let bytes = std::fs::read(&out).unwrap();
    let header = String::from_utf8_lossy(&bytes[..200.min(bytes.len())]);
    assert!(header.starts_with("ply\n"));
    assert!(header.contains("element vertex 128"));

    let missing = depthmer(&[
        "export-ply",
        "--manifest",
        &manifest,
        "--sample",
        "no_such_sample",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_code(&missing, 2);
}

#[test]
fn usage_and_data_errors_use_distinct_exit_codes() {
    let dir = TempDir::new().unwrap();
    let manifest = make_corpus(dir.path());
    let out = dir.path().join("x");

    let bad_flag = depthmer(&["loso", "--bogus"]);
    assert_code(&bad_flag, 2);

    let missing_manifest = depthmer(&[
        "loso",
        "--manifest",
        "/no/such/manifest.toml",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_code(&missing_manifest, 1);

    let contradiction = depthmer(&[
        "extract",
        "--manifest",
        &manifest,
        "--out",
        out.to_str().unwrap(),
        "--no-cache",
    ]);
    assert_code(&contradiction, 2);

    let oversized_seed = depthmer(&[
        "extract",
        "--manifest",
        &manifest,
        "--out",
        out.to_str().unwrap(),
        "--rng-seed",
        "9300000000000000000",
    ]);
    assert_code(&oversized_seed, 2);
}
