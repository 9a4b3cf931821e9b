//! Black-box CLI behavior: exit codes, cache resumption, format checks, and
//! the f32 training path. Everything drives the real binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_abdoshape"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small shared cohort (built once per test that needs it).
fn make_cohort(dir: &Path) -> PathBuf {
    let cohort = dir.join("cohort");
    let out = bin()
        .args([
            "gen-cohort",
            "--per-class",
            "4",
            "--seed",
            "11",
            "--out-dir",
            cohort.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    ok(&out);
    cohort.join("manifest.json")
}

#[test]
fn usage_errors_exit_with_code_one() {
    // Missing required argument.
    let out = bin().args(["train"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    // Unknown flag.
    let out = bin().args(["gen-cohort", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    // Constraint clap cannot express.
    let dir = tmp("usage");
    let out = bin()
        .args([
            "gen-cohort",
            "--per-class",
            "1",
            "--out-dir",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    // eval --half test without a split seed.
    let out = bin()
        .args([
            "eval", "--model", "x.json", "--manifest", "m.json", "--features-dir", ".",
            "--out-dir", ".", "--half", "test",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_with_code_two() {
    let dir = tmp("data-errors");
    // Nonexistent manifest.
    let out = bin()
        .args([
            "featurize",
            "--manifest",
            dir.join("missing.json").to_str().unwrap(),
            "--method",
            "clouds",
            "--out-dir",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    // Corrupt voxel file.
    let bad = dir.join("bad.vox");
    std::fs::write(&bad, b"NOTAVOXFILE").unwrap();
    let out = bin()
        .args([
            "eigenfunctions",
            "--voxel",
            bad.to_str().unwrap(),
            "--k",
            "3",
            "--out-dir",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_code_three() {
    let dir = tmp("numerical");
    let manifest = make_cohort(&dir);
    let vox = manifest.parent().unwrap().join("vox/s0000_liver.vox");
    // An unattainable residual tolerance forces solver non-convergence on
    // the iterative path.
    let out = bin()
        .args([
            "eigenfunctions",
            "--voxel",
            vox.to_str().unwrap(),
            "--k",
            "3",
            "--tol",
            "1e-15",
            "--out-dir",
            dir.join("eig").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn featurize_skips_up_to_date_outputs() {
    let dir = tmp("resume");
    let manifest = make_cohort(&dir);
    let features = dir.join("features");
    let args = [
        "featurize",
        "--manifest",
        manifest.to_str().unwrap(),
        "--method",
        "clouds",
        "--points",
        "32",
        "--out-dir",
        features.to_str().unwrap(),
    ];
    let first = bin().args(args).output().unwrap();
    ok(&first);
    assert!(!String::from_utf8_lossy(&first.stdout).contains("skipped"));
    let second = bin().args(args).output().unwrap();
    ok(&second);
    let stdout = String::from_utf8_lossy(&second.stdout);
    assert!(
        stdout.contains("skipped 16 up-to-date outputs"),
        "stdout: {stdout}"
    );
    // Clouds have exactly the requested point count.
    let cloud = abdoshape::io::read_pcl(&features.join("clouds/s0000_liver.pcl")).unwrap();
    assert_eq!(cloud.len(), 32);
}

#[test]
fn gen_cohort_is_hash_stable() {
    let dir = tmp("gen-stable");
    let a = dir.join("a");
    let b = dir.join("b");
    for out_dir in [&a, &b] {
        let out = bin()
            .args([
                "gen-cohort",
                "--per-class",
                "3",
                "--seed",
                "21",
                "--out-dir",
                out_dir.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        ok(&out);
    }
    for name in [
        "manifest.json",
        "vox/s0000_liver.vox",
        "vox/s0003_spleen.vox",
    ] {
        let fa = std::fs::read(a.join(name)).unwrap();
        let fb = std::fs::read(b.join(name)).unwrap();
        assert_eq!(fa, fb, "{name} differs between identical seeds");
    }
}

#[test]
fn f32_training_path_works() {
    let dir = tmp("f32");
    let manifest = make_cohort(&dir);
    let features = dir.join("features");
    let out = bin()
        .args([
            "featurize",
            "--manifest",
            manifest.to_str().unwrap(),
            "--method",
            "clouds",
            "--points",
            "32",
            "--out-dir",
            features.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    ok(&out);
    let out = bin()
        .args([
            "--precision",
            "f32",
            "train",
            "--manifest",
            manifest.to_str().unwrap(),
            "--features-dir",
            features.to_str().unwrap(),
            "--method",
            "mspnet",
            "--split-seed",
            "1",
            "--points",
            "16",
            "--point-widths",
            "8,8",
            "--tnet-point-widths",
            "4,8",
            "--tnet-dense-widths",
            "8",
            "--head-widths",
            "8,2",
            "--epochs",
            "3",
            "--batch",
            "4",
            "--out-dir",
            dir.join("train").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    ok(&out);
    // The checkpoint reloads under both precisions.
    let model_path = dir.join("train/model.mspnet.tnsr");
    assert!(model_path.exists());
    let out = bin()
        .args([
            "--precision",
            "f32",
            "eval",
            "--model",
            model_path.to_str().unwrap(),
            "--manifest",
            manifest.to_str().unwrap(),
            "--features-dir",
            features.to_str().unwrap(),
            "--out-dir",
            dir.join("eval").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    ok(&out);
}

#[test]
fn embed_row_count_matches_cohort_and_svg_parses() {
    let dir = tmp("embed");
    let manifest = make_cohort(&dir);
    let features = dir.join("features");
    for method in ["clouds", "abdomenprint"] {
        let out = bin()
            .args([
                "featurize",
                "--manifest",
                manifest.to_str().unwrap(),
                "--method",
                method,
                "--points",
                "32",
                "--descriptor-len",
                "6",
                "--out-dir",
                features.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        ok(&out);
    }
    let gbt_dir = dir.join("gbt");
    let out = bin()
        .args([
            "train",
            "--manifest",
            manifest.to_str().unwrap(),
            "--features-dir",
            features.to_str().unwrap(),
            "--method",
            "gbt",
            "--split-seed",
            "1",
            "--rounds",
            "5",
            "--min-leaf",
            "1",
            "--out-dir",
            gbt_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    ok(&out);
    let embed_dir = dir.join("embedded");
    let out = bin()
        .args([
            "embed",
            "--model",
            gbt_dir.join("model.gbt.json").to_str().unwrap(),
            "--manifest",
            manifest.to_str().unwrap(),
            "--features-dir",
            features.to_str().unwrap(),
            "--perplexity",
            "1",
            "--iterations",
            "60",
            "--out-dir",
            embed_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    ok(&out);
    let csv = std::fs::read_to_string(embed_dir.join("embedding.csv")).unwrap();
    // Header plus one row per subject.
    assert_eq!(csv.lines().count(), 1 + 8);
    for svg_name in ["embedding_true.svg", "embedding_predicted.svg"] {
        let svg = std::fs::read_to_string(embed_dir.join(svg_name)).unwrap();
        assert!(svg.starts_with("<?xml"));
        assert_eq!(svg.matches("<svg").count(), 1);
        assert_eq!(svg.matches("</svg>").count(), 1);
        assert!(svg.contains("viewBox=\"0 0 800 600\""));
    }
}

#[test]
fn report_collects_outputs() {
    let dir = tmp("report");
    let manifest = make_cohort(&dir);
    let _ = manifest;
    let out = bin()
        .args(["report", "--dir", dir.to_str().unwrap()])
        .output()
        .unwrap();
    ok(&out);
    let report = std::fs::read_to_string(dir.join("report.md")).unwrap();
    assert!(report.contains("# Run report"));
    assert!(report.contains("gen-cohort"));
}
