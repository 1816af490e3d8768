//! Drive the compiled binary as a user would: artifact files land on disk,
//! exit codes follow their categories, and reruns reproduce bytes.

mod common;

use std::path::Path;
use std::process::{Command, Output};

fn miqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_miqa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, common::TINY_TOML).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_tasks_exports_images_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out_dir = dir.path().join("tasks");
    let out = miqa(&["gen-tasks", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(out_dir.join("scores.csv")).unwrap();
    // 3 families x 4 bases x 3 levels, one line each plus the header
    assert_eq!(manifest.lines().count(), 1 + 3 * 4 * 3);
    assert!(manifest.starts_with("image,family,severity,score\n"));
    for family in common::TINY_FAMILIES {
        let fam_dir = out_dir.join(family);
        assert_eq!(std::fs::read_dir(&fam_dir).unwrap().count(), 12, "{family}");
    }
}

#[test]
fn train_evaluate_finetune_saliency_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out_dir = dir.path().join("run");
    let out_str = out_dir.to_str().unwrap();

    let train = miqa(&["meta-train", "--config", &cfg, "--seed", "0", "--out", out_str]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    let ckpt = out_dir.join("prior.ckpt");
    assert!(ckpt.exists());
    assert!(out_dir.join("train_log.csv").exists());

    let eval = miqa(&[
        "evaluate",
        "--config",
        &cfg,
        "--seed",
        "0",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--held-out",
        "gaussian-blur",
    ]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let text = String::from_utf8_lossy(&eval.stdout);
    assert!(text.contains("plcc") && text.contains("srocc"), "{text}");

    let tune = miqa(&[
        "fine-tune",
        "--config",
        &cfg,
        "--seed",
        "0",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--held-out",
        "gaussian-blur",
        "--out",
        out_str,
    ]);
    assert!(tune.status.success(), "{}", String::from_utf8_lossy(&tune.stderr));
    assert!(out_dir.join("finetuned.ckpt").exists());

    // saliency needs an input image: export the task set and pick one
    let tasks_dir = dir.path().join("tasks");
    let gen = miqa(&["gen-tasks", "--config", &cfg, "--out", tasks_dir.to_str().unwrap()]);
    assert!(gen.status.success());
    let family_dir = tasks_dir.join("gaussian-blur");
    let image = std::fs::read_dir(&family_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .find(|p| p.extension().is_some_and(|e| e == "ppm"))
        .unwrap();
    let sal = miqa(&[
        "saliency",
        "--config",
        &cfg,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--out",
        out_str,
    ]);
    assert!(sal.status.success(), "{}", String::from_utf8_lossy(&sal.stderr));
    let stem = image.file_stem().unwrap().to_str().unwrap();
    let map = out_dir.join(format!("{stem}-saliency.pgm"));
    let bytes = std::fs::read(&map).unwrap();
    assert!(bytes.starts_with(b"P5\n"), "saliency map is a binary PGM");
}

#[test]
fn lodo_subcommand_writes_results_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        let out = miqa(&["lodo", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["results.csv", "train_log.csv"] {
        let x = std::fs::read(a.join(file)).unwrap();
        let y = std::fs::read(b.join(file)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{file} differs between reruns");
    }
}

#[test]
fn exit_codes_follow_their_categories() {
    let dir = tempfile::tempdir().unwrap();

    // 2: configuration errors (unparseable file, unknown family, bad value)
    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "[meta]\nlearning_rate = 1.0\n").unwrap();
    let out = miqa(&["lodo", "--config", bad_cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let missing_cfg = dir.path().join("nope.toml");
    let out = miqa(&["lodo", "--config", missing_cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    // 3: corrupt checkpoint
    let cfg = write_tiny_config(dir.path());
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint at all").unwrap();
    let out = miqa(&[
        "evaluate",
        "--config",
        &cfg,
        "--checkpoint",
        junk.to_str().unwrap(),
        "--held-out",
        "gaussian-blur",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // 4: i/o (checkpoint path does not exist)
    let out = miqa(&[
        "evaluate",
        "--config",
        &cfg,
        "--checkpoint",
        dir.path().join("absent.ckpt").to_str().unwrap(),
        "--held-out",
        "gaussian-blur",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_subcommand_reports_invalid_cells_without_aborting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out_dir = dir.path().join("sweep");
    let out = miqa(&["sweep", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert!(text.contains("invalid"));
    assert!(text.contains("adapted"));
}
