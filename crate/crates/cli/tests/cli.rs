use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use splicemask::evaluator::{read_predictions, MetricsReport};
use splicemask::trainer::KFoldReport;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splicemask"))
        .args(args)
        .env_remove("MISD_DATA_ROOT")
        .output()
        .expect("spawn splicemask")
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "splicemask {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic fixture plus built dataset; returns `(raw dir, dataset dir)`.
fn dataset(root: &Path, count: usize) -> (PathBuf, PathBuf) {
    let (raw, ds) = (root.join("raw"), root.join("ds"));
    let n = count.to_string();
    ok(&["dataset", "synth", "--out", s(&raw), "--count", &n, "--size", "96x112", "--regions", "1-2", "--seed", "5"]);
    ok(&[
        "dataset",
        "build",
        "--images",
        s(&raw.join("images")),
        "--annotations",
        s(&raw.join("annotations.json")),
        "--out",
        s(&ds),
    ]);
    (raw, ds)
}

const TINY: [&str; 6] = [
    "--override",
    "PROFILE=smoke",
    "--override",
    "TOTAL_STEPS=2",
    "--override",
    "ACCUMULATE_STEPS=1",
];

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["dataset", "validate", "--manifest", "/no/such/manifest.json"]), 1);
    assert_eq!(code(&["params", "--override", "NO_SUCH_KEY=1"]), 1);
    assert_eq!(code(&["params", "--override", "LEARNING_RATE=fast"]), 1);
    assert_eq!(code(&["dataset", "synth", "--out", "/tmp/x", "--size", "12by4"]), 1);
}

#[test]
fn params_reports_full_model() {
    let out = ok(&["params", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["total"], 23_812_574);
    assert_eq!(v["non_trainable"], 28_032);
    let text = ok(&["params", "--per-layer"]);
    assert!(text.contains("box_head.fc1"));
}

#[test]
fn validate_flags_tampered_mask() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, ds) = dataset(tmp.path(), 3);
    assert_eq!(code(&["dataset", "validate", "--manifest", s(&ds)]), 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ds.join("manifest.json")).unwrap()).unwrap();
    let rel = manifest["entries"][1]["masks"][0].as_str().unwrap();
    let mask = ds.join(rel);
    let (w, h) = image::image_dimensions(&mask).unwrap();
    image::GrayImage::new(w, h).save(&mask).unwrap();
    let out = run(&["dataset", "validate", "--manifest", s(&ds)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains(rel));
}

#[test]
fn stats_counts_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, ds) = dataset(tmp.path(), 4);
    let v: serde_json::Value = serde_json::from_str(&ok(&["dataset", "stats", "--json", "--manifest", s(&ds)])).unwrap();
    assert_eq!(v["total"], 4);
    assert_eq!(v["spliced"], 4);
    assert_eq!(v["authentic"], 0);
}

#[test]
fn data_root_resolves_relative_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), 2);
    let out = Command::new(env!("CARGO_BIN_EXE_splicemask"))
        .args(["dataset", "validate", "--manifest", "ds/manifest.json"])
        .env("MISD_DATA_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_detect_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (raw, ds) = dataset(tmp.path(), 3);
    let train = tmp.path().join("train");
    let mut args = vec!["train", "--data", s(&ds), "--out", s(&train), "--split", "all"];
    args.extend(TINY);
    ok(&args);
    for f in ["train_log.csv", "final.ckpt", "run_config.txt"] {
        assert!(train.join(f).exists(), "missing {f}");
    }
    assert_eq!(std::fs::read_to_string(train.join("train_log.csv")).unwrap().lines().count(), 3);

    let det = tmp.path().join("det");
    let img = raw.join("images").join("synth_5_0000.png");
    let ckpt = train.join("final.ckpt");
    let stdout = ok(&["detect", "--checkpoint", s(&ckpt), "--out", s(&det), "--min-score", "0", s(&img)]);
    assert!(stdout.contains("forged"));
    let overlay = det.join("synth_5_0000_overlay.png");
    assert_eq!(image::image_dimensions(&overlay).unwrap(), image::image_dimensions(&img).unwrap());
    let preds = read_predictions(&det.join("predictions.json")).unwrap();
    assert_eq!(preds.len(), 1);
    assert_eq!((preds[0].height, preds[0].width), (96, 112));
    assert!(det.join("run_config.txt").exists());

    // the other two images have no predictions, so eval must refuse
    let ev = tmp.path().join("eval");
    let pred_file = det.join("predictions.json");
    assert_eq!(code(&["eval", "--predictions", s(&pred_file), "--data", s(&ds), "--out", s(&ev)]), 2);

    let all = tmp.path().join("det_all");
    let mut args = vec!["detect", "--checkpoint", s(&ckpt), "--out", s(&all)];
    let images: Vec<PathBuf> = (0..3).map(|i| raw.join("images").join(format!("synth_5_{i:04}.png"))).collect();
    args.extend(images.iter().map(|p| s(p)));
    ok(&args);
    let pred_file = all.join("predictions.json");
    ok(&["eval", "--predictions", s(&pred_file), "--data", s(&ds), "--out", s(&ev)]);
    let report: MetricsReport = serde_json::from_str(&std::fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report.per_image.len(), 3);

    // the same pipeline in-process gives the same report
    let model = splicemask::trainer::load_model(&ckpt).unwrap();
    let mut preds = Vec::new();
    for (i, p) in images.iter().enumerate() {
        let id = format!("synth_5_{i:04}");
        let img = image::open(p).unwrap().into_rgb8();
        preds.push(splicemask_cli::detect_image(&model, &id, &img).unwrap().0);
    }
    let gts = splicemask_cli::manifest_ground_truth(&ds, splicemask_cli::SplitSel::All).unwrap();
    let cfg = splicemask::config::RunConfig::paper();
    let direct = splicemask::evaluator::evaluate(&preds, &gts, &cfg.eval).unwrap();
    assert_eq!(direct.to_json().unwrap(), std::fs::read_to_string(ev.join("metrics.json")).unwrap());
    assert!(std::fs::read_to_string(ev.join("metrics.csv")).unwrap().starts_with("F1-Score,"));

    std::fs::write(&pred_file, "[{\"image_id\": 1}]").unwrap();
    assert_eq!(code(&["eval", "--predictions", s(&pred_file), "--data", s(&ds), "--out", s(&ev)]), 2);
}

#[test]
fn corrupt_checkpoint_is_a_runtime_abort() {
    let tmp = tempfile::tempdir().unwrap();
    let (raw, _) = dataset(tmp.path(), 1);
    let ckpt = tmp.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let img = raw.join("images").join("synth_5_0000.png");
    let out = tmp.path().join("det");
    assert_eq!(code(&["detect", "--checkpoint", s(&ckpt), "--out", s(&out), s(&img)]), 3);
}

#[test]
fn kfold_writes_every_fold() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, ds) = dataset(tmp.path(), 10);
    let out = tmp.path().join("kf");
    let mut args = vec!["kfold", "--data", s(&ds), "--out", s(&out), "--k", "5", "--split", "all"];
    args.extend(TINY);
    ok(&args);
    for i in 1..=5 {
        let fold = out.join(format!("fold_{i}"));
        for f in ["train_log.csv", "final.ckpt", "predictions.json", "metrics.json", "metrics.csv", "run_config.txt"] {
            assert!(fold.join(f).exists(), "fold_{i} lacks {f}");
        }
    }
    let report: KFoldReport =
        serde_json::from_str(&std::fs::read_to_string(out.join("kfold_mean.json")).unwrap()).unwrap();
    assert_eq!(report.per_fold.len(), 5);
    let mean_f1 = report.per_fold.iter().map(|r| r.f1).sum::<f64>() / 5.0;
    assert!((report.mean.f1.unwrap() - mean_f1).abs() < 1e-12);
    let folds: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(out.join("folds.json")).unwrap()).unwrap();
    let mut val: Vec<String> = folds
        .iter()
        .flat_map(|f| f["val"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()))
        .collect();
    val.sort();
    val.dedup();
    assert_eq!(val.len(), 10);
}

#[test]
fn config_file_is_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, ds) = dataset(tmp.path(), 2);
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "PROFILE\tsmoke\nTOTAL_STEPS = 1\nACCUMULATE_STEPS = 1\nLEARNING_RATE = 0.005\n").unwrap();
    let train = tmp.path().join("train");
    ok(&["train", "--data", s(&ds), "--out", s(&train), "--split", "all", "--config", s(&cfg), "--seed", "9"]);
    let echo = std::fs::read_to_string(train.join("run_config.txt")).unwrap();
    assert!(echo.contains("LEARNING_RATE = 0.005"), "{echo}");
    assert!(echo.contains("SEED = 9"), "{echo}");
    std::fs::write(&cfg, "TOTAL_STEPS = 1\nTOTAL_STEPS = 2\n").unwrap();
    assert_eq!(code(&["params", "--config", s(&cfg)]), 1);
}
