use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tumorgrade::data::fixture::write_fixture;
use tumorgrade::engine::gradcheck::op_checks;
use tumorgrade::eval::read_metrics;
use tumorgrade::train::CURVES_HEADER;

fn tumorgrade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tumorgrade"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a fixture and a sources config; returns the config path.
fn sources(root: &Path, per_class: usize, expected: Option<usize>) -> PathBuf {
    let labels = write_fixture(&root.join("images"), per_class, 40, 21).unwrap();
    let mut toml = String::from("[sources.synthetic]\nroot = \"images\"\n[sources.synthetic.labels]\n");
    for (folder, class) in &labels {
        toml.push_str(&format!("{folder} = \"{class}\"\n"));
    }
    if let Some(n) = expected {
        toml.push_str("[expected]\n");
        for class in labels.values() {
            toml.push_str(&format!("{class} = {n}\n"));
        }
    }
    let path = root.join("sources.toml");
    fs::write(&path, toml).unwrap();
    path
}

/// curate + split at 0.75; returns the split manifest path.
fn split_manifest(root: &Path) -> PathBuf {
    let cfg = sources(root, 4, None);
    let curated = root.join("curated.jsonl");
    assert!(tumorgrade(&["curate", "--config", s(&cfg), "--out", s(&curated)]).status.success());
    let split = root.join("split.jsonl");
    let out = tumorgrade(&[
        "split", "--manifest", s(&curated), "--out", s(&split), "--train-fraction", "0.75", "--seed", "3",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    split
}

fn train_small(manifest: &Path, out_dir: &Path, epochs: &str) -> Output {
    tumorgrade(&[
        "train", "--manifest", s(manifest), "--out-dir", s(out_dir), "--epochs", epochs,
        "--image-side", "32", "--batch-size", "4", "--model", "custom_cnn", "--precision", "f64",
        "--no-wall-time", "--seed", "9",
    ])
}

#[test]
fn curate_matching_expectations_exits_zero_with_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sources(dir.path(), 3, Some(3));
    let out_manifest = dir.path().join("out/manifest.jsonl");
    let out = tumorgrade(&["curate", "--config", s(&cfg), "--out", s(&out_manifest)]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("overall: PASS"));
    let report = fs::read_to_string(dir.path().join("out/validation_report.txt")).unwrap();
    assert_eq!(report, stdout);
    assert_eq!(fs::read_to_string(&out_manifest).unwrap().lines().count(), 13);
}

#[test]
fn curate_count_mismatch_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sources(dir.path(), 3, Some(4));
    let out = tumorgrade(&["curate", "--config", s(&cfg), "--out", s(&dir.path().join("m.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).starts_with("ERROR:CountMismatch:"));
    assert!(text(&out.stdout).contains("overall: FAIL"));
}

#[test]
fn curate_missing_class_folder_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sources(dir.path(), 2, None);
    fs::remove_dir_all(dir.path().join("images/glioma")).unwrap();
    let out = tumorgrade(&["curate", "--config", s(&cfg), "--out", s(&dir.path().join("m.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).starts_with("ERROR:MissingClassFolder:"), "{}", text(&out.stderr));
}

#[test]
fn curate_reports_cross_source_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sources(dir.path(), 2, None);
    let second = dir.path().join("second/pituitary");
    fs::create_dir_all(&second).unwrap();
    fs::copy(dir.path().join("images/pituitary/img_000.png"), second.join("copy.png")).unwrap();
    let mut toml = fs::read_to_string(&cfg).unwrap();
    toml.push_str("[sources.second]\nroot = \"second\"\n[sources.second.labels]\npituitary = \"pituitary\"\n");
    fs::write(&cfg, toml).unwrap();
    let out = tumorgrade(&["curate", "--config", s(&cfg), "--out", s(&dir.path().join("m.jsonl"))]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("merged: 8 records, 1 cross-source duplicates collapsed"));
}

#[test]
fn split_reports_deltas_against_expectations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sources(dir.path(), 5, None);
    let curated = dir.path().join("curated.jsonl");
    tumorgrade(&["curate", "--config", s(&cfg), "--out", s(&curated)]);
    let out = tumorgrade(&[
        "split", "--manifest", s(&curated), "--out", s(&dir.path().join("split.jsonl")),
        "--expect-train", "no_tumor=4", "--expect-train", "glioma=4", "--expect-train", "meningioma=4",
        "--expect-train", "pituitary=5",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("result: FAIL"), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("pituitary") && l.contains("-1")), "{stdout}");
}

#[test]
fn default_train_echoes_reference_settings() {
    let out = tumorgrade(&["train"]);
    assert!(text(&out.stdout).starts_with("epochs=20 image=224 batch=32 opt=adam lr=0.001 augment=on"));
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).starts_with("ERROR:ConfigError:"));
}

#[test]
fn config_file_values_lose_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    fs::write(&cfg, "epochs = 7\nbatch_size = 16\n[augment]\nenabled = false\n").unwrap();
    let out = tumorgrade(&["train", "--config", s(&cfg), "--epochs", "3"]);
    assert!(text(&out.stdout).starts_with("epochs=3 image=224 batch=16 opt=adam lr=0.001 augment=off"));
}

#[test]
fn zero_epochs_writes_header_only_curves() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = split_manifest(dir.path());
    let run = dir.path().join("run");
    let out = train_small(&manifest, &run, "0");
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(fs::read_to_string(run.join("curves.csv")).unwrap(), format!("{CURVES_HEADER}\n"));
    assert!(run.join("last.ckpt").exists());
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = split_manifest(dir.path());

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = train_small(&manifest, &a, "2");
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let epoch_lines: Vec<String> =
        text(&out.stdout).lines().filter(|l| l.starts_with("epoch ")).map(String::from).collect();
    assert_eq!(epoch_lines.len(), 2);
    assert!(train_small(&manifest, &b, "2").status.success());
    let curves = fs::read(a.join("curves.csv")).unwrap();
    assert_eq!(curves, fs::read(b.join("curves.csv")).unwrap());

    // eval twice, byte-identical outputs
    let ckpt = a.join("last.ckpt");
    let mut outs = Vec::new();
    for name in ["e1", "e2"] {
        let od = dir.path().join(name);
        let out = tumorgrade(&["eval", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--out-dir", s(&od)]);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
        outs.push(od);
    }
    for f in ["metrics.json", "confusion.csv", "curves.csv", "predictions.csv"] {
        assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read(outs[0].join("curves.csv")).unwrap(), curves);

    // independent count of predictions.csv reproduces the reported accuracy
    let preds = fs::read_to_string(outs[0].join("predictions.csv")).unwrap();
    let rows: Vec<Vec<&str>> = preds.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let correct = rows.iter().filter(|r| r[2] == r[3]).count();
    let metrics = read_metrics(&outs[0].join("metrics.json")).unwrap();
    assert_eq!(metrics.total as usize, rows.len());
    assert_eq!(metrics.accuracy, correct as f64 / rows.len() as f64);

    // predict: probabilities sum to one and the label is their argmax
    let img = dir.path().join("images/glioma/img_001.png");
    let junk = dir.path().join("junk.png");
    fs::write(&junk, b"not an image").unwrap();
    let out = tumorgrade(&["predict", "--checkpoint", s(&ckpt), s(&img), s(&junk), s(&img)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(text(&out.stderr).starts_with("ERROR:DecodeFailure:"));
    let lines: Vec<String> = text(&out.stdout).lines().map(String::from).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], lines[1]);
    let cells: Vec<&str> = lines[0].split(',').collect();
    assert_eq!(cells.len(), 6);
    let p: Vec<f64> = cells[2..].iter().map(|c| c.parse().unwrap()).collect();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    let argmax = (0..4).fold(0, |b, i| if p[i] > p[b] { i } else { b });
    let names = ["no_tumor", "glioma", "meningioma", "pituitary"];
    assert_eq!(cells[1], names[argmax]);

    let out = tumorgrade(&["predict", "--checkpoint", s(&ckpt), s(&junk)]);
    assert_eq!(out.status.code(), Some(1));

    // a config for another architecture does not match the checkpoint
    let other = dir.path().join("other.toml");
    fs::write(&other, "model = \"yolo_cls_lite\"\nimage_side = 32\n").unwrap();
    let out = tumorgrade(&[
        "eval", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--out-dir", s(&dir.path().join("e3")),
        "--config", s(&other),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).starts_with("ERROR:SpecHashMismatch:"));
}

#[test]
fn eval_on_empty_test_split_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = split_manifest(dir.path());
    let run = dir.path().join("run");
    assert!(train_small(&manifest, &run, "0").status.success());
    let all_train = dir.path().join("all_train.jsonl");
    tumorgrade(&["split", "--manifest", s(&manifest), "--out", s(&all_train), "--train-fraction", "1.0"]);
    let out = tumorgrade(&[
        "eval", "--checkpoint", s(&run.join("last.ckpt")), "--manifest", s(&all_train), "--out-dir",
        s(&dir.path().join("ev")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).starts_with("ERROR:EmptyMatrix:"), "{}", text(&out.stderr));
}

#[test]
fn gradcheck_lists_each_op_once_and_catches_perturbation() {
    let out = tumorgrade(&["gradcheck", "--ops-only"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stdout));
    let stdout = text(&out.stdout);
    for check in op_checks() {
        let name = check.op.name();
        let rows = stdout.lines().filter(|l| l.split_whitespace().next() == Some(name)).count();
        assert_eq!(rows, 1, "{name}");
    }
    assert!(stdout.contains("overall: PASS"));

    let out = tumorgrade(&["gradcheck", "--ops-only", "--perturb", "conv2d"]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = text(&out.stdout);
    let conv = stdout.lines().find(|l| l.starts_with("conv2d")).unwrap();
    assert!(conv.ends_with("FAIL"));
}

#[test]
fn gradcheck_models_pass() {
    let out = tumorgrade(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stdout));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("model:yolo_cls_lite"));
    assert!(stdout.contains("model:custom_cnn"));
}

#[test]
fn preview_writes_contact_sheet() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(&dir.path().join("images"), 1, 40, 5).unwrap();
    let sheet = dir.path().join("sheet.png");
    let out = tumorgrade(&[
        "preview-augment", s(&dir.path().join("images/glioma/img_000.png")),
        s(&dir.path().join("images/pituitary/img_000.png")), "--out", s(&sheet), "--variants", "3",
        "--side", "32",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let img = image::open(&sheet).unwrap();
    assert!(img.width() >= 4 * 32 && img.height() >= 2 * 32);
    assert!(img.width() < 5 * 32 && img.height() < 3 * 32);
}
