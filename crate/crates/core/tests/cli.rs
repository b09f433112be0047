use std::fs;
use std::path::Path;
use std::process::Command;

use samaug::cli::{load_prob_map, InferSidecar};
use samaug::training::Checkpoint;
use samaug::model::{UNet, UNetSpec};

fn samaug(root: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_samaug"))
        .arg("--root")
        .arg(root)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn samaug")
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = samaug(root, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(root: &Path, args: &[&str]) -> i32 {
    samaug(root, args).status.code().unwrap()
}

fn small_synth(root: &Path) {
    ok(root, &["synth", "--n-train", "3", "--n-test", "2", "--size", "32", "--blobs", "2"]);
}

const TINY_TRAIN: &[&str] = &["--iters", "3", "--crop-size", "16", "--batch-size", "2", "--base-channels", "2"];

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_synth(root);
    assert!(root.join("data/train/images/synth_0000.png").is_file());
    assert!(root.join("data/test/masks/synth_0001.masks.json").is_file());

    ok(root, &["build-priors"]);
    let seg = root.join("data/train/priors/synth_0000.seg.png");
    let first = fs::read(&seg).unwrap();
    ok(root, &["build-priors"]);
    assert_eq!(first, fs::read(&seg).unwrap(), "build-priors is not idempotent");
    assert!(root.join("data/train/priors/build-priors.config.toml").is_file());

    ok(root, &["augment", "--split", "test"]);
    assert!(root.join("runs/default/augmented/test/synth_0000.png").is_file());

    let mut args = vec!["train"];
    args.extend_from_slice(TINY_TRAIN);
    ok(root, &args);
    let run = root.join("runs/default");
    assert!(run.join("checkpoint.json").is_file());
    assert!(run.join("train.config.toml").is_file());
    let csv = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("iter,loss\n1,"));

    ok(root, &["infer", "--strategy", "entropy-select"]);
    let preds = run.join("predictions");
    let p = load_prob_map(&preds, "synth_0000").unwrap();
    assert_eq!(p.num_classes(), 2);
    let side: InferSidecar =
        serde_json::from_str(&fs::read_to_string(preds.join("synth_0000.json")).unwrap()).unwrap();
    assert!(side.chosen.is_some());
    assert!(side.entropy_raw.unwrap() >= 0.0);

    let table = ok(root, &["evaluate"]);
    assert!(table.contains("mean"), "{table}");
    assert!(run.join("report.json").is_file());
    let per_image = fs::read_to_string(run.join("per_image.csv")).unwrap();
    assert!(per_image.starts_with("id,dice,fscore,aji,object_dice\n"));
    assert_eq!(per_image.lines().count(), 3);
}

#[test]
fn training_is_deterministic_and_zero_iters_is_init() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_synth(root);
    let mut a = vec!["--out", "a", "train"];
    a.extend_from_slice(TINY_TRAIN);
    let mut b = vec!["--out", "b", "train"];
    b.extend_from_slice(TINY_TRAIN);
    ok(root, &a);
    ok(root, &b);
    assert_eq!(
        fs::read_to_string(root.join("a/loss.csv")).unwrap(),
        fs::read_to_string(root.join("b/loss.csv")).unwrap()
    );
    assert_eq!(
        fs::read(root.join("a/checkpoint.json")).unwrap(),
        fs::read(root.join("b/checkpoint.json")).unwrap()
    );

    ok(root, &["--out", "z", "--seed", "5", "train", "--iters", "0", "--base-channels", "2"]);
    let ck = Checkpoint::load(root.join("z/checkpoint.json")).unwrap();
    let init = UNet::new(UNetSpec { base_channels: 2, num_classes: 2 }, 5).unwrap();
    assert_eq!(ck.iteration, 0);
    assert_eq!(ck.to_model().unwrap(), init);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(code(root, &["train"]), 2, "missing dataset");
    assert_eq!(code(root, &["frobnicate"]), 2);
    assert_eq!(code(root, &["infer", "--strategy", "majority"]), 2);

    fs::write(root.join("bad.toml"), "[train]\nmomentum = 0.9\n").unwrap();
    assert_eq!(code(root, &["--config", "bad.toml", "synth"]), 2);
    fs::write(root.join("neg.toml"), "[train]\nlr = -1.0\n").unwrap();
    assert_eq!(code(root, &["--config", "neg.toml", "synth"]), 2);

    small_synth(root);
    assert_eq!(code(root, &["infer"]), 2, "no checkpoint yet");
    ok(root, &["train", "--iters", "0", "--base-channels", "2", "--beta", "0"]);
    assert_eq!(code(root, &["infer", "--strategy", "ensemble"]), 2);
    assert_eq!(code(root, &["infer", "--strategy", "entropy-select"]), 2);
    ok(root, &["infer", "--strategy", "ensemble", "--allow-mismatch"]);
    ok(root, &["infer", "--strategy", "aug-only"]);

    ok(root, &["--out", "raw", "train", "--iters", "0", "--base-channels", "2", "--lambda", "0"]);
    assert_eq!(code(root, &["--out", "raw", "infer", "--strategy", "aug-only"]), 2);

    assert_eq!(code(root, &["--out", "raw", "evaluate"]), 2, "no predictions");
}

#[test]
fn strict_build_priors_fails_without_masks() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_synth(root);
    fs::remove_file(root.join("data/train/masks/synth_0001.masks.json")).unwrap();
    assert_eq!(code(root, &["build-priors", "--split", "train", "--strict"]), 1);
    ok(root, &["build-priors", "--split", "train"]);
    let zero = samaug::priors::PriorMap::load_png(
        samaug::priors::PriorKind::Segmentation,
        root.join("data/train/priors/synth_0001.seg.png"),
    )
    .unwrap();
    assert!(zero.values().as_slice().iter().all(|&v| v == 0.0));
}
