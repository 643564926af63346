mod common;

use std::path::Path;
use std::process::Command;

use common::criteria::small_config;
use memqa::cli::Common;
use memqa::memory::PolicyKind;

fn memqa(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_memqa")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "# test\nseed = 4\npolicy = random\nepochs = 5\nd_model = 32\nn_heads = 2\n").unwrap();
    let common = Common {
        config: Some(path),
        seed: Some(9),
        set: vec!["epochs=7".into(), "theta=0.2".into()],
        theta: Some(0.45),
        ..Common::default()
    };
    let cfg = common.resolve().unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.policy, PolicyKind::Random);
    assert_eq!(cfg.epochs, 7);
    assert_eq!(cfg.theta, 0.45);
    assert_eq!(cfg.d_model, 32);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let missing = dir.path().join("nope.cfg");
    assert_eq!(memqa(&["gen-data", "--config", missing.to_str().unwrap()]).0, 3);
    assert_eq!(memqa(&["gen-data", "--ablation", "bogus", "--out", d]).0, 2);
    assert_eq!(memqa(&["train", "--out", d]).0, 3);
    assert_eq!(memqa(&["gen-data", "--set", "no_such_key=1", "--out", d]).0, 2);
    assert_eq!(memqa(&["frobnicate"]).0, 2);

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "seed = 1\nthis line has no equals sign\n").unwrap();
    let (code, err) = memqa(&["gen-data", "--config", bad.to_str().unwrap(), "--out", d]);
    assert_eq!(code, 4);
    assert!(err.contains('2'), "parse error should name the line: {err}");
}

fn run_all(dir: &Path, config: &Path) {
    let d = dir.to_str().unwrap();
    let c = config.to_str().unwrap();
    for cmd in ["gen-data", "pretrain-lm", "train", "eval", "analyze-memory", "export-heatmap"] {
        let (code, err) = memqa(&[cmd, "--config", c, "--out", d]);
        assert_eq!(code, 0, "{cmd}: {err}");
    }
}

#[test]
fn every_subcommand_writes_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.set("epochs", "2").unwrap();
    let config = dir.path().join("run.cfg");
    std::fs::write(&config, cfg.to_text()).unwrap();
    run_all(dir.path(), &config);
    for f in [
        "train.jsonl",
        "dev.jsonl",
        "vocab.json",
        "stage1.ckpt",
        "pretrain_loss.csv",
        "metrics.csv",
        "sync_log.jsonl",
        "dev_predictions.jsonl",
        "dev_memories.jsonl",
        "dev_profiles.jsonl",
        "scores.json",
        "coverage.csv",
        "f1_vs_memory.csv",
        "composition.csv",
        "rare_tokens.csv",
        "manifest-gen-data.json",
        "manifest-train.json",
        "manifest-export-heatmap.json",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    assert!(metrics.lines().nth(1).unwrap().starts_with("0,"));
    let heat = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .any(|e| e.file_name().to_string_lossy().starts_with("heatmap_"));
    assert!(heat);

    // a checkpoint trained at a different width is refused
    let (code, _) = memqa(&["train", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--set", "d_model=16"]);
    assert_eq!(code, 2);
}
