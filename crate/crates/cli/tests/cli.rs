use std::fs;
use std::path::Path;
use std::process::Command;

use aclip_cli::{run, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

fn aclip(args: &[&str]) -> i32 {
    let mut argv = vec!["aclip"];
    argv.extend_from_slice(args);
    run(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = r#"{
  "batch_size": 8, "total_steps": 3, "warmup_steps": 1, "views": 2,
  "mask_granularity": 4,
  "visual": {"image_size": 16, "patch_size": 4, "layers": 1, "heads": 2, "width": 16, "embed_dim": 8},
  "text": {"context_length": 16, "layers": 1, "heads": 2, "width": 16, "embed_dim": 8}
}"#;

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(aclip(&["gen-data", "--n", "40", "--out", s(&a), "--seed", "7"]), EXIT_OK);
    assert_eq!(aclip(&["gen-data", "--n", "40", "--out", s(&b), "--seed", "7"]), EXIT_OK);
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
    assert_eq!(fs::read_to_string(a.join("manifest.jsonl")).unwrap().lines().count(), 40);
}

#[test]
fn flops_reports_half_quadratic_attention() {
    let out = Command::new(env!("CARGO_BIN_EXE_aclip"))
        .args(["flops", "--views", "2", "--keep", "0.5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let ledger: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(ledger["ratio_online_attention_quadratic"], 0.5);
    assert!(ledger["ratio_online"].as_f64().unwrap() < 1.0);
}

#[test]
fn exit_codes_follow_the_contract() {
    assert_eq!(aclip(&["flops", "--bogus"]), EXIT_USAGE);
    assert_eq!(aclip(&["no-such-command"]), EXIT_USAGE);
    assert_eq!(aclip(&["flops", "--keep", "1.5"]), EXIT_CONFIG);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"batch_size": 8, "unknown_key": 1}"#).unwrap();
    assert_eq!(aclip(&["train", "--data", "x", "--config", s(&bad)]), EXIT_CONFIG);
    assert_eq!(aclip(&["train", "--data", s(&dir.path().join("missing"))]), EXIT_RUNTIME);
    assert_eq!(aclip(&["eval", "--run", s(dir.path()), "--data", "x"]), EXIT_RUNTIME);

    let status = Command::new(env!("CARGO_BIN_EXE_aclip")).arg("--help").status().unwrap();
    assert_eq!(status.code(), Some(0));
    let status = Command::new(env!("CARGO_BIN_EXE_aclip"))
        .args(["train", "--oops"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_USAGE));
}

fn pipeline(root: &Path) -> serde_json::Value {
    let (data, run_dir) = (root.join("data"), root.join("run"));
    let cfg = root.join("tiny.json");
    fs::write(&cfg, TINY).unwrap();
    assert_eq!(aclip(&["gen-data", "--n", "32", "--out", s(&data), "--seed", "3"]), EXIT_OK);
    assert_eq!(
        aclip(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run_dir), "--seed", "5", "--progress", "0"]),
        EXIT_OK
    );
    assert!(run_dir.join("log.jsonl").exists());
    assert_eq!(
        aclip(&["eval", "--checkpoint", "last", "--run", s(&run_dir), "--data", s(&data)]),
        EXIT_OK
    );
    serde_json::from_str(&fs::read_to_string(run_dir.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn train_then_eval_is_deterministic_and_reports_top1() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = pipeline(a.path());
    let mb = pipeline(b.path());
    assert!(ma["zero_shot"]["top1"].is_number());
    assert!(ma["retrieval"]["i2t"].is_array());
    assert_eq!(ma, mb);

    let ema_out = a.path().join("ema.json");
    assert_eq!(
        aclip(&[
            "eval", "--run", s(&a.path().join("run")), "--data", s(&a.path().join("data")),
            "--use-ema", "--out", s(&ema_out),
        ]),
        EXIT_OK
    );
    let ema: serde_json::Value = serde_json::from_str(&fs::read_to_string(ema_out).unwrap()).unwrap();
    assert_eq!(ema["use_ema"], true);

    let vis = a.path().join("vis");
    assert_eq!(
        aclip(&[
            "visualize-mask", "--run", s(&a.path().join("run")), "--data", s(&a.path().join("data")),
            "--out", s(&vis), "--count", "3",
        ]),
        EXIT_OK
    );
    let ppm = fs::read(vis.join("mask_0002.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6"));
}

#[test]
fn interrupted_run_resumes_onto_the_same_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = dir.path().join("tiny.json");
    fs::write(&cfg, TINY).unwrap();
    assert_eq!(aclip(&["gen-data", "--n", "16", "--out", s(&data)]), EXIT_OK);
    let train = |run_dir: &Path, extra: &[&str]| {
        let mut args = vec!["train", "--config", s(&cfg), "--data", s(&data), "--out", s(run_dir), "--progress", "0"];
        args.extend_from_slice(extra);
        aclip(&args)
    };
    let (straight, split) = (dir.path().join("straight"), dir.path().join("split"));
    assert_eq!(train(&straight, &[]), EXIT_OK);
    assert_eq!(train(&split, &["--stop-after", "2"]), EXIT_OK);
    assert_eq!(fs::read_to_string(split.join("log.jsonl")).unwrap().lines().count(), 2);
    assert_eq!(train(&split, &["--resume"]), EXIT_OK);
    assert_eq!(
        fs::read_to_string(straight.join("log.jsonl")).unwrap(),
        fs::read_to_string(split.join("log.jsonl")).unwrap()
    );
    assert_eq!(
        fs::read(straight.join("checkpoints/last.ckpt")).unwrap(),
        fs::read(split.join("checkpoints/last.ckpt")).unwrap()
    );
}
