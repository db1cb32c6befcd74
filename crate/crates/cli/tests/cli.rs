use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crashcast::roadnet::{grid_network, serialize_network};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_crashcast"));
    c.env_remove("CRASHCAST_SEED");
    c
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run_in(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("net.xml"), serialize_network(&grid_network(3, 3, 120.0).unwrap())).unwrap();
    fs::write(dir.path().join("small.json"), r#"{"dim": 8, "max_objects": 4, "learning_rate": 0.01}"#).unwrap();
    dir
}

fn gen(dir: &Path, count: usize, out: &str) {
    let c = count.to_string();
    ok(dir, &["gen-data", "--network", "net.xml", "--count", &c, "--positive-ratio", "0.5", "--seed", "7", "--out", out]);
}

fn lines(p: PathBuf) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().map(str::to_owned).collect()
}

#[test]
fn gen_data_writes_requested_counts() {
    let w = workspace();
    gen(w.path(), 10, "d.jsonl");
    let recs = lines(w.path().join("d.jsonl"));
    assert_eq!(recs.len(), 10);
    assert_eq!(recs.iter().filter(|l| l.contains("\"positive\":true")).count(), 5);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(w.path().join("d.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen-data");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["outputs"][0]["path"], "d.jsonl");
}

#[test]
fn gen_data_is_reproducible_across_job_counts() {
    let w = workspace();
    gen(w.path(), 12, "a.jsonl");
    ok(w.path(), &["gen-data", "--network", "net.xml", "--count", "12", "--positive-ratio", "0.5", "--seed", "7", "--out", "b.jsonl", "--jobs", "4"]);
    assert_eq!(fs::read(w.path().join("a.jsonl")).unwrap(), fs::read(w.path().join("b.jsonl")).unwrap());
}

#[test]
fn configuration_errors_exit_with_two() {
    let w = workspace();
    let d = w.path();
    let code = |args: &[&str]| run_in(d, args).status.code();
    assert_eq!(code(&["gen-data", "--network", "missing.xml", "--count", "3", "--out", "x.jsonl"]), Some(2));
    assert_eq!(code(&["gen-data", "--count", "3", "--out", "x.jsonl"]), Some(2));
    assert_eq!(code(&["gen-data", "--network", "net.xml", "--count", "3", "--out", "x.jsonl", "--positive-ratio", "1.5"]), Some(2));
    assert_eq!(code(&["gen-data", "--network", "net.xml", "--bogus"]), Some(2));
    assert_eq!(code(&["train", "--data", "none.jsonl", "--out", "c.bin"]), Some(2));
    fs::write(d.join("bad.json"), r#"{"cuont": 3}"#).unwrap();
    assert_eq!(code(&["gen-data", "--config", "bad.json", "--network", "net.xml", "--out", "y.jsonl"]), Some(2));
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let w = workspace();
    gen(w.path(), 4, "d.jsonl");
    let before = fs::read(w.path().join("d.jsonl")).unwrap();
    let again = run_in(w.path(), &["gen-data", "--network", "net.xml", "--count", "6", "--seed", "7", "--out", "d.jsonl"]);
    assert_eq!(again.status.code(), Some(2));
    assert_eq!(fs::read(w.path().join("d.jsonl")).unwrap(), before);
    ok(w.path(), &["gen-data", "--network", "net.xml", "--count", "6", "--seed", "7", "--out", "d.jsonl", "--force"]);
    assert_eq!(lines(w.path().join("d.jsonl")).len(), 6);
}

#[test]
fn flags_beat_config_and_config_beats_environment() {
    let w = workspace();
    let d = w.path();
    fs::write(d.join("g.json"), r#"{"count": 3, "seed": 11}"#).unwrap();
    let with_env = |args: &[&str]| {
        let out = bin().current_dir(d).env("CRASHCAST_SEED", "99").args(args).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    with_env(&["gen-data", "--network", "net.xml", "--config", "g.json", "--out", "cfg.jsonl"]);
    with_env(&["gen-data", "--network", "net.xml", "--count", "3", "--seed", "11", "--out", "flag.jsonl"]);
    with_env(&["gen-data", "--network", "net.xml", "--count", "3", "--out", "env.jsonl"]);
    ok(d, &["gen-data", "--network", "net.xml", "--count", "3", "--seed", "99", "--out", "s99.jsonl"]);
    ok(d, &["gen-data", "--network", "net.xml", "--config", "g.json", "--count", "2", "--out", "over.jsonl"]);
    let read = |n: &str| fs::read(d.join(n)).unwrap();
    assert_eq!(lines(d.join("cfg.jsonl")).len(), 3);
    assert_eq!(read("cfg.jsonl"), read("flag.jsonl"));
    assert_eq!(read("env.jsonl"), read("s99.jsonl"));
    assert_ne!(read("env.jsonl"), read("cfg.jsonl"));
    assert_eq!(lines(d.join("over.jsonl")).len(), 2);
}

#[test]
fn train_writes_checkpoint_logs_and_config() {
    let w = workspace();
    let d = w.path();
    gen(d, 12, "d.jsonl");
    ok(d, &["train", "--data", "d.jsonl", "--epochs", "5", "--seed", "1", "--out", "ckpt.bin", "--config", "small.json"]);
    let epochs = lines(d.join("ckpt.bin.epochs.csv"));
    assert_eq!(epochs[0], "epoch,train_loss,val_loss");
    assert_eq!(epochs.len(), 1 + 5);
    assert_eq!(lines(d.join("ckpt.bin.steps.csv"))[0], "step,L1,L2,L3,L");
    let cfg: serde_json::Value = serde_json::from_slice(&fs::read(d.join("ckpt.bin.config.json")).unwrap()).unwrap();
    assert_eq!(cfg["model"]["features"]["dim"], 8);
    assert!(d.join("ckpt.bin.manifest.json").exists());

    ok(d, &["train", "--data", "d.jsonl", "--epochs", "0", "--seed", "1", "--out", "init.bin", "--config", "small.json"]);
    assert!(fs::metadata(d.join("init.bin")).unwrap().len() > 0);
    assert_eq!(lines(d.join("init.bin.epochs.csv")), vec!["epoch,train_loss,val_loss"]);
    assert_eq!(lines(d.join("init.bin.steps.csv")), vec!["step,L1,L2,L3,L"]);
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let w = workspace();
    let d = w.path();
    gen(d, 12, "d.jsonl");
    let base = ["--data", "d.jsonl", "--seed", "3", "--config", "small.json"];
    let train = |extra: &[&str]| {
        let mut args = vec!["train"];
        args.extend(base);
        args.extend(extra);
        ok(d, &args);
    };
    train(&["--epochs", "4", "--out", "full.bin"]);
    train(&["--epochs", "2", "--out", "part.bin"]);
    train(&["--epochs", "4", "--out", "part.bin", "--resume"]);
    let read = |n: &str| fs::read(d.join(n)).unwrap();
    assert_eq!(read("full.bin"), read("part.bin"));
    assert_eq!(read("full.bin.steps.csv"), read("part.bin.steps.csv"));
    assert_eq!(read("full.bin.epochs.csv"), read("part.bin.epochs.csv"));
    let last = |n: &str| lines(d.join(n)).last().unwrap().split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert!((last("full.bin.epochs.csv") - last("part.bin.epochs.csv")).abs() <= 1e-9);
}

#[test]
fn eval_writes_report_and_complete_curves() {
    let w = workspace();
    let d = w.path();
    gen(d, 40, "d.jsonl");
    ok(d, &["train", "--data", "d.jsonl", "--epochs", "15", "--seed", "1", "--out", "c.bin", "--config", "small.json"]);
    assert_eq!(run_in(d, &["eval", "--checkpoint", "c.bin", "--data", "d.jsonl", "--out", "r.json", "--threshold", "1.1"]).status.code(), Some(2));
    ok(d, &["eval", "--checkpoint", "c.bin", "--data", "d.jsonl", "--out", "r.json", "--split", "train", "--threshold", "0.4"]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("r.json")).unwrap()).unwrap();
    let ap = report["ap"].as_f64().unwrap();
    assert!(ap >= 0.95, "train-split AP {ap}");
    assert_eq!(report["threshold"], 0.4);
    assert_eq!(report["sweep"].as_array().unwrap().len(), 99);
    let videos = report["videos"].as_array().unwrap();
    for v in videos {
        if v["label"] == 0 {
            assert!(v["tta"].is_null());
        }
    }
    let curves = lines(d.join("r.json.curves.csv"));
    assert_eq!(curves[0], "video_id,frame,u");
    let frames: usize = fs::read_to_string(d.join("d.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|r| videos.iter().any(|v| v["id"] == r["id"]))
        .map(|r| r["frames"].as_u64().unwrap() as usize)
        .sum();
    assert_eq!(curves.len() - 1, frames);

    ok(d, &["eval", "--checkpoint", "c.bin", "--data", "d.jsonl", "--out", "r4.json", "--split", "train", "--threshold", "0.4", "--jobs", "4"]);
    assert_eq!(fs::read(d.join("r.json")).unwrap(), fs::read(d.join("r4.json")).unwrap());
    assert_eq!(fs::read(d.join("r.json.curves.csv")).unwrap(), fs::read(d.join("r4.json.curves.csv")).unwrap());
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let w = workspace();
    let d = w.path();
    gen(d, 8, "d.jsonl");
    ok(d, &["train", "--data", "d.jsonl", "--epochs", "0", "--seed", "1", "--out", "c.bin", "--config", "small.json"]);
    let cfg = fs::read_to_string(d.join("c.bin.config.json")).unwrap().replace("\"dim\": 8", "\"dim\": 10");
    fs::write(d.join("c.bin.config.json"), cfg).unwrap();
    let out = run_in(d, &["eval", "--checkpoint", "c.bin", "--data", "d.jsonl", "--out", "r.json", "--split", "all"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
