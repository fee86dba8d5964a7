use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
dataset.train_per_class = 6
dataset.eval_per_class = 4
dataset.seed = 5
model.layers = 2
model.hidden = 8
model.mask_layers = 1
model.mask_hidden = 8
train.epochs = 2
train.batch_size = 16
train.optimizer = \"adam\"
train.beta = 0.001
gcs.mc_samples = 400
gcs.classifier_epochs = 2
experiment.method = \"advca\"
experiment.num_seeds = 2
";

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advca-lab")).args(args).output().unwrap()
}

fn config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("experiment.cfg");
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, cfg: &Path, name: &str) -> PathBuf {
    let out = dir.join(name);
    let o = lab(&["generate", "--config", s(cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn manifest_without_timestamp(dir: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    let ts = v.as_object_mut().unwrap().remove("created_at").unwrap();
    assert!(ts.as_str().unwrap().contains('T'));
    v
}

#[test]
fn generate_is_seeded_and_self_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), TINY);
    let a = generate(tmp.path(), &cfg, "a");
    let b = generate(tmp.path(), &cfg, "b");
    for f in ["train.jsonl", "val.jsonl", "test.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let m = manifest_without_timestamp(&a);
    assert_eq!(m, manifest_without_timestamp(&b));
    assert_eq!(m["test"]["envs"], serde_json::json!(["path"]));
    let lines = fs::read_to_string(a.join("test.jsonl")).unwrap();
    let nodes: Vec<f64> = lines
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["num_nodes"].as_f64().unwrap())
        .collect();
    let avg = nodes.iter().sum::<f64>() / nodes.len() as f64;
    assert!((m["test"]["avg_nodes"].as_f64().unwrap() - avg).abs() < 1e-9);
    assert_eq!(m["test"]["graphs"].as_u64().unwrap() as usize, nodes.len());
}

#[test]
fn train_writes_deterministic_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), TINY);
    let data = generate(tmp.path(), &cfg, "data");
    let mut summaries = Vec::new();
    for run in ["r1", "r2"] {
        let out = tmp.path().join(run);
        let o = lab(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        summaries.push(out);
    }
    let (r1, r2) = (&summaries[0], &summaries[1]);
    for f in ["summary.json", "metrics_seed_0.csv", "metrics_seed_1.csv", "seed_0.ckpt", "seed_1.ckpt"] {
        assert_eq!(fs::read(r1.join(f)).unwrap(), fs::read(r2.join(f)).unwrap(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(r1.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["method"], "advca");
    assert_eq!(summary["per_seed"].as_array().unwrap().len(), 2);
    let csv = fs::read_to_string(r1.join("metrics_seed_0.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.split(',').any(|c| c == "L_adv"));
    assert!(header.split(',').any(|c| c == "L_cau"));

    let o = lab(&[
        "visualize",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&r1.join("seed_0.ckpt")),
        "--dataset",
        s(&data.join("test.jsonl")),
        "--indices",
        "0,3",
        "--out",
        s(&tmp.path().join("dot")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dot = fs::read_to_string(tmp.path().join("dot/graph_3.dot")).unwrap();
    assert!(dot.starts_with("graph ") && dot.trim_end().ends_with('}'));
    assert!(dot.contains("peripheries=2"));

    let o = lab(&[
        "visualize",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&r1.join("seed_0.ckpt")),
        "--dataset",
        s(&data.join("test.jsonl")),
        "--indices",
        "9999",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn erm_summary_has_one_entry_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &TINY.replace("\"advca\"", "\"erm\""));
    let data = generate(tmp.path(), &cfg, "data");
    let out = tmp.path().join("run");
    let o = lab(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out), "--seed", "9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    let seeds: Vec<u64> = summary["per_seed"].as_array().unwrap().iter().map(|r| r["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, [9, 10]);
    let csv = fs::read_to_string(out.join("metrics_seed_9.csv")).unwrap();
    assert!(!csv.lines().next().unwrap().is_empty());
}

#[test]
fn gcs_of_a_file_with_itself_is_near_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), TINY);
    let data = generate(tmp.path(), &cfg, "data");
    let train = data.join("train.jsonl");
    let out = tmp.path().join("gcs");
    let o = lab(&["gcs", "--config", s(&cfg), "--a", s(&train), "--b", s(&train), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("gcs_report.json")).unwrap()).unwrap();
    let mut keys: Vec<&String> = report.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(keys, ["M", "accepted_fraction", "epsilon", "feature_dim", "gcs"]);
    assert!(report["gcs"].as_f64().unwrap() < 0.05);
    assert_eq!(report["M"], 400);
}

#[test]
fn ablate_emits_five_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &TINY.replace("train.epochs = 2", "train.epochs = 1"));
    let data = generate(tmp.path(), &cfg, "data");
    let out = tmp.path().join("abl");
    let o = lab(&["ablate", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,mean_acc,std_acc");
    assert_eq!(lines.len(), 6);
    let variants: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["advca", "wo_adv", "wo_cau", "rdca", "erm"]);
    for l in &lines[1..] {
        let f: Vec<f64> = l.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        assert!((0.0..=1.0).contains(&f[0]));
        assert!(f[1] >= 0.0);
    }
}

#[test]
fn error_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = config(tmp.path(), &format!("{TINY}train.epoch = 3\n"));
    assert_eq!(lab(&["generate", "--config", s(&bad)]).status.code(), Some(2));
    let cfg = config(tmp.path(), TINY);
    let missing = tmp.path().join("nowhere");
    let o = lab(&["train", "--config", s(&cfg), "--data", s(&missing), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(3));
    let garbage = tmp.path().join("bad.jsonl");
    fs::write(&garbage, "not json\n").unwrap();
    let o = lab(&["gcs", "--config", s(&cfg), "--a", s(&garbage), "--b", s(&garbage)]);
    assert_eq!(o.status.code(), Some(3));
}
