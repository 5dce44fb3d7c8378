use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn attrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attrec")).args(args).output().expect("binary runs")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_RUN: &str = r#"{
  "encoder": {"hidden": 16, "proj_dim": 8, "layers": 1, "heads": 2, "ff_dim": 32, "max_positions": 96},
  "tokenizer": {"attr_cap": 4, "max_items": 6, "max_tokens": 96},
  "train": {"max_epochs": 2, "stage2_epochs": 1}
}"#;

const SMALL_SYNTH: &str =
    r#"{"brands": 4, "categories": 4, "items": 30, "users": 40, "min_len": 4, "max_len": 6, "title_words": 12}"#;

#[test]
fn selfcheck_passes() {
    let out = attrec(&["selfcheck"]);
    assert!(out.status.success(), "{}", text(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{stdout}");
}

#[test]
fn usage_and_data_errors_have_distinct_exit_codes() {
    assert_eq!(attrec(&["train"]).status.code(), Some(1));
    assert_eq!(attrec(&["no-such-command"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = attrec(&["evaluate", "--checkpoint", p(&dir.path().join("missing.json")), "--data", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"tau": -1}}"#).unwrap();
    let out = attrec(&["train", "--data", p(dir.path()), "--config", p(&bad), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));
    assert!(attrec(&["--help"]).status.success());
}

#[test]
fn synth_train_evaluate_recommend_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run_dir = dir.path().join("run");
    let synth_cfg = dir.path().join("synth.json");
    let run_cfg = dir.path().join("run.json");
    fs::write(&synth_cfg, SMALL_SYNTH).unwrap();
    fs::write(&run_cfg, SMALL_RUN).unwrap();

    let out = attrec(&["synth", "--config", p(&synth_cfg), "--seed", "4", "--out", p(&data)]);
    assert!(out.status.success(), "{}", text(&out));
    for f in ["items.jsonl", "interactions.jsonl", "preferences.json"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let out = attrec(&["--deterministic", "train", "--desk", "--data", p(&data), "--config", p(&run_cfg), "--out", p(&run_dir)]);
    assert!(out.status.success(), "{}", text(&out));
    for f in ["final.ckpt.json", "stage1_best.ckpt.json", "index.bin", "vocab.txt", "train_log.jsonl", "test_report.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    assert!(log.lines().count() >= 3);

    let final_ckpt = run_dir.join("final.ckpt.json");
    let out = attrec(&["evaluate", "--checkpoint", p(&final_ckpt), "--data", p(&data), "--ks", "10", "--mask-history"]);
    assert!(out.status.success(), "{}", text(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let saved: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dir.join("test_report.json")).unwrap()).unwrap();
    let ndcg = report["metrics"]["ndcg@10"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&ndcg));
    assert_eq!(report["metrics"]["ndcg@10"], saved["metrics"]["ndcg@10"]);

    let stage1 = run_dir.join("stage1_best.ckpt.json");
    let rebuilt = dir.path().join("rebuilt.bin");
    let out = attrec(&["index", "--checkpoint", p(&stage1), "--data", p(&data), "--out", p(&rebuilt)]);
    assert!(out.status.success(), "{}", text(&out));
    assert_eq!(fs::read(&rebuilt).unwrap(), fs::read(run_dir.join("index.bin")).unwrap());
    let out = attrec(&["index", "--checkpoint", p(&final_ckpt), "--data", p(&data), "--out", p(&rebuilt)]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));

    let seqs = dir.path().join("seqs.jsonl");
    let first = fs::read_to_string(data.join("interactions.jsonl")).unwrap().lines().next().unwrap().to_owned();
    fs::write(&seqs, format!("{first}\n")).unwrap();
    let out = attrec(&["recommend", "--checkpoint", p(&final_ckpt), "--data", p(&data), "--sequences", p(&seqs), "-k", "5"]);
    assert!(out.status.success(), "{}", text(&out));
    let line: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let recs = line["recommendations"].as_array().unwrap();
    assert_eq!(recs.len(), 5);
    assert_eq!(recs[0]["attributes"].as_array().unwrap().len(), 3);
}

#[test]
fn recommend_caps_k_at_the_catalog_size() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run_dir = dir.path().join("run");
    fs::create_dir_all(&data).unwrap();
    let items = [("a", "Magic Mouse", "Apple"), ("b", "G913 Keyboard", "Logitech"), ("c", "Gaming Headset", "Logitech")];
    let lines: Vec<String> = items
        .iter()
        .map(|(id, t, b)| serde_json::json!({"item_id": id, "attributes": [["Title", t], ["Brand", b]]}).to_string())
        .collect();
    fs::write(data.join("items.jsonl"), lines.join("\n") + "\n").unwrap();
    let seqs = ["u1 a b c a", "u2 b c a b", "u3 c a b c", "u4 a c b a"];
    let lines: Vec<String> = seqs
        .iter()
        .map(|s| {
            let mut parts = s.split(' ');
            let user = parts.next().unwrap();
            serde_json::json!({"user_id": user, "item_ids": parts.collect::<Vec<_>>()}).to_string()
        })
        .collect();
    fs::write(data.join("interactions.jsonl"), lines.join("\n") + "\n").unwrap();
    let run_cfg = dir.path().join("run.json");
    fs::write(&run_cfg, SMALL_RUN).unwrap();
    let out = attrec(&["train", "--desk", "--data", p(&data), "--config", p(&run_cfg), "--out", p(&run_dir)]);
    assert!(out.status.success(), "{}", text(&out));

    let query = dir.path().join("q.jsonl");
    fs::write(&query, r#"{"user_id": "q", "item_ids": ["a"]}"#).unwrap();
    let out = attrec(&[
        "recommend",
        "--checkpoint",
        p(&run_dir.join("final.ckpt.json")),
        "--data",
        p(&data),
        "--sequences",
        p(&query),
        "-k",
        "5",
    ]);
    assert!(out.status.success(), "{}", text(&out));
    let line: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(line["recommendations"].as_array().unwrap().len(), 3);
    let out = attrec(&["recommend", "--checkpoint", p(&run_dir.join("final.ckpt.json")), "--data", p(&data), "--sequences", p(&query), "-k", "0"]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));
}
