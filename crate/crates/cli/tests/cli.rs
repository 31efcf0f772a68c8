use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = format!("[paths]\nwork_dir = \"work\"\n\n[synth]\nn_patients = 6\nnotes_per_patient = 4\n{extra}");
        fs::write(dir.path().join("clinret.toml"), config).unwrap();
        Self { dir }
    }

    fn work(&self, name: &str) -> PathBuf {
        self.dir.path().join("work").join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_clinret"))
            .current_dir(self.dir.path())
            .arg("--config")
            .arg(self.dir.path().join("clinret.toml"))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed with {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn reply(label: bool) -> String {
    format!("```json\n{{\"reasoning\": \"scripted\", \"evidence_terms\": [], \"label\": {label}}}\n```")
}

fn write_mock(ws: &Workspace, label: bool) -> PathBuf {
    let path = ws.dir.path().join("mock.jsonl");
    let lines = [
        serde_json::json!({"stage": "label", "response": reply(label)}),
        serde_json::json!({"stage": "verify", "response": reply(false)}),
    ];
    fs::write(&path, lines.iter().map(|l| format!("{l}\n")).collect::<String>()).unwrap();
    path
}

fn synth_pipeline(ws: &Workspace) {
    ws.ok(&["synth"]);
    ws.ok(&["chunk"]);
    ws.ok(&["score"]);
    ws.ok(&["eval", "--baselines"]);
}

#[test]
fn synthetic_pipeline_scores_perfectly_and_reruns_byte_identically() {
    let a = Workspace::new("");
    synth_pipeline(&a);
    let report = json(&a.work("reports/report.json"));
    assert_eq!(report["overall"]["precision"], 1.0, "{report}");
    assert_eq!(report["overall"]["recall"], 1.0, "{report}");
    let csv = fs::read_to_string(a.work("reports/comparison.csv")).unwrap();
    assert!(csv.starts_with("system,regime,concept,precision,recall,f1\n"));
    assert!(csv.contains("reference [paper]"));

    let b = Workspace::new("");
    synth_pipeline(&b);
    let (fa, fb) = (files(&a.dir.path().join("work")), files(&b.dir.path().join("work")));
    assert_eq!(fa.iter().map(|f| &f.0).collect::<Vec<_>>(), fb.iter().map(|f| &f.0).collect::<Vec<_>>());
    for (x, y) in fa.iter().zip(&fb) {
        assert!(x.1 == y.1, "{} differs between runs", x.0);
    }
}

#[test]
fn seed_flag_changes_the_corpus() {
    let a = Workspace::new("");
    let b = Workspace::new("");
    a.ok(&["synth"]);
    b.ok(&["--seed", "7", "synth"]);
    assert_ne!(fs::read(a.work("notes.jsonl")).unwrap(), fs::read(b.work("notes.jsonl")).unwrap());
}

#[test]
fn eval_without_gold_exits_3_and_names_the_path() {
    let ws = Workspace::new("");
    ws.ok(&["synth"]);
    ws.ok(&["chunk"]);
    ws.ok(&["score"]);
    fs::remove_file(ws.work("gold.jsonl")).unwrap();
    let out = ws.run(&["eval"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gold.jsonl"));
}

#[test]
fn harvest_is_bounded_by_concepts_times_k() {
    let ws = Workspace::new("");
    ws.ok(&["synth"]);
    ws.ok(&["chunk"]);
    ws.ok(&["index"]);
    ws.ok(&["harvest", "--per-concept-k", "5000"]);
    let chunks = fs::read_to_string(ws.work("chunks.jsonl")).unwrap().lines().count();
    let pairs = fs::read_to_string(ws.work("candidates.jsonl")).unwrap().lines().count();
    assert!(pairs <= 13 * 5000);
    // k exceeds the corpus, so every chunk is a candidate for every concept
    assert_eq!(pairs, 13 * chunks);
}

#[test]
fn dry_run_writes_nothing() {
    let ws = Workspace::new("");
    for stage in [&["synth"][..], &["chunk"], &["index"], &["score"], &["eval"], &["bench"]] {
        let mut args = vec!["--dry-run"];
        args.extend_from_slice(stage);
        let stdout = ws.ok(&args);
        assert!(!stdout.is_empty(), "{stage:?} printed no plan");
    }
    assert!(!ws.dir.path().join("work").exists());
}

#[test]
fn unknown_config_key_exits_2() {
    let ws = Workspace::new("bogus_key = 1\n");
    assert_eq!(ws.run(&["synth"]).status.code(), Some(2));
    let missing = Command::new(env!("CARGO_BIN_EXE_clinret")).args(["--config", "/nonexistent/clinret.toml", "synth"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_1() {
    let ws = Workspace::new("");
    assert_eq!(ws.run(&["score", "--scorer", "bogus"]).status.code(), Some(1));
    assert_eq!(ws.run(&["no-such-stage"]).status.code(), Some(1));
    assert_eq!(ws.run(&["--help"]).status.code(), Some(0));
}

#[test]
fn failed_label_run_leaves_no_labels_file() {
    let ws = Workspace::new("");
    ws.ok(&["synth"]);
    ws.ok(&["chunk"]);
    ws.ok(&["index"]);
    ws.ok(&["harvest", "--per-concept-k", "3"]);
    let empty = ws.dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = ws.run(&["label", "--mock-llm", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!ws.work("labels.jsonl").exists());
}

#[test]
fn label_and_emit_are_deterministic_with_a_mock() {
    let run = || {
        let ws = Workspace::new("");
        let mock = write_mock(&ws, true);
        ws.ok(&["synth"]);
        ws.ok(&["chunk"]);
        ws.ok(&["index"]);
        ws.ok(&["harvest", "--per-concept-k", "4"]);
        ws.ok(&["label", "--mock-llm", mock.to_str().unwrap()]);
        ws.ok(&["emit-train", "--mode", "multi"]);
        let labels = fs::read(ws.work("labels.jsonl")).unwrap();
        let train = fs::read_to_string(ws.work("train.jsonl")).unwrap();
        (ws, labels, train)
    };
    let (ws, labels_a, train_a) = run();
    let (_, labels_b, train_b) = run();
    assert_eq!(labels_a, labels_b);
    assert_eq!(train_a, train_b);
    for line in train_a.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["labels"].as_object().unwrap().len(), 13);
    }
    // rerun over a complete checkpoint needs no scripted replies
    let empty = ws.dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    ws.ok(&["label", "--mock-llm", empty.to_str().unwrap()]);
    assert_eq!(fs::read(ws.work("labels.jsonl")).unwrap(), labels_a);
}

#[test]
fn sweep_and_bench_write_reports() {
    let ws = Workspace::new("");
    synth_pipeline(&ws);
    ws.ok(&["index"]);
    ws.ok(&["sweep", "--ks", "5,10,20"]);
    let sweep = fs::read_to_string(ws.work("reports/sweep.csv")).unwrap();
    assert!(sweep.starts_with("system,k,concept,precision,recall,f1\n"));
    assert!(sweep.contains("Open AI Ada reference [paper],25,overall"));
    ws.ok(&["bench"]);
    let latency = json(&ws.work("reports/latency.json"));
    assert_eq!(latency["samples"].as_array().unwrap().len(), 6);
    assert_eq!(latency["f1"], 1.0);
    let csv = fs::read_to_string(ws.work("reports/latency.csv")).unwrap();
    assert!(csv.contains("Onco-Ret (O),318.00"));
}
