use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clozemem::corpus::read_canonical;
use clozemem::training::Checkpoint;
use clozemem::EvalReport;
use serde_json::Value;
use tempfile::TempDir;

struct Run {
    dir: TempDir,
}

impl Run {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn exec(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_clozemem"))
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.exec(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn json(&self, rel: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.path(rel)).unwrap()).unwrap()
    }

    fn lines(&self, rel: &str) -> Vec<Value> {
        fs::read_to_string(self.path(rel))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    fn synth(&self, out: &str, extra: &[&str]) {
        let mut args = vec!["synth", "--out-dir", out];
        args.extend_from_slice(extra);
        self.ok(&args);
    }
}

fn small(run: &Run) {
    run.synth(
        "data",
        &[
            "--train-size",
            "200",
            "--dev-size",
            "50",
            "--test-size",
            "80",
            "--unseen-rate",
            "0.3",
        ],
    );
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../docs")
        .join(name);
    let schema: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn assert_valid(validator: &jsonschema::Validator, doc: &Value) {
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "schema violations: {errors:?}");
}

#[test]
fn synth_writes_splits_metadata_and_config() {
    let run = Run::new();
    run.synth(
        "u",
        &[
            "--train-size",
            "100",
            "--dev-size",
            "10",
            "--test-size",
            "1000",
            "--unseen-rate",
            "0.6",
        ],
    );
    for f in [
        "train.jsonl",
        "dev.jsonl",
        "test.jsonl",
        "metadata.json",
        "embeddings.txt",
        "resolved_config.json",
    ] {
        assert!(run.path("u").join(f).is_file(), "{f} missing");
    }
    let meta = run.json("u/metadata.json");
    let unseen = meta["test"]["unseen_count"].as_u64().unwrap();
    assert!((540..=660).contains(&unseen), "unseen {unseen}");
    let cfg = run.json("u/resolved_config.json");
    assert_eq!(cfg["seed"], 13);
    assert_eq!(cfg["synthetic"]["unseen_rate"], 0.6);
    assert_eq!(cfg["synthetic"]["seed"], 13);
}

#[test]
fn synth_is_reproducible_and_seed_sensitive() {
    let run = Run::new();
    run.synth("a", &["--train-size", "50", "--seed", "5"]);
    run.synth("b", &["--train-size", "50", "--seed", "5"]);
    run.synth("c", &["--train-size", "50", "--seed", "6"]);
    let read = |d: &str| fs::read(run.path(d).join("train.jsonl")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn synth_zero_distractors_gives_single_entity_passages() {
    let run = Run::new();
    run.synth(
        "z",
        &[
            "--train-size",
            "30",
            "--dev-size",
            "5",
            "--test-size",
            "5",
            "--distractor-windows",
            "0",
        ],
    );
    for inst in read_canonical(run.path("z/train.jsonl")).unwrap().iter() {
        assert_eq!(inst.distinct_entities().len(), 1);
        assert_eq!(inst.distinct_entities()[0].0, inst.answer_key());
    }
}

#[test]
fn synth_config_errors_name_the_field() {
    let run = Run::new();
    let out = run.exec(&["synth", "--out-dir", "x", "--unseen-rate", "1.5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unseen_rate"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let run = Run::new();
    fs::write(
        run.path("cfg.json"),
        r#"{"seed": 3, "synthetic": {"train_size": 40, "test_size": 7}}"#,
    )
    .unwrap();
    run.ok(&[
        "synth",
        "--config",
        "cfg.json",
        "--out-dir",
        "o",
        "--test-size",
        "9",
    ]);
    let cfg = run.json("o/resolved_config.json");
    assert_eq!(cfg["seed"], 3);
    assert_eq!(cfg["synthetic"]["train_size"], 40);
    assert_eq!(cfg["synthetic"]["test_size"], 9);
    assert_eq!(read_canonical(run.path("o/test.jsonl")).unwrap().len(), 9);
}

#[test]
fn prepare_caps_anonymizes_and_filters() {
    let run = Run::new();
    run.synth(
        "d",
        &[
            "--train-size",
            "40",
            "--dev-size",
            "5",
            "--test-size",
            "30",
            "--entities-per-passage",
            "50",
            "--entity-pool-size",
            "300",
            "--distractor-windows",
            "60",
        ],
    );
    run.ok(&[
        "prepare",
        "--out-dir",
        "cap",
        "--input",
        "d/test.jsonl",
        "--transform",
        "cap:10",
    ]);
    let capped = read_canonical(run.path("cap/prepared.jsonl")).unwrap();
    assert!(capped
        .iter()
        .all(|i| i.candidates.as_ref().map(Vec::len) == Some(10)));

    run.ok(&[
        "prepare",
        "--out-dir",
        "anon",
        "--input",
        "d/test.jsonl",
        "--transform",
        "anonymize",
    ]);
    let anon = read_canonical(run.path("anon/prepared.jsonl")).unwrap();
    for inst in anon.iter() {
        for e in &inst.entities {
            let k = e.text.strip_prefix("@entity_").expect("anonymized entity");
            assert!(
                !k.is_empty() && k.chars().all(|c| c.is_ascii_digit()),
                "{}",
                e.text
            );
        }
    }
    let maps = run.lines("anon/entity_map.jsonl");
    assert_eq!(maps.len(), anon.len());

    run.ok(&[
        "prepare",
        "--out-dir",
        "seen",
        "--input",
        "d/test.jsonl",
        "--transform",
        "seen-filter",
        "--train",
        "d/test.jsonl",
    ]);
    assert_eq!(
        read_canonical(run.path("seen/prepared.jsonl"))
            .unwrap()
            .len(),
        30
    );
    let log = run.json("seen/transforms.json");
    assert_eq!(log[1]["transform"], "seen-filter");
    assert_eq!(log[1]["removed"].as_array().unwrap().len(), 0);
}

#[test]
fn prepare_usage_errors() {
    let run = Run::new();
    small(&run);
    let out = run.exec(&[
        "prepare",
        "--out-dir",
        "p",
        "--input",
        "data/test.jsonl",
        "--transform",
        "shuffle",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = run.exec(&[
        "prepare",
        "--out-dir",
        "p",
        "--input",
        "data/test.jsonl",
        "--transform",
        "seen-filter",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!run.path("p/prepared.jsonl").exists());
}

#[test]
fn prepare_imports_cbt_blocks() {
    let run = Run::new();
    let mut block = String::new();
    for n in 1..=20 {
        block.push_str(&format!("{n} Tom went to the market with Anna .\n"));
    }
    block.push_str("21 Then XXXXX bought bread .\tTom\t\tAnna|Tom|market\n\n");
    fs::write(run.path("cbt.txt"), &block).unwrap();
    run.ok(&[
        "prepare",
        "--out-dir",
        "c",
        "--input",
        "cbt.txt",
        "--format",
        "cbt",
    ]);
    let data = read_canonical(run.path("c/prepared.jsonl")).unwrap();
    assert_eq!(data.len(), 1);
    assert_eq!(data[0].candidates.as_ref().unwrap().len(), 3);
}

#[test]
fn train_pointer_checkpoint_has_no_head() {
    let run = Run::new();
    small(&run);
    run.ok(&[
        "train",
        "--out-dir",
        "p",
        "--train",
        "data/train.jsonl",
        "--dev",
        "data/dev.jsonl",
        "--variant",
        "pointer",
        "--epochs",
        "1",
        "--dim",
        "8",
    ]);
    let ck = Checkpoint::load(run.path("p/model.ckpt")).unwrap();
    assert!(ck.params.find("W").is_none() && ck.params.find("b").is_none());
    assert!(ck.params.find("E").is_some());
    let log = run.json("p/train_log.json");
    assert_eq!(log["epochs"].as_array().unwrap().len(), 1);
    assert_eq!(log["variant"], "pointer");
}

#[test]
fn train_trace_logs_one_alpha_per_hop() {
    let run = Run::new();
    small(&run);
    run.ok(&[
        "train",
        "--out-dir",
        "t",
        "--train",
        "data/train.jsonl",
        "--dev",
        "data/dev.jsonl",
        "--hops",
        "2",
        "--trace",
        "--epochs",
        "1",
        "--dim",
        "8",
    ]);
    let trace = run.lines("t/trace.jsonl");
    assert_eq!(trace.len(), 50);
    for line in &trace {
        let alphas = line["alphas"].as_array().unwrap();
        assert_eq!(alphas.len(), 2);
        let sum: f64 = alphas[1]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}

#[test]
fn train_missing_dev_is_a_usage_error() {
    let run = Run::new();
    small(&run);
    let out = run.exec(&[
        "train",
        "--out-dir",
        "t",
        "--train",
        "data/train.jsonl",
        "--dev",
        "data/missing.jsonl",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = run.exec(&["train", "--out-dir", "t", "--train", "data/train.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!run.path("t/model.ckpt").exists());
}

#[test]
fn eval_after_memorization_scores_100_on_training_set() {
    let run = Run::new();
    run.synth(
        "m",
        &[
            "--train-size",
            "10",
            "--dev-size",
            "5",
            "--test-size",
            "5",
            "--distractor-windows",
            "5",
            "--entities-per-passage",
            "6",
        ],
    );
    run.ok(&[
        "train",
        "--out-dir",
        "t",
        "--train",
        "m/train.jsonl",
        "--dev",
        "m/train.jsonl",
        "--lr",
        "0.05",
        "--epochs",
        "30",
        "--batch-size",
        "1",
        "--dim",
        "20",
    ]);
    run.ok(&[
        "eval",
        "--out-dir",
        "e",
        "--checkpoint",
        "t/model.ckpt",
        "--test",
        "m/train.jsonl",
    ]);
    let report = EvalReport::read(run.path("e/report.json")).unwrap();
    assert_eq!(report.em, 100.0);
    assert_eq!(run.lines("e/predictions.jsonl").len(), 10);
}

#[test]
fn eval_stats_on_single_window_instances() {
    let run = Run::new();
    run.synth(
        "s",
        &[
            "--train-size",
            "40",
            "--dev-size",
            "10",
            "--test-size",
            "20",
            "--distractor-windows",
            "0",
        ],
    );
    run.ok(&[
        "train",
        "--out-dir",
        "t",
        "--train",
        "s/train.jsonl",
        "--dev",
        "s/dev.jsonl",
        "--epochs",
        "1",
        "--dim",
        "8",
    ]);
    run.ok(&[
        "eval",
        "--out-dir",
        "e",
        "--checkpoint",
        "t/model.ckpt",
        "--test",
        "s/test.jsonl",
        "--stats",
    ]);
    let report = run.json("e/report.json");
    assert_eq!(report["attention"]["mean_max_alpha"], 1.0);
    assert_eq!(report["attention"]["mean_abs_deviation"], 0.0);
}

#[test]
fn eval_compare_with_itself_has_zero_deltas_and_reports_match_schema() {
    let run = Run::new();
    small(&run);
    run.ok(&[
        "train",
        "--out-dir",
        "t",
        "--train",
        "data/train.jsonl",
        "--dev",
        "data/dev.jsonl",
        "--epochs",
        "2",
        "--dim",
        "8",
    ]);
    let eval = |out: &str, extra: &[&str]| {
        let mut args = vec![
            "eval",
            "--out-dir",
            out,
            "--checkpoint",
            "t/model.ckpt",
            "--test",
            "data/test.jsonl",
            "--train",
            "data/train.jsonl",
            "--stats",
        ];
        args.extend_from_slice(extra);
        run.ok(&args);
    };
    eval("a", &[]);
    eval("b", &["--compare", "a/report.json"]);
    let cmp = run.json("b/comparison.json");
    for part in ["overall", "seen", "unseen"] {
        for m in ["em", "f1", "accuracy"] {
            assert_eq!(cmp[part][m], 0.0, "{part}.{m}");
        }
    }
    assert!(
        cmp["fixed"].as_array().unwrap().is_empty() && cmp["broken"].as_array().unwrap().is_empty()
    );

    let report = run.json("a/report.json");
    assert!(report.get("seen").is_some() && report.get("attention").is_some());
    assert_valid(&schema("report.schema.json"), &report);
    assert_valid(&schema("comparison.schema.json"), &cmp);
    assert_eq!(
        fs::read(run.path("a/report.json")).unwrap(),
        fs::read(run.path("b/report.json")).unwrap()
    );
}

#[test]
fn eval_rejects_foreign_vocabulary() {
    let run = Run::new();
    small(&run);
    run.ok(&[
        "train",
        "--out-dir",
        "t",
        "--train",
        "data/train.jsonl",
        "--dev",
        "data/dev.jsonl",
        "--epochs",
        "1",
        "--dim",
        "8",
    ]);
    let line = r#"{"id":"x","passage":["zz","Q","yy"],"entities":[[1,1,"Q"]],"query":["zz","@gap"],"answer":"Q"}"#;
    fs::write(run.path("foreign.jsonl"), format!("{line}\n")).unwrap();
    let out = run.exec(&[
        "eval",
        "--out-dir",
        "e",
        "--checkpoint",
        "t/model.ckpt",
        "--test",
        "foreign.jsonl",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary mismatch"));
}

#[test]
fn pointer_eval_counts_disagreements() {
    let run = Run::new();
    small(&run);
    run.ok(&[
        "train",
        "--out-dir",
        "t",
        "--train",
        "data/train.jsonl",
        "--dev",
        "data/dev.jsonl",
        "--variant",
        "pointer",
        "--epochs",
        "1",
        "--dim",
        "8",
    ]);
    run.ok(&[
        "eval",
        "--out-dir",
        "e",
        "--checkpoint",
        "t/model.ckpt",
        "--test",
        "data/test.jsonl",
    ]);
    let report = run.json("e/report.json");
    assert!(report["pointer_disagreements"].as_u64().is_some());
    assert_valid(&schema("report.schema.json"), &report);
}

#[test]
fn random_baseline_with_ten_candidates_is_near_ten_percent() {
    let run = Run::new();
    run.synth(
        "d",
        &[
            "--train-size",
            "10",
            "--dev-size",
            "10",
            "--test-size",
            "5000",
            "--entities-per-passage",
            "12",
        ],
    );
    run.ok(&[
        "prepare",
        "--out-dir",
        "p",
        "--input",
        "d/test.jsonl",
        "--transform",
        "cap:10",
    ]);
    run.ok(&[
        "baseline",
        "--out-dir",
        "b",
        "--kind",
        "random",
        "--test",
        "p/prepared.jsonl",
    ]);
    let report = EvalReport::read(run.path("b/report.json")).unwrap();
    assert!((report.em - 10.0).abs() <= 2.0, "random EM {}", report.em);
    assert_valid(&schema("report.schema.json"), &run.json("b/report.json"));
}

#[test]
fn maxfreq_baseline_is_deterministic() {
    let run = Run::new();
    small(&run);
    run.ok(&[
        "baseline",
        "--out-dir",
        "a",
        "--kind",
        "maxfreq",
        "--test",
        "data/test.jsonl",
        "--train",
        "data/train.jsonl",
    ]);
    run.ok(&[
        "baseline",
        "--out-dir",
        "b",
        "--kind",
        "maxfreq",
        "--test",
        "data/test.jsonl",
        "--train",
        "data/train.jsonl",
    ]);
    assert_eq!(
        fs::read(run.path("a/report.json")).unwrap(),
        fs::read(run.path("b/report.json")).unwrap()
    );
    assert_valid(&schema("report.schema.json"), &run.json("a/report.json"));
}

#[test]
fn baseline_usage_errors() {
    let run = Run::new();
    small(&run);
    let out = run.exec(&[
        "baseline",
        "--out-dir",
        "b",
        "--kind",
        "simwindow",
        "--test",
        "data/test.jsonl",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = run.exec(&[
        "baseline",
        "--out-dir",
        "b",
        "--kind",
        "query-only",
        "--test",
        "data/test.jsonl",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = run.exec(&[
        "baseline",
        "--out-dir",
        "b",
        "--kind",
        "coinflip",
        "--test",
        "data/test.jsonl",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simwindow_and_query_only_baselines_run() {
    let run = Run::new();
    small(&run);
    run.ok(&[
        "baseline",
        "--out-dir",
        "s",
        "--kind",
        "simwindow",
        "--test",
        "data/test.jsonl",
        "--embeddings",
        "data/embeddings.txt",
    ]);
    assert!(EvalReport::read(run.path("s/report.json")).unwrap().em > 50.0);
    run.ok(&[
        "baseline",
        "--out-dir",
        "q",
        "--kind",
        "query-only",
        "--test",
        "data/test.jsonl",
        "--train",
        "data/train.jsonl",
        "--dev",
        "data/dev.jsonl",
        "--epochs",
        "1",
        "--dim",
        "8",
    ]);
    let ck = Checkpoint::load(run.path("q/model.ckpt")).unwrap();
    assert_eq!(ck.model_config.variant, clozemem::Variant::QueryOnly);
    assert_eq!(run.json("q/resolved_config.json")["kind"], "query-only");
}

#[test]
fn grid_reports_sorted_rows_and_best_checkpoint() {
    let run = Run::new();
    small(&run);
    run.ok(&[
        "grid",
        "--out-dir",
        "g",
        "--train",
        "data/train.jsonl",
        "--dev",
        "data/dev.jsonl",
        "--grid-lr",
        "0.01,0.001",
        "--grid-dim",
        "8",
        "--grid-hops",
        "1,2",
        "--epochs",
        "1",
    ]);
    let grid = run.json("g/grid.json");
    let rows = grid["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let scores: Vec<f64> = rows
        .iter()
        .map(|r| r["dev_score"].as_f64().unwrap())
        .collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    let ck = Checkpoint::load(run.path("g/model.ckpt")).unwrap();
    assert_eq!(ck.dev_score, scores[0]);
    assert_eq!(
        run.json("g/resolved_config.json")["train_config"]["grid_lr"][1],
        0.001
    );
}
