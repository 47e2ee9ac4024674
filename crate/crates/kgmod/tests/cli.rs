use std::path::Path;
use std::process::{Command, Output};

fn kgmod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgmod")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(code(&kgmod(&["frobnicate"])), 2);
    assert_eq!(code(&kgmod(&["eval", "--mode", "sideways"])), 2);
}

#[test]
fn invalid_config_names_the_key() {
    let o = kgmod(&["--set", "adapter.lr=-0.5", "config"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("adapter.lr"), "{}", stderr(&o));
    let o = kgmod(&["--set", "mapper.nonsense=1", "config"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("mapper.nonsense"));
}

#[test]
fn config_file_and_overrides_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "seed = 7\n[transe]\nepochs = 12\n").unwrap();
    let o = kgmod(&["--config", path.to_str().unwrap(), "--set", "transe.margin=2", "config"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("seed = 7"), "{out}");
    assert!(out.contains("epochs = 12"));
    assert!(out.contains("margin = 2"));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty");
    let o = kgmod(&["--out-dir", out.to_str().unwrap(), "stats"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("annotated.jsonl"));
    let o = kgmod(&["--config", "/no/such/file.toml", "config"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn annotates_the_patent_fixture() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let dir = tempfile::tempdir().unwrap();
    let sources = dir.path().join("sources.jsonl");
    let source = std::fs::read_to_string(fixtures.join("patent.wiki")).unwrap();
    let record = serde_json::json!({ "doc_id": "patent", "source": source });
    std::fs::write(&sources, format!("{record}\n")).unwrap();
    let titles = fixtures.join("patent_titles.tsv");
    let o = kgmod(&[
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--set",
        &format!("corpus.sources={}", sources.display()),
        "--set",
        &format!("corpus.titles={}", titles.display()),
        "annotate",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let got = std::fs::read_to_string(dir.path().join("annotated.jsonl")).unwrap();
    let want = std::fs::read_to_string(fixtures.join("patent_expected.jsonl")).unwrap();
    assert_eq!(got, want);
}

#[test]
fn diverging_training_is_a_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&kgmod(&["--out-dir", out, "synth"])), 0);
    let o = kgmod(&["--out-dir", out, "--set", "transe.lr=1e300", "--set", "transe.epochs=3", "train-transe"]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}

#[test]
fn selftest_passes() {
    let o = kgmod(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(!out.contains("FAIL"));
    assert!(out.lines().all(|l| l.starts_with("PASS ")));
}

#[test]
fn stages_run_one_at_a_time() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let small = [
        "--out-dir", out,
        "--set", "transe.epochs=20",
        "--set", "corpus.wiki_docs_per_entity=2",
        "--set", "corpus.lm_docs_per_entity=2",
        "--set", "corpus.eval_items=8",
        "--set", "lm.epochs=1",
        "--set", "lm.context=48",
    ];
    for stage in ["synth", "annotate", "stats", "train-transe", "export-table", "train-mapper", "pretrain-lm", "train-adapter"] {
        let mut args = small.to_vec();
        args.push(stage);
        let o = kgmod(&args);
        assert_eq!(code(&o), 0, "{stage}: {}", stderr(&o));
    }
    let stats: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["num_texts"], 100);

    let mut args = small.to_vec();
    args.extend(["generate", "--prompt", "the", "--qid", "Q900001", "--mode", "with-kg", "--max-new", "3"]);
    let o = kgmod(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let mut args = small.to_vec();
    args.extend(["eval", "--mode", "with-kg", "--kg-source", "gold"]);
    let o = kgmod(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("eval_with_kg_report.txt").exists());
    assert!(dir.path().join("eval_with_kg_records.csv").exists());
}
