use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;
use styleforge::adapters::{LexiconClassifier, SentimentClassifier};

fn styleforge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_styleforge"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LLM_API_KEY")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn write_corpus(dir: &Path, code: &str, n: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let words = [("good", "bad"), ("great", "awful"), ("lovely", "rude")];
    let lines: Vec<String> = (0..n)
        .map(|i| {
            let (p, q) = words[(i % 3) as usize];
            json!({
                "id": i,
                "positive": format!("the food {i} was {p}"),
                "negative": format!("the food {i} was {q}"),
                "original_polarity": if i % 2 == 0 { "positive" } else { "negative" },
            })
            .to_string()
        })
        .collect();
    std::fs::write(dir.join(format!("{code}.jsonl")), lines.join("\n")).unwrap();
}

fn write_config(dir: &Path, methodologies: &str) {
    write_corpus(&dir.join("data"), "hi", 20);
    write_corpus(&dir.join("data"), "en", 20);
    let cfg = format!(
        r#"
[data]
dir = "data"
languages = ["hi"]
train = 8
dev = 4
test = 8

[backends.translator]
id = "identity"

[experiments]
methodologies = [{methodologies}]
learning_rate = 0.05
epochs = 1
classifier_learning_rate = 0.5
classifier_epochs = 2

[report]
plots = false
"#
    );
    std::fs::write(dir.join("config.toml"), cfg).unwrap();
}

#[test]
fn run_then_rerun_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), r#""Parallel", "AE""#);
    let o = styleforge(&["run", "--config", "config.toml"], tmp.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(tmp.path().join("runs/report/table.txt").exists());

    let o = styleforge(&["run", "--config", "config.toml", "--methodology", "Parallel"], tmp.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("up to date"), "{}", text(&o));

    let o = styleforge(&["eval", "--run-dir", "runs/hi/parallel/13", "--out", "eval.json"], tmp.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(v["methodology"], "Parallel");

    let o = styleforge(
        &["human-eval", "sheets", "--run-dir", "runs/hi/parallel/13", "--run-dir", "runs/hi/ae/13", "--out-dir", "sheets", "--n", "4"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(tmp.path().join("sheets/key.csv").exists());
    assert!(tmp.path().join("sheets/annotator_2.csv").exists());
}

#[test]
fn staged_verbs() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), r#""Parallel""#);
    for verb in ["prepare", "train", "infer"] {
        let o = styleforge(&[verb, "--config", "config.toml"], tmp.path());
        assert_eq!(code(&o), 0, "{verb}: {}", text(&o));
    }
    assert!(tmp.path().join("runs/splits/hi.13.json").exists());
    assert!(tmp.path().join("runs/hi/parallel/13/outputs.pos2neg.jsonl").exists());
    assert!(!tmp.path().join("runs/hi/parallel/13/report.json").exists());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), r#""Parallel", "Bogus""#);
    let o = styleforge(&["run", "--config", "config.toml"], tmp.path());
    assert_eq!(code(&o), 2, "{}", text(&o));
    assert!(text(&o).contains("experiments.methodologies[1]"), "{}", text(&o));

    let o = styleforge(&["run", "--config", "missing.toml"], tmp.path());
    assert_eq!(code(&o), 2, "{}", text(&o));

    let o = styleforge(&["frobnicate"], tmp.path());
    assert_eq!(code(&o), 2);

    let o = styleforge(&["mask", "--lang", "xx", "--in", "a", "--out", "b"], tmp.path());
    assert_eq!(code(&o), 2, "{}", text(&o));
}

#[test]
fn runtime_failures_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), r#""Parallel""#);
    let o = styleforge(&["eval", "--run-dir", "runs/nowhere", "--out", "x.json", "--config", "config.toml"], tmp.path());
    assert_eq!(code(&o), 3, "{}", text(&o));

    std::fs::write(tmp.path().join("clf.json"), "{\"backend\": \"lexicon\"").unwrap();
    std::fs::write(tmp.path().join("in.txt"), "good food\n").unwrap();
    let o = styleforge(&["mask", "--lang", "en", "--classifier", "clf.json", "--in", "in.txt", "--out", "o.jsonl"], tmp.path());
    assert_eq!(code(&o), 3, "{}", text(&o));
}

#[test]
fn mask_plain_and_json_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let clf = LexiconClassifier::with_weights([("great".to_string(), 2.0), ("awful".to_string(), -2.0)], 0.0);
    std::fs::write(tmp.path().join("clf.json"), clf.save().unwrap().to_string()).unwrap();
    std::fs::write(
        tmp.path().join("in.txt"),
        "the food was great\n\n{\"text\": \"service was awful\", \"label\": \"negative\"}\n",
    )
    .unwrap();
    let o = styleforge(&["mask", "--lang", "en", "--classifier", "clf.json", "--in", "in.txt", "--out", "out.jsonl"], tmp.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    let out = std::fs::read_to_string(tmp.path().join("out.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["masked"], "the food was <mask>");
    assert_eq!(rows[1]["masked"], "service was <mask>");
}

#[test]
fn published_report() {
    let tmp = tempfile::tempdir().unwrap();
    let o = styleforge(&["report", "--published", "--out-dir", "rep", "--no-plots"], tmp.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    let table = std::fs::read_to_string(tmp.path().join("rep/table.txt")).unwrap();
    assert!(table.contains("73.3*"));
    assert!(tmp.path().join("rep/table.csv").exists());
}

#[test]
fn llm_echo_writes_one_direction() {
    let tmp = tempfile::tempdir().unwrap();
    write_corpus(&tmp.path().join("data"), "hi", 1000);
    let o = styleforge(
        &["llm", "--lang", "hi", "--direction", "pos2neg", "--backend", "echo", "--data-dir", "data", "--out-dir", "llm"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
    let outs = std::fs::read_to_string(tmp.path().join("llm/outputs.pos2neg.jsonl")).unwrap();
    assert_eq!(outs.lines().count(), 500);
    assert!(!tmp.path().join("llm/outputs.neg2pos.jsonl").exists());
    assert_eq!(std::fs::read_to_string(tmp.path().join("llm/llm_log.jsonl")).unwrap().lines().count(), 500);

    let o = styleforge(
        &["llm", "--lang", "hi", "--direction", "pos2neg", "--backend", "gpt", "--data-dir", "data"],
        tmp.path(),
    );
    assert_eq!(code(&o), 2, "{}", text(&o));
}
