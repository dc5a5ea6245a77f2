use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_codeorigin"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_with_stdin(args: &[&str], stdin: &str) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn sample(problem: &str, origin: &str, code: &str) -> String {
    serde_json::json!({
        "problem_id": problem,
        "origin": origin,
        "code": code,
        "source_dataset": "fixture",
        "formatted": false,
    })
    .to_string()
}

fn write_lines(path: &Path, lines: &[String]) {
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

/// Terse tab-indented human code against verbose space-indented GPT code.
fn styled_corpus(dir: &Path, problems: usize) -> PathBuf {
    let mut lines = Vec::new();
    for p in 0..problems {
        for v in 0..2 {
            lines.push(sample(
                &format!("p{p}"),
                "human",
                &format!("n=int(input())\nfor i in range(n):\n\tx{v}=i*{p}\n\tprint(x{v})\n"),
            ));
            lines.push(sample(
                &format!("p{p}"),
                "gpt",
                &format!(
                    "def solve_problem_{p}(values):\n    \"\"\"Compute the result.\"\"\"\n    result_{v} = []\n    for value in values:\n        result_{v}.append(value * {p})\n    return result_{v}\n"
                ),
            ));
        }
    }
    let path = dir.join("corpus.jsonl");
    write_lines(&path, &lines);
    path
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn prepare_follows_the_min_rule() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("raw.jsonl");
    let mut lines = Vec::new();
    for (p, h, g) in [("a", 3, 1), ("b", 1, 2), ("c", 0, 4)] {
        for i in 0..h {
            lines.push(sample(p, "human", &format!("h{i} = {i}")));
        }
        for i in 0..g {
            lines.push(sample(p, "gpt", &format!("g{i} = {i}")));
        }
    }
    // an exact duplicate disappears before balancing
    lines.push(sample("a", "gpt", "g0 = 0"));
    write_lines(&input, &lines);
    let output = dir.path().join("prepared.jsonl");
    let stdout = ok(&run(&["prepare", "--input", path_str(&input), "--output", path_str(&output)]));
    let summary: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(summary["after"]["problems"], 2);
    assert_eq!(summary["after"]["human"], 2);
    assert_eq!(summary["after"]["gpt"], 2);
    assert_eq!(summary["samples_after"].as_u64().unwrap() % 2, 0);
    assert_eq!(std::fs::read_to_string(&output).unwrap().lines().count(), 4);
}

#[test]
fn prepare_keeps_balanced_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = styled_corpus(dir.path(), 4);
    let output = dir.path().join("prepared.jsonl");
    ok(&run(&["prepare", "--input", path_str(&input), "--output", path_str(&output), "--seed", "7"]));
    let mut before: Vec<String> = std::fs::read_to_string(&input).unwrap().lines().map(String::from).collect();
    let mut after: Vec<String> = std::fs::read_to_string(&output).unwrap().lines().map(String::from).collect();
    let norm = |v: &mut Vec<String>| {
        *v = v
            .iter()
            .map(|l| serde_json::from_str::<Value>(l).unwrap().to_string())
            .collect();
        v.sort();
    };
    norm(&mut before);
    norm(&mut after);
    assert_eq!(before, after);
}

#[test]
fn train_writes_deterministic_models() {
    let dir = tempfile::tempdir().unwrap();
    let data = styled_corpus(dir.path(), 10);
    let train = |features: &str, model: &str, out: &Path| -> Value {
        let stdout = ok(&run(&[
            "train",
            "--dataset",
            path_str(&data),
            "--features",
            features,
            "--model",
            model,
            "--seeds",
            "3",
            "--set",
            "boosted.n_rounds=10",
            "--output",
            path_str(out),
        ]));
        serde_json::from_str(&stdout).unwrap()
    };
    let a = dir.path().join("a.json");
    let summary = train("whitebox", "logistic", &a);
    assert_eq!(summary["input_dim"], 7);
    let model: Value = serde_json::from_str(&std::fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(model["input_dim"], 7);
    assert_eq!(model["format_version"], 1);

    let b = dir.path().join("b.json");
    let c = dir.path().join("c.json");
    assert!(train("tfidf", "boosted", &b)["input_dim"].as_u64().unwrap() <= 1536);
    train("tfidf", "boosted", &c);
    assert_eq!(std::fs::read(&b).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn memorizing_tree_labels_training_snippet() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("two.jsonl");
    let gpt_code = "def add(a, b):\n    return a + b\n";
    write_lines(&data, &[sample("p1", "human", "x=1"), sample("p2", "gpt", gpt_code)]);
    let model = dir.path().join("tree.json");
    ok(&run(&[
        "train",
        "--dataset",
        path_str(&data),
        "--features",
        "whitebox",
        "--model",
        "cart",
        "--set",
        "balance=false",
        "--full",
        "--output",
        path_str(&model),
    ]));
    let snippet = dir.path().join("snippet.py");
    std::fs::write(&snippet, gpt_code).unwrap();
    let stdout = ok(&run(&["classify", "--model", path_str(&model), path_str(&snippet)]));
    let verdict: Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(verdict["label"], "gpt");
    assert_eq!(verdict["model_kind"], "cart");
    assert!(verdict.get("tokens").is_none());
}

#[test]
fn empty_stdin_prints_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = styled_corpus(dir.path(), 6);
    let model = dir.path().join("m.json");
    ok(&run(&[
        "train", "--dataset", path_str(&data), "--features", "whitebox", "--model", "logistic", "--output",
        path_str(&model),
    ]));
    let out = run_with_stdin(&["classify", "--model", path_str(&model)], "");
    assert_eq!(ok(&out), "");
}

/// Shared tokens at different rates: `print` is typical of human code and
/// `return` of GPT code, but both occur in each class.
fn token_rate_corpus(dir: &Path, problems: usize) -> PathBuf {
    let mut lines = Vec::new();
    for p in 0..problems {
        let id = format!("p{p}");
        lines.push(sample(&id, "human", &format!("x = {p}\nprint(x)\n")));
        lines.push(sample(&id, "human", &format!("y = {p}\nprint(y)\nreturn y\n")));
        lines.push(sample(&id, "gpt", &format!("def f():\n    return {p}\n")));
        lines.push(sample(&id, "gpt", &format!("def g():\n    print({p})\n    return {p}\n")));
    }
    let path = dir.join("rates.jsonl");
    write_lines(&path, &lines);
    path
}

#[test]
fn bayes_verdicts_and_token_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = token_rate_corpus(dir.path(), 12);
    let model = dir.path().join("bayes.json");
    ok(&run(&[
        "train",
        "--dataset",
        path_str(&data),
        "--model",
        "bayes",
        "--set",
        "bayes.tau=1",
        "--full",
        "--output",
        path_str(&model),
    ]));

    let code = "def h(z):\n    return z\n";
    let stdout = ok(&run_with_stdin(&["classify", "--model", path_str(&model)], code));
    let verdict: Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(verdict["model_kind"], "bayes");
    assert_eq!(verdict["label"], "gpt");
    let tokens = verdict["tokens"].as_array().unwrap();
    assert!(!tokens.is_empty() && tokens.len() <= 40);
    let mags: Vec<f64> = tokens.iter().map(|t| t["log_ratio"].as_f64().unwrap().abs()).collect();
    assert!(mags.windows(2).all(|w| w[0] >= w[1]));

    let out = ok(&run(&["classify", "--model", path_str(&model), "--top-tokens", "100", "-"]));
    assert_eq!(out, "");

    let csv = ok(&run(&["tokens", "--model", path_str(&model), "--top", "3"]));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("token_text,count_h,count_g,logP_h,logP_g,abs_log_discrepancy")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("print,") || rows[0].starts_with("return,"), "{rows:?}");
}

#[test]
fn evaluate_aggregates_over_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let data = styled_corpus(dir.path(), 10);
    let config = dir.path().join("run.conf");
    std::fs::write(
        &config,
        format!(
            "# forest on white-box features\ndataset = {}\nfeatures = whitebox\nmodel = forest\nforest.n_trees = 10\n",
            data.display()
        ),
    )
    .unwrap();
    let evaluate = |seeds: &str, out: &Path| -> Vec<Value> {
        ok(&run(&[
            "evaluate",
            "--config",
            path_str(&config),
            "--seeds",
            seeds,
            "--output-dir",
            path_str(out),
        ]));
        for f in ["metrics.csv", "metrics.json", "runs.json", "calibration_binned.csv", "calibration_loess.csv", "kde.csv"] {
            assert!(out.join(f).exists(), "{f}");
        }
        serde_json::from_str(&std::fs::read_to_string(out.join("runs.json")).unwrap()).unwrap()
    };
    let one = evaluate("0", &dir.path().join("one"));
    let two = evaluate("0,1", &dir.path().join("two"));
    assert_eq!(one.len(), 1);
    assert_eq!(two.len(), 2);
    assert_eq!(one[0], two[0]);

    let rows: Vec<Value> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("one/metrics.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        assert_eq!(r["n_runs"], 1);
        assert_eq!(r["std"], 0.0);
        assert_eq!(r["model"], "forest");
        assert_eq!(r["features"], "whitebox");
    }
    let csv = std::fs::read_to_string(dir.path().join("two/metrics.csv")).unwrap();
    assert!(csv.starts_with("model,features,format_variant,metric,mean,std,n_runs\n"));
}

#[test]
fn similarity_reports_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let data = styled_corpus(dir.path(), 5);
    let out_dir = dir.path().join("sim");
    let stdout = ok(&run(&[
        "similarity",
        "--dataset",
        path_str(&data),
        "--features",
        "tfidf",
        "--output-dir",
        path_str(&out_dir),
    ]));
    let summary: Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["n_pairs"].as_u64().unwrap() + summary["skipped_zero"].as_u64().unwrap(), 20);
    let mean = summary["mean"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&mean));
    let hist = std::fs::read_to_string(out_dir.join("similarity_histogram.csv")).unwrap();
    assert_eq!(hist.lines().count(), 51);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--set", "modle=cart", "--dataset", "x"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--features", "remote", "--dataset", "x"]).status.code(), Some(1));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"problem_id\":\"p\",\"origin\":\"robot\",\"code\":\"x\",\"source_dataset\":\"t\",\"formatted\":false}\n").unwrap();
    let out = run(&["prepare", "--input", path_str(&bad), "--output", path_str(&dir.path().join("o.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let missing = run(&["prepare", "--input", "/nonexistent/in.jsonl", "--output", path_str(&dir.path().join("o.jsonl"))]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
