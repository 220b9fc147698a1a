use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_larag"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "larag {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

fn results(dir: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(dir.join("results.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Aligns and builds the toy datastore under `t`.
fn toy_datastore(t: &Path, extra: &[&str]) -> PathBuf {
    ok(&[
        "align",
        "--manifest",
        s(&toy().join("datastore.jsonl")),
        "--out",
        s(&t.join("aligned")),
    ]);
    let (ds, manifest) = (t.join("ds"), t.join("aligned/manifest.jsonl"));
    let mut args = vec!["build", "--manifest", s(&manifest), "--datastore", s(&ds)];
    args.extend_from_slice(extra);
    ok(&args);
    ds
}

fn toy_query(ds: &Path, out: &Path, extra: &[&str]) -> Vec<serde_json::Value> {
    let (q, nb) = (toy().join("queries.jsonl"), toy().join("nbest.jsonl"));
    let mut args = vec![
        "query",
        "--datastore",
        s(ds),
        "--queries",
        s(&q),
        "--nbest",
        s(&nb),
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    results(out)
}

#[test]
fn stats_reports_seven_entries_for_the_toy_corpus() {
    let t = tempfile::tempdir().unwrap();
    let ds = toy_datastore(t.path(), &[]);
    let stats: serde_json::Value =
        serde_json::from_str(&ok(&["stats", "--datastore", s(&ds)])).unwrap();
    assert_eq!(stats["entry_count"], 7);
    assert_eq!(stats["sequence_count"], 2);
    assert_eq!(stats["tokenizer_kind"], "ctc");
    assert_eq!(stats["index"]["kind"], "exact");
}

#[test]
fn eval_on_identical_files_prints_zero() {
    let t = tempfile::tempdir().unwrap();
    let f = t.path().join("a.txt");
    fs::write(&f, "今天天气很好\nhello world\n").unwrap();
    let out = ok(&["eval", "--hyp", s(&f), "--ref", s(&f)]);
    assert_eq!(out.lines().next(), Some("cer 0.0"));

    let h = t.path().join("h.txt");
    fs::write(&h, "今天天气很坏\nhello world\n").unwrap();
    let out = ok(&["eval", "--hyp", s(&h), "--ref", s(&f)]);
    assert!(out.starts_with("cer 0.0588"), "{out}");
}

#[test]
fn no_prune_queries_every_position_of_a_consensus_list() {
    let t = tempfile::tempdir().unwrap();
    let ds = toy_datastore(t.path(), &[]);
    let pruned = toy_query(&ds, &t.path().join("pruned"), &[]);
    let full = toy_query(&ds, &t.path().join("full"), &["--no-prune"]);
    let consensus = |rs: &[serde_json::Value]| {
        rs.iter()
            .find(|r| r["utterance_id"] == "q-consensus")
            .cloned()
            .unwrap()
    };
    assert_eq!(consensus(&pruned)["queried_positions"], 0);
    assert_eq!(consensus(&pruned)["examples"].as_array().unwrap().len(), 0);
    assert_eq!(consensus(&full)["queried_positions"], 4);
    assert_eq!(consensus(&full)["examples"][0]["utterance_id"], "toy-b");

    let error = pruned
        .iter()
        .find(|r| r["utterance_id"] == "q-error")
        .unwrap();
    assert_eq!(error["kept_positions"], serde_json::json!([1]));
    assert_eq!(error["examples"][0]["utterance_id"], "toy-a");
}

#[test]
fn commands_are_byte_identical_on_rerun() {
    let t = tempfile::tempdir().unwrap();
    let ds = toy_datastore(t.path(), &[]);
    for run in ["a", "b"] {
        let q = t.path().join(format!("q{run}"));
        toy_query(&ds, &q, &["--vocab", s(&toy().join("vocab.txt"))]);
        ok(&[
            "prompt",
            "--query",
            s(&q),
            "--out",
            s(&t.path().join(format!("p{run}"))),
            "--hidden",
            "32",
            "--output-dim",
            "16",
        ]);
    }
    for f in ["results.jsonl", "query.json", "embeddings/q-error.bin"] {
        assert_eq!(
            fs::read(t.path().join("qa").join(f)).unwrap(),
            fs::read(t.path().join("qb").join(f)).unwrap(),
            "{f}"
        );
    }
    for f in ["prompts.jsonl", "q-error.prompt.json", "q-error.prompt.bin"] {
        assert_eq!(
            fs::read(t.path().join("pa").join(f)).unwrap(),
            fs::read(t.path().join("pb").join(f)).unwrap(),
            "{f}"
        );
    }
    let r = results(&t.path().join("qa"));
    assert_eq!(r[0]["nbest_text"][1], "ni hao shi");
}

#[test]
fn ivf_datastores_are_used_by_query_and_stats() {
    let t = tempfile::tempdir().unwrap();
    let ds = toy_datastore(
        t.path(),
        &["--index", "ivf", "--n-clusters", "2", "--n-probe", "2"],
    );
    let stats: serde_json::Value =
        serde_json::from_str(&ok(&["stats", "--datastore", s(&ds)])).unwrap();
    assert_eq!(stats["index"]["kind"], "ivf");
    assert_eq!(stats["index"]["n_clusters"], 2);
    let ivf = toy_query(&ds, &t.path().join("q"), &[]);

    let exact_dir = t.path().join("exact");
    fs::create_dir(&exact_dir).unwrap();
    let exact_ds = toy_datastore(&exact_dir, &[]);
    let exact = toy_query(&exact_ds, &exact_dir.join("q"), &[]);
    assert_eq!(ivf[0]["examples"], exact[0]["examples"]);
}

#[test]
fn saved_adapters_reproduce_prompts() {
    let t = tempfile::tempdir().unwrap();
    let ds = toy_datastore(t.path(), &[]);
    let q = t.path().join("q");
    toy_query(&ds, &q, &[]);
    let adapter = t.path().join("adapter.json");
    ok(&[
        "prompt",
        "--query",
        s(&q),
        "--out",
        s(&t.path().join("p1")),
        "--hidden",
        "16",
        "--output-dim",
        "8",
        "--activation",
        "gelu",
        "--save-adapter",
        s(&adapter),
    ]);
    ok(&[
        "prompt",
        "--query",
        s(&q),
        "--out",
        s(&t.path().join("p2")),
        "--adapter",
        s(&adapter),
        "--nbest",
        "3",
    ]);
    let p1 = fs::read(t.path().join("p1/q-error.prompt.bin")).unwrap();
    let p2 = fs::read(t.path().join("p2/q-error.prompt.bin")).unwrap();
    assert_eq!(p1, p2);
    let summary = fs::read_to_string(t.path().join("p2/prompts.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(summary.lines().next().unwrap()).unwrap();
    assert_eq!(first["hypotheses"], 3);
    assert_eq!(first["segments"], 2 * 2 + 1 + 3);
}

#[test]
fn baselines_and_leave_one_out() {
    let t = tempfile::tempdir().unwrap();
    let synth = t.path().join("synth");
    ok(&[
        "synth",
        "--out",
        s(&synth),
        "--bases",
        "12",
        "--distractors",
        "2",
        "--sigma",
        "0",
    ]);
    let ds = t.path().join("ds");
    ok(&[
        "build",
        "--manifest",
        s(&synth.join("datastore.jsonl")),
        "--datastore",
        s(&ds),
    ]);
    let truth: Vec<serde_json::Value> = fs::read_to_string(synth.join("truth.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let (queries, nbest) = (synth.join("queries.jsonl"), synth.join("nbest.jsonl"));
    let query = |strategy: &str, extra: &[&str]| {
        let out = t.path().join(format!("{strategy}{}", extra.len()));
        let mut args = vec![
            "query",
            "--datastore",
            s(&ds),
            "--queries",
            s(&queries),
            "--nbest",
            s(&nbest),
            "--out",
            s(&out),
            "--strategy",
            strategy,
        ];
        args.extend_from_slice(extra);
        ok(&args);
        results(&out)
    };
    for strategy in ["token_level", "seq_embedding"] {
        for (r, t) in query(strategy, &[]).iter().zip(&truth) {
            assert_eq!(
                r["examples"][0]["utterance_id"], t["target_utterance"],
                "{strategy}"
            );
        }
    }
    for r in query("random", &["--examples", "3"]) {
        assert_eq!(r["examples"].as_array().unwrap().len(), 3);
    }
    assert_eq!(query("text", &[]).len(), truth.len());

    // a base queried as itself never comes back when excluded
    let bases = t.path().join("bases.jsonl");
    let manifest = fs::read_to_string(synth.join("datastore.jsonl")).unwrap();
    let base_lines: Vec<&str> = manifest
        .lines()
        .filter(|l| l.contains("\"base\""))
        .collect();
    let rebased: Vec<String> = base_lines
        .iter()
        .map(|l| l.replace("features/", "synth/features/"))
        .collect();
    fs::write(&bases, rebased.join("\n")).unwrap();
    let self_nbest = t.path().join("self-nbest.jsonl");
    let lines: Vec<String> = base_lines
        .iter()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            serde_json::json!({"utterance_id": v["utterance_id"], "hypotheses": [v["transcript"]]})
                .to_string()
        })
        .collect();
    fs::write(&self_nbest, lines.join("\n")).unwrap();
    let out = t.path().join("self");
    ok(&[
        "query",
        "--datastore",
        s(&ds),
        "--queries",
        s(&bases),
        "--nbest",
        s(&self_nbest),
        "--out",
        s(&out),
        "--exclude-self",
        "--threshold",
        "0",
    ]);
    let rs = results(&out);
    assert_eq!(rs.len(), 12);
    assert!(rs
        .iter()
        .any(|r| !r["examples"].as_array().unwrap().is_empty()));
    for r in rs {
        assert!(r["examples"]
            .as_array()
            .unwrap()
            .iter()
            .all(|e| e["utterance_id"] != r["utterance_id"]));
    }
}

#[test]
fn bench_prints_a_table_and_writes_reports() {
    let t = tempfile::tempdir().unwrap();
    let out = ok(&[
        "bench",
        "--bases",
        "20",
        "--distractors",
        "2",
        "--strategies",
        "token_level,random",
        "--out",
        s(t.path()),
    ]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("strategy\tqueries\trecall@1"));
    assert!(lines[1].starts_with("token_level\t20\t"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("bench.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn errors_are_machine_readable() {
    let t = tempfile::tempdir().unwrap();
    let out = run(&["stats", "--datastore", s(&t.path().join("missing"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: CorruptFile: "));

    let out = run(&["bench", "--strategies", "dense"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["query", "--datastore", "x"]);
    assert_eq!(out.status.code(), Some(2));

    let (a, b) = (t.path().join("a"), t.path().join("b"));
    fs::write(&a, "x\ny\n").unwrap();
    fs::write(&b, "x\n").unwrap();
    let out = run(&["eval", "--hyp", s(&a), "--ref", s(&b)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: LengthMismatch: "));

    let out = run(&["bench", "--bases", "0"]);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: InvalidParams: "));
}

#[test]
fn thread_cap_comes_from_the_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_larag"))
        .env("LA_RAG_THREADS", "1")
        .args([
            "bench",
            "--bases",
            "10",
            "--distractors",
            "1",
            "--strategies",
            "token_level",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let help = ok(&["--help"]);
    assert!(help.contains("LA_RAG_THREADS"));
}
