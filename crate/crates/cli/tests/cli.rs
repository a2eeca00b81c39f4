use std::path::Path;
use std::process::{Command, Output};

fn divsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_divsel")).args(args).output().expect("spawn divsel")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = r#"{
  "input": {"source": "mixture", "spec": {"n_domains": 4, "per_domain_count": 150, "dim": 32,
            "centroid_separation": 10.0, "within_std": 0.1, "rng_seed": 0}},
  "probe_set": {"m": 300}
}"#;

fn small_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, SMALL).unwrap();
    p(&path).to_owned()
}

#[test]
fn stage_commands_reproduce_pipeline_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let full = tmp.path().join("full");
    let o = divsel(&["--config", &cfg, "--out", p(&full), "pipeline", "run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let s = tmp.path().join("stages");
    let out = p(&s);
    let f = |name: &str| p(&s.join(name)).to_owned();
    let steps: Vec<Vec<String>> = vec![
        vec!["mixture", "--per-domain", "150"].into_iter().map(String::from).collect(),
        vec!["synthesize".into()],
        vec!["cluster".into(), "--features".into(), f("embedding.feat"), "--centroids".into(), f("centroids.json")],
        vec!["probe".into(), "train-dom".into(), "--features".into(), f("embedding.feat"), "--cluster".into(), f("cluster.json")],
        vec![
            "probe".into(), "train-div".into(), "--features".into(), f("embedding.feat"),
            "--probe-set".into(), f("probe_set.json"), "--psi-dom".into(), f("psi_dom.ckpt"),
        ],
        vec![
            "score".into(), "--features".into(), f("embedding.feat"), "--psi-div".into(), f("psi_div.ckpt"),
            "--psi-dom".into(), f("psi_dom.ckpt"), "--probe-set".into(), f("probe_set.json"),
        ],
        vec!["select".into(), "--scores".into(), f("scores.json"), "--samples".into(), f("corpus.jsonl")],
    ];
    for step in steps {
        let mut args = vec!["--config", &cfg, "--out", out];
        args.extend(step.iter().map(String::as_str));
        let o = divsel(&args);
        assert_eq!(code(&o), 0, "{step:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for name in [
        "corpus.jsonl",
        "embedding.feat",
        "synthesis.json",
        "centroids.json",
        "cluster.json",
        "probe_set.json",
        "psi_dom.ckpt",
        "stage1_trace.json",
        "psi_div.ckpt",
        "stage2_trace.json",
        "scores.json",
        "selection.json",
        "selected_ids.txt",
        "selected.jsonl",
    ] {
        let a = std::fs::read(full.join(name)).unwrap();
        let b = std::fs::read(s.join(name)).unwrap();
        assert!(a == b, "{name} differs between pipeline run and stage commands");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let mut summaries = Vec::new();
    for threads in ["1", "4"] {
        let dir = tmp.path().join(threads);
        let o = divsel(&["--config", &cfg, "--threads", threads, "--seed", "7", "--out", p(&dir), "pipeline", "run"]);
        assert_eq!(code(&o), 0);
        summaries.push(String::from_utf8(o.stdout).unwrap());
        let ckpt = std::fs::read(dir.join("psi_div.ckpt")).unwrap();
        summaries.push(format!("{ckpt:?}"));
    }
    assert_eq!(summaries[0], summaries[2]);
    assert_eq!(summaries[1], summaries[3]);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = p(tmp.path());

    // i/o
    let o = divsel(&["--out", out, "cluster", "--features", "/nonexistent.feat", "--centroids", "/nonexistent.json"]);
    assert_eq!(code(&o), 4);
    let o = divsel(&["--config", "/nonexistent/config.json", "pipeline", "run"]);
    assert_eq!(code(&o), 4);

    // validation
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&divsel(&["--config", p(&bad), "pipeline", "run"])), 2);
    assert_eq!(code(&divsel(&["--out", out, "harness", "pool", "--label", "eighty"])), 2);
    assert_eq!(code(&divsel(&["--out", out, "mixture", "--domains", "0"])), 2);
    assert_eq!(code(&divsel(&["no-such-command"])), 2);

    // stage failure: more probe samples than the corpus holds
    let huge = tmp.path().join("huge.json");
    std::fs::write(&huge, r#"{"probe_set": {"m": 100000}}"#).unwrap();
    let o = divsel(&["--config", p(&huge), "--out", out, "pipeline", "run"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage probe_set failed"));
}

#[test]
fn oracle_and_grad_check_pass() {
    for args in [&["oracle", "prop1"][..], &["oracle", "prop2"], &["probe", "grad-check", "--draws", "2"]] {
        let o = divsel(args);
        assert_eq!(code(&o), 0, "{args:?}");
        let text = String::from_utf8(o.stdout).unwrap();
        serde_json::from_str::<serde_json::Value>(text.lines().last().unwrap()).unwrap();
    }
}

#[test]
fn oracle_reads_instance_file() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("inst.json");
    std::fs::write(&inst, r#"{"support": ["a", "b"], "p_xc": [[0.25, 0.25], [0.5, 0.0]], "lambda": [1.0, 1.0]}"#).unwrap();
    let o = divsel(&["oracle", "prop1", "--instance", p(&inst)]);
    assert_eq!(code(&o), 0);
    let rows: serde_json::Value = serde_json::from_str(String::from_utf8(o.stdout).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);

    std::fs::write(&inst, r#"{"support": ["a"], "p_xc": [[0.3, 0.3]], "lambda": [1.0, 1.0]}"#).unwrap();
    assert_eq!(code(&divsel(&["oracle", "prop2", "--instance", p(&inst)])), 2);
}

#[test]
fn harness_control_separates_controls() {
    let tmp = tempfile::tempdir().unwrap();
    let out = p(tmp.path());
    let acc = |aligned: bool| {
        let mut args = vec!["--out", out, "harness", "control"];
        if aligned {
            args.push("--aligned");
        }
        let o = divsel(&args);
        assert_eq!(code(&o), 0);
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        v["holdout_accuracy"].as_f64().unwrap()
    };
    assert!(acc(false) <= 0.45);
    assert!(acc(true) >= 0.95);
}
